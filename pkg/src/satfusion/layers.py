"""Neural layers: embeddings, GRU, additive attention pooling, dense.

Layers own their parameters and operate on the autograd tensors.  Batched
paths take time-major flattened inputs so the per-step work stays inside a
few large matrix products; the 2-D single-sequence entry points wrap the
batched path with batch size one.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import autograd as ag
from .autograd import Parameter, Tensor


class LayerKind(str, Enum):
    EMBEDDING = "EMBEDDING"
    GRU = "GRU"
    ATTENTION_POOL = "ATTENTION_POOL"
    DENSE = "DENSE"
    SIGMOID = "SIGMOID"
    CONCAT = "CONCAT"


ACTIVATIONS = ("none", "tanh", "relu")


@dataclass(frozen=True)
class LayerSpec:
    kind: LayerKind
    input_dim: int
    output_dim: int
    activation: str = "none"
    vocab_size: int | None = None

    def __post_init__(self) -> None:
        if self.input_dim <= 0 or self.output_dim <= 0:
            raise ValueError(f"layer dimensions must be positive: {self}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.kind is LayerKind.EMBEDDING and (self.vocab_size is None or self.vocab_size < 2):
            raise ValueError("embedding vocab size must be >= 2 (padding + OOV)")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "input_dim": self.input_dim,
            "output_dim": self.output_dim,
            "activation": self.activation,
            "vocab_size": self.vocab_size,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "LayerSpec":
        return cls(
            kind=LayerKind(data["kind"]),
            input_dim=int(data["input_dim"]),
            output_dim=int(data["output_dim"]),
            activation=data.get("activation", "none"),
            vocab_size=data.get("vocab_size"),
        )


def uniform_init(rng: np.random.Generator, fan_in: int, shape: tuple[int, ...]) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def _check_finite(values: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(values)):
        raise ValueError(f"{what} contains non-finite values")


class Embedding:
    """Token-id to vector lookup table."""

    def __init__(self, name: str, vocab_size: int, dim: int, rng: np.random.Generator):
        if vocab_size < 2:
            raise ValueError("embedding vocab size must be >= 2 (padding + OOV)")
        self.name = name
        self.vocab_size = vocab_size
        self.dim = dim
        self.table = Parameter(f"{name}.table", uniform_init(rng, dim, (vocab_size, dim)))

    @property
    def spec(self) -> LayerSpec:
        return LayerSpec(LayerKind.EMBEDDING, 1, self.dim, vocab_size=self.vocab_size)

    def parameters(self) -> list[Parameter]:
        return [self.table]

    def __call__(self, token_ids: np.ndarray) -> Tensor:
        ids = np.asarray(token_ids, dtype=np.intp)
        if ids.size and (ids.min() < 0 or ids.max() >= self.vocab_size):
            raise ValueError(
                f"{self.name}: token id out of range for vocab of {self.vocab_size}"
            )
        if ids.size == 0:
            return Tensor(np.zeros((0, self.dim)))
        return ag.gather_rows(self.table.tensor, ids)


class GRU:
    """Single-layer forward GRU.

    Gates follow the standard recurrence: update z and reset r are sigmoids
    of affine maps, the candidate state is tanh(W_c x + U_c (r*h) + b_c), and
    h' = (1 - z) * h + z * candidate.  Input projections for all steps are
    computed in one matrix product.
    """

    def __init__(self, name: str, input_size: int, hidden_size: int, rng: np.random.Generator):
        self.name = name
        self.input_size = input_size
        self.hidden_size = hidden_size
        h = hidden_size
        self.w_gates = Parameter(f"{name}.w_gates", uniform_init(rng, input_size, (input_size, 3 * h)))
        self.u_zr = Parameter(f"{name}.u_zr", uniform_init(rng, h, (h, 2 * h)))
        self.u_c = Parameter(f"{name}.u_c", uniform_init(rng, h, (h, h)))
        self.bias = Parameter(f"{name}.bias", np.zeros(3 * h))

    @property
    def spec(self) -> LayerSpec:
        return LayerSpec(LayerKind.GRU, self.input_size, self.hidden_size)

    def parameters(self) -> list[Parameter]:
        return [self.w_gates, self.u_zr, self.u_c, self.bias]

    def _step(self, gx_t: Tensor, h: Tensor, mask_t: np.ndarray | None) -> Tensor:
        hsize = self.hidden_size
        hzr = ag.matmul(h, self.u_zr.tensor)
        z = ag.sigmoid(ag.add(ag.narrow(gx_t, 1, 0, hsize), ag.narrow(hzr, 1, 0, hsize)))
        r = ag.sigmoid(ag.add(ag.narrow(gx_t, 1, hsize, hsize), ag.narrow(hzr, 1, hsize, hsize)))
        cand_in = ag.add(ag.narrow(gx_t, 1, 2 * hsize, hsize), ag.matmul(ag.mul(r, h), self.u_c.tensor))
        cand = ag.tanh(cand_in)
        h_next = ag.add(h, ag.mul(z, ag.sub(cand, h)))
        if mask_t is not None:
            # Padded steps carry the previous state forward unchanged.
            h_next = ag.add(h, ag.mul(ag.sub(h_next, h), Tensor(mask_t)))
        return h_next

    def run(
        self,
        x_flat: Tensor,
        steps: int,
        batch: int,
        mask: np.ndarray | None = None,
    ) -> list[Tensor]:
        """Run the recurrence over time-major flattened input.

        ``x_flat`` has shape (steps * batch, input_size) with the rows of step
        t occupying the contiguous block [t*batch, (t+1)*batch).  ``mask`` has
        shape (steps, batch, 1) when sequences are padded.  Returns the hidden
        state tensor of every step.
        """
        gx_all = ag.add(ag.matmul(x_flat, self.w_gates.tensor), self.bias.tensor)
        h = Tensor(np.zeros((batch, self.hidden_size)))
        states: list[Tensor] = []
        for t in range(steps):
            gx_t = ag.narrow(gx_all, 0, t * batch, batch)
            h = self._step(gx_t, h, None if mask is None else mask[t])
            states.append(h)
        return states

    def forward(self, inputs: Tensor) -> Tensor:
        """Encode a single (length, input_size) sequence to (length, hidden)."""
        if inputs.ndim != 2 or inputs.shape[1] != self.input_size:
            raise ValueError(
                f"{self.name}: expected (len, {self.input_size}) input, got {inputs.shape}"
            )
        if inputs.shape[0] < 1:
            raise ValueError(f"{self.name}: sequence must have at least one step")
        _check_finite(inputs.values, f"{self.name} input")
        states = self.run(inputs, steps=inputs.shape[0], batch=1)
        return ag.concat(states, axis=0)


class AttentionPool:
    """Additive attention with a learned context vector.

    Scores are e_i = v . tanh(W h_i + b); the output is the softmax-weighted
    sum of the states.
    """

    def __init__(self, name: str, dim: int, rng: np.random.Generator):
        self.name = name
        self.dim = dim
        self.w = Parameter(f"{name}.w", uniform_init(rng, dim, (dim, dim)))
        self.b = Parameter(f"{name}.b", np.zeros(dim))
        self.v = Parameter(f"{name}.v", uniform_init(rng, dim, (dim, 1)))

    @property
    def spec(self) -> LayerSpec:
        return LayerSpec(LayerKind.ATTENTION_POOL, self.dim, self.dim)

    def parameters(self) -> list[Parameter]:
        return [self.w, self.b, self.v]

    def _scores(self, states: Tensor) -> Tensor:
        hidden = ag.tanh(ag.add(ag.matmul(states, self.w.tensor), self.b.tensor))
        return ag.matmul(hidden, self.v.tensor)

    def pool_steps(self, states: list[Tensor], mask: np.ndarray | None = None) -> Tensor:
        """Pool per-step (batch, dim) states into one (batch, dim) vector.

        ``mask`` has shape (batch, steps); padded steps get zero weight.
        """
        score_cols = [self._scores(h) for h in states]
        scores = ag.concat(score_cols, axis=1)
        weights = ag.softmax(scores, axis=1, mask=mask)
        pooled = ag.mul(ag.narrow(weights, 1, 0, 1), states[0])
        for t in range(1, len(states)):
            pooled = ag.add(pooled, ag.mul(ag.narrow(weights, 1, t, 1), states[t]))
        return pooled

    def forward(self, states: Tensor) -> Tensor:
        """Pool a single (length, dim) state sequence into a (dim,) vector."""
        if states.ndim != 2 or states.shape[1] != self.dim:
            raise ValueError(f"{self.name}: expected (len, {self.dim}) states, got {states.shape}")
        if states.shape[0] < 1:
            raise ValueError(f"{self.name}: need at least one state")
        _check_finite(states.values, f"{self.name} input")
        scores = ag.reshape(self._scores(states), (1, states.shape[0]))
        weights = ag.softmax(scores, axis=1)
        return ag.reshape(ag.matmul(weights, states), (self.dim,))

    def weights_for(self, states: Tensor) -> np.ndarray:
        """Attention weights over a single sequence (diagnostics and tests)."""
        scores = ag.reshape(self._scores(states), (1, states.shape[0]))
        return ag.softmax(scores, axis=1).values[0]


class Dense:
    """Affine map with optional tanh or relu activation."""

    def __init__(
        self,
        name: str,
        input_size: int,
        output_size: int,
        rng: np.random.Generator,
        activation: str = "none",
    ):
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        self.name = name
        self.input_size = input_size
        self.output_size = output_size
        self.activation = activation
        self.w = Parameter(f"{name}.w", uniform_init(rng, input_size, (input_size, output_size)))
        self.b = Parameter(f"{name}.b", np.zeros(output_size))

    @property
    def spec(self) -> LayerSpec:
        return LayerSpec(LayerKind.DENSE, self.input_size, self.output_size, self.activation)

    def parameters(self) -> list[Parameter]:
        return [self.w, self.b]

    def __call__(self, x: Tensor) -> Tensor:
        if x.ndim != 2 or x.shape[1] != self.input_size:
            raise ValueError(
                f"{self.name}: input shape {x.shape} incompatible with weights "
                f"{self.w.values.shape}"
            )
        out = ag.add(ag.matmul(x, self.w.tensor), self.b.tensor)
        if self.activation == "tanh":
            return ag.tanh(out)
        if self.activation == "relu":
            return ag.relu(out)
        return out
