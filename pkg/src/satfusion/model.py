"""Hierarchical satisfaction predictor.

Each turn is encoded by running user and agent text through shared word
embeddings, a GRU, and attention pooling, then concatenating the two sentence
vectors with turn-level categorical embeddings and a nonlinear encoding of
turn-level numerical features.  A second GRU + attention encodes the turn
sequence; the session vector is concatenated with session-level feature
encodings (plus the raw session numericals as a wide path) and passed through
two nonlinear dense layers and a sigmoid to produce the probability of
dissatisfaction.

Two variants share the architecture: FP is trained on explicit-feedback
labels and strips elicitation turns from its input, HP is trained on
annotation labels and covers all traffic.
"""
from __future__ import annotations

import hashlib
import json
from collections import Counter
from dataclasses import asdict, dataclass
from enum import Enum
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autograd as ag
from .autograd import Parameter, Tensor
from .checkpoint import load_checkpoint, save_checkpoint
from .dialog import Session, Turn, strip_elicitation, tokenize
from .errors import CheckpointError, ConfigError, DataError
from .layers import AttentionPool, Dense, Embedding, GRU, LayerSpec
from .metrics import pr_auc
from .optim import Adam

PAD_ID = 0
OOV_ID = 1
CAT_OOV_ID = 0

SPLIT_RATIOS = (0.8, 0.1, 0.1)


class ModelKind(str, Enum):
    FP = "FP"
    HP = "HP"


@dataclass(frozen=True)
class ModelConfig:
    d_emb: int = 64
    d_turn_gru: int = 96
    d_session_gru: int = 96
    dense_sizes: tuple[int, int] = (64, 32)
    d_cat_emb: int = 8
    d_num_enc: int = 16
    vocab_min_freq: int = 2
    max_turns: int = 10
    max_tokens: int = 32
    class_weight_positive: float | None = None  # None: negatives/positives ratio
    learning_rate: float = 1e-3
    grad_clip_norm: float = 5.0
    batch_size: int = 64
    epochs: int = 12
    early_stop_patience: int = 3
    seed: int = 0

    def __post_init__(self) -> None:
        dims = (
            self.d_emb,
            self.d_turn_gru,
            self.d_session_gru,
            self.d_cat_emb,
            self.d_num_enc,
            self.max_turns,
            self.max_tokens,
            self.batch_size,
            self.epochs,
            *self.dense_sizes,
        )
        if any(d <= 0 for d in dims):
            raise ConfigError(f"model dimensions must be positive: {self}")
        if len(self.dense_sizes) != 2:
            raise ConfigError("dense_sizes must name exactly two layers")
        if self.class_weight_positive is not None and self.class_weight_positive <= 0:
            raise ConfigError("class_weight_positive must be positive")
        object.__setattr__(self, "dense_sizes", tuple(self.dense_sizes))


@dataclass(frozen=True)
class Prediction:
    p: float
    session_id: str

    def __post_init__(self) -> None:
        if not 0.0 <= self.p <= 1.0:
            raise DataError(f"prediction probability out of range: {self.p}")


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    val_loss: float
    val_pr_auc: float | None

    def to_dict(self) -> dict:
        return {
            "epoch": self.epoch,
            "train_loss": self.train_loss,
            "val_loss": self.val_loss,
            "val_pr_auc": self.val_pr_auc,
        }


def split_dataset(items: Sequence, seed: int, ratios=SPLIT_RATIOS) -> tuple[list, list, list]:
    """Seeded train/validation/test split with floor-sized first two parts."""
    rng = np.random.default_rng([seed, 17])
    order = rng.permutation(len(items))
    n_train = int(len(items) * ratios[0])
    n_val = int(len(items) * ratios[1])
    train = [items[i] for i in order[:n_train]]
    val = [items[i] for i in order[n_train : n_train + n_val]]
    test = [items[i] for i in order[n_train + n_val :]]
    return train, val, test


@dataclass
class FeatureSpace:
    """Vocabularies and normalization statistics fixed at training time."""

    vocab: dict[str, int]
    turn_cat: dict[str, dict[str, int]]
    sess_cat: dict[str, dict[str, int]]
    turn_num_names: tuple[str, ...]
    sess_num_names: tuple[str, ...]
    turn_num_mean: np.ndarray
    turn_num_std: np.ndarray
    sess_num_mean: np.ndarray
    sess_num_std: np.ndarray

    def content_hash(self) -> str:
        ordered_vocab = sorted(self.vocab, key=self.vocab.get)
        payload = json.dumps(
            {
                "vocab": ordered_vocab,
                "turn_cat": {f: sorted(v, key=v.get) for f, v in self.turn_cat.items()},
                "sess_cat": {f: sorted(v, key=v.get) for f, v in self.sess_cat.items()},
                "turn_num_names": list(self.turn_num_names),
                "sess_num_names": list(self.sess_num_names),
            },
            sort_keys=True,
        )
        return hashlib.sha256(payload.encode()).hexdigest()


def build_vocab(texts: Sequence[str], min_freq: int) -> dict[str, int]:
    counts: Counter[str] = Counter()
    for text in texts:
        counts.update(tokenize(text))
    kept = [t for t, c in counts.items() if c >= min_freq]
    kept.sort(key=lambda t: (-counts[t], t))
    vocab = {"<pad>": PAD_ID, "<oov>": OOV_ID}
    for token in kept:
        vocab[token] = len(vocab)
    return vocab


def _categorical_vocab(values: Sequence[str]) -> dict[str, int]:
    mapping = {"<oov>": CAT_OOV_ID}
    for value in sorted(set(values)):
        mapping[value] = len(mapping)
    return mapping


def build_features(sessions: Sequence[Session], min_freq: int) -> FeatureSpace:
    texts: list[str] = []
    turn_cat_values: dict[str, list[str]] = {}
    sess_cat_values: dict[str, list[str]] = {}
    turn_num_names: set[str] = set()
    sess_num_names: set[str] = set()
    for session in sessions:
        for turn in session.turns:
            texts.append(turn.user_text)
            texts.append(turn.agent_text)
            for name, value in turn.meta_categorical.items():
                turn_cat_values.setdefault(name, []).append(value)
            turn_num_names.update(turn.meta_numerical)
        for name, value in session.session_categorical.items():
            sess_cat_values.setdefault(name, []).append(value)
        sess_num_names.update(session.session_numerical)

    t_names = tuple(sorted(turn_num_names))
    s_names = tuple(sorted(sess_num_names))
    turn_rows = [
        [turn.meta_numerical.get(n, 0.0) for n in t_names]
        for session in sessions
        for turn in session.turns
    ]
    sess_rows = [[s.session_numerical.get(n, 0.0) for n in s_names] for s in sessions]

    def stats(rows: list[list[float]], width: int) -> tuple[np.ndarray, np.ndarray]:
        if not rows or width == 0:
            return np.zeros(width), np.ones(width)
        arr = np.asarray(rows, dtype=np.float64)
        mean = arr.mean(axis=0)
        std = arr.std(axis=0)
        std[std < 1e-12] = 1.0
        return mean, std

    t_mean, t_std = stats(turn_rows, len(t_names))
    s_mean, s_std = stats(sess_rows, len(s_names))
    return FeatureSpace(
        vocab=build_vocab(texts, min_freq),
        turn_cat={f: _categorical_vocab(v) for f, v in sorted(turn_cat_values.items())},
        sess_cat={f: _categorical_vocab(v) for f, v in sorted(sess_cat_values.items())},
        turn_num_names=t_names,
        sess_num_names=s_names,
        turn_num_mean=t_mean,
        turn_num_std=t_std,
        sess_num_mean=s_mean,
        sess_num_std=s_std,
    )


class _EncodedSession:
    """Integer/float views of one session, ready for batching."""

    __slots__ = (
        "user_tokens",
        "agent_tokens",
        "turn_cat_ids",
        "turn_num",
        "sess_cat_ids",
        "sess_num",
        "label",
        "session_id",
    )

    def __init__(self, user_tokens, agent_tokens, turn_cat_ids, turn_num, sess_cat_ids, sess_num, label, session_id):
        self.user_tokens = user_tokens
        self.agent_tokens = agent_tokens
        self.turn_cat_ids = turn_cat_ids
        self.turn_num = turn_num
        self.sess_cat_ids = sess_cat_ids
        self.sess_num = sess_num
        self.label = label
        self.session_id = session_id

    @property
    def num_turns(self) -> int:
        return len(self.user_tokens)


class SatisfactionModel:
    def __init__(self, config: ModelConfig, kind: ModelKind, features: FeatureSpace):
        self.config = config
        self.kind = ModelKind(kind)
        self.features = features
        self.history: list[EpochStats] = []
        rng = np.random.default_rng([config.seed, 1 if self.kind is ModelKind.FP else 2])

        cfg = config
        self.text_emb = Embedding("text_emb", len(features.vocab), cfg.d_emb, rng)
        self.user_gru = GRU("user_gru", cfg.d_emb, cfg.d_turn_gru, rng)
        self.user_attn = AttentionPool("user_attn", cfg.d_turn_gru, rng)
        self.agent_gru = GRU("agent_gru", cfg.d_emb, cfg.d_turn_gru, rng)
        self.agent_attn = AttentionPool("agent_attn", cfg.d_turn_gru, rng)
        self.turn_cat_emb = {
            name: Embedding(f"turn_cat.{name}", max(2, len(vocab) + 1), cfg.d_cat_emb, rng)
            for name, vocab in features.turn_cat.items()
        }
        self.turn_num_dense = (
            Dense("turn_num_dense", len(features.turn_num_names), cfg.d_num_enc, rng, "tanh")
            if features.turn_num_names
            else None
        )
        self.turn_dim = (
            2 * cfg.d_turn_gru
            + len(self.turn_cat_emb) * cfg.d_cat_emb
            + (cfg.d_num_enc if self.turn_num_dense else 0)
        )
        self.session_gru = GRU("session_gru", self.turn_dim, cfg.d_session_gru, rng)
        self.session_attn = AttentionPool("session_attn", cfg.d_session_gru, rng)
        self.sess_cat_emb = {
            name: Embedding(f"sess_cat.{name}", max(2, len(vocab) + 1), cfg.d_cat_emb, rng)
            for name, vocab in features.sess_cat.items()
        }
        self.sess_num_dense = (
            Dense("sess_num_dense", len(features.sess_num_names), cfg.d_num_enc, rng, "tanh")
            if features.sess_num_names
            else None
        )
        self.session_dim = (
            cfg.d_session_gru
            + len(self.sess_cat_emb) * cfg.d_cat_emb
            + (cfg.d_num_enc if self.sess_num_dense else 0)
        )
        head_in = self.session_dim + len(features.sess_num_names)
        self.head1 = Dense("head1", head_in, cfg.dense_sizes[0], rng, "tanh")
        self.head2 = Dense("head2", cfg.dense_sizes[0], cfg.dense_sizes[1], rng, "tanh")
        self.head_out = Dense("head_out", cfg.dense_sizes[1], 1, rng, "none")

    # -- parameter plumbing -------------------------------------------------

    def _layers(self) -> list:
        layers = [self.text_emb, self.user_gru, self.user_attn, self.agent_gru, self.agent_attn]
        layers.extend(self.turn_cat_emb[name] for name in sorted(self.turn_cat_emb))
        if self.turn_num_dense:
            layers.append(self.turn_num_dense)
        layers.extend([self.session_gru, self.session_attn])
        layers.extend(self.sess_cat_emb[name] for name in sorted(self.sess_cat_emb))
        if self.sess_num_dense:
            layers.append(self.sess_num_dense)
        layers.extend([self.head1, self.head2, self.head_out])
        return layers

    def parameters(self) -> list[Parameter]:
        params: list[Parameter] = []
        for layer in self._layers():
            params.extend(layer.parameters())
        names = [p.name for p in params]
        assert len(names) == len(set(names)), "parameter names must be unique"
        return params

    def layer_specs(self) -> list[LayerSpec]:
        return [layer.spec for layer in self._layers()]

    # -- encoding -----------------------------------------------------------

    def _token_ids(self, text: str) -> np.ndarray:
        vocab = self.features.vocab
        ids = [vocab.get(tok, OOV_ID) for tok in tokenize(text)[: self.config.max_tokens]]
        if not ids:
            ids = [PAD_ID]
        return np.asarray(ids, dtype=np.intp)

    def _turn_window(self, session: Session) -> list[Turn]:
        # Keep the target turn plus its nearest neighbors.
        max_turns = self.config.max_turns
        if len(session.turns) <= max_turns:
            return list(session.turns)
        start = session.target_index - (max_turns - 1) // 2
        start = min(max(start, 0), len(session.turns) - max_turns)
        return list(session.turns[start : start + max_turns])

    def encode_inputs(self, session: Session) -> _EncodedSession:
        turns = self._turn_window(session)
        f = self.features
        user_tokens = [self._token_ids(t.user_text) for t in turns]
        agent_tokens = [self._token_ids(t.agent_text) for t in turns]
        cat_ids = np.zeros((len(turns), len(f.turn_cat)), dtype=np.intp)
        for j, name in enumerate(f.turn_cat):
            vocab = f.turn_cat[name]
            for i, turn in enumerate(turns):
                cat_ids[i, j] = vocab.get(turn.meta_categorical.get(name, ""), CAT_OOV_ID)
        num = np.zeros((len(turns), len(f.turn_num_names)))
        for j, name in enumerate(f.turn_num_names):
            for i, turn in enumerate(turns):
                num[i, j] = turn.meta_numerical.get(name, f.turn_num_mean[j])
        if f.turn_num_names:
            num = (num - f.turn_num_mean) / f.turn_num_std
        sess_cat = np.asarray(
            [
                f.sess_cat[name].get(session.session_categorical.get(name, ""), CAT_OOV_ID)
                for name in f.sess_cat
            ],
            dtype=np.intp,
        )
        sess_num = np.asarray(
            [session.session_numerical.get(name, f.sess_num_mean[j]) for j, name in enumerate(f.sess_num_names)]
        )
        if f.sess_num_names:
            sess_num = (sess_num - f.sess_num_mean) / f.sess_num_std
        return _EncodedSession(
            user_tokens,
            agent_tokens,
            cat_ids,
            num,
            sess_cat,
            sess_num,
            session.label,
            session.session_id,
        )

    def _encode_texts(self, token_lists: list[np.ndarray], gru: GRU, attn: AttentionPool) -> Tensor:
        """Encode M token sequences into an (M, d_turn_gru) matrix."""
        m = len(token_lists)
        length = max(len(t) for t in token_lists)
        ids = np.full((length, m), PAD_ID, dtype=np.intp)
        step_mask = np.zeros((length, m, 1))
        for col, tokens in enumerate(token_lists):
            ids[: len(tokens), col] = tokens
            step_mask[: len(tokens), col, 0] = 1.0
        emb = self.text_emb(ids.reshape(-1))
        states = gru.run(emb, steps=length, batch=m, mask=step_mask)
        return attn.pool_steps(states, mask=step_mask[:, :, 0].T)

    def _forward_turn_vectors(self, batch: list[_EncodedSession], t_max: int) -> Tensor:
        """Encode all turns of the batch into a (B * t_max, turn_dim) matrix."""
        user_texts: list[np.ndarray] = []
        agent_texts: list[np.ndarray] = []
        pad = np.asarray([PAD_ID], dtype=np.intp)
        for enc in batch:
            user_texts.extend(enc.user_tokens)
            user_texts.extend([pad] * (t_max - enc.num_turns))
            agent_texts.extend(enc.agent_tokens)
            agent_texts.extend([pad] * (t_max - enc.num_turns))
        user_vec = self._encode_texts(user_texts, self.user_gru, self.user_attn)
        agent_vec = self._encode_texts(agent_texts, self.agent_gru, self.agent_attn)
        parts = [user_vec, agent_vec]

        f = self.features
        m = len(batch) * t_max
        if f.turn_cat:
            cat_ids = np.zeros((m, len(f.turn_cat)), dtype=np.intp)
            for b, enc in enumerate(batch):
                cat_ids[b * t_max : b * t_max + enc.num_turns] = enc.turn_cat_ids
            for j, name in enumerate(f.turn_cat):
                parts.append(self.turn_cat_emb[name](cat_ids[:, j]))
        if self.turn_num_dense:
            num = np.zeros((m, len(f.turn_num_names)))
            for b, enc in enumerate(batch):
                num[b * t_max : b * t_max + enc.num_turns] = enc.turn_num
            parts.append(self.turn_num_dense(Tensor(num)))
        return ag.concat(parts, axis=1)

    def _forward_session_encoding(self, batch: list[_EncodedSession]) -> Tensor:
        """Session vectors (B, session_dim) for a batch of encoded sessions."""
        b_size = len(batch)
        t_max = max(enc.num_turns for enc in batch)
        turn_vec = self._forward_turn_vectors(batch, t_max)
        # Rows are batch-major (b * t_max + t); the recurrence needs
        # time-major blocks.
        idx = np.arange(t_max * b_size)
        perm = (idx % b_size) * t_max + idx // b_size
        x_sess = ag.gather_rows(turn_vec, perm)
        step_mask = np.zeros((t_max, b_size, 1))
        for b, enc in enumerate(batch):
            step_mask[: enc.num_turns, b, 0] = 1.0
        states = self.session_gru.run(x_sess, steps=t_max, batch=b_size, mask=step_mask)
        sess_vec = self.session_attn.pool_steps(states, mask=step_mask[:, :, 0].T)
        parts = [sess_vec]
        f = self.features
        if f.sess_cat:
            for j, name in enumerate(f.sess_cat):
                ids = np.asarray([enc.sess_cat_ids[j] for enc in batch], dtype=np.intp)
                parts.append(self.sess_cat_emb[name](ids))
        if self.sess_num_dense:
            nums = np.stack([enc.sess_num for enc in batch])
            parts.append(self.sess_num_dense(Tensor(nums)))
        return ag.concat(parts, axis=1)

    def _forward_logits(self, batch: list[_EncodedSession]) -> Tensor:
        encoding = self._forward_session_encoding(batch)
        if self.features.sess_num_names:
            wide = Tensor(np.stack([enc.sess_num for enc in batch]))
            encoding = ag.concat([encoding, wide], axis=1)
        hidden = self.head2(self.head1(encoding))
        return ag.reshape(self.head_out(hidden), (len(batch),))

    # -- public encoding/prediction ------------------------------------------

    def encode_turn(self, turn: Turn) -> Tensor:
        """Vector for one turn: text vectors + categorical + numeric encodings."""
        placeholder = Session(
            turns=(turn,),
            target_index=0,
            feedback="NONE_ELICITED",
            segment=self._placeholder_segment(turn),
        )
        enc = self.encode_inputs(placeholder)
        return ag.reshape(self._forward_turn_vectors([enc], 1), (self.turn_dim,))

    @staticmethod
    def _placeholder_segment(turn: Turn):
        from .dialog import Segment, domain_of

        intent = turn.intent or "unknown"
        return Segment(intent=intent, domain=domain_of(intent), eligible_for_feedback=False)

    def encode_session(self, session: Session) -> Tensor:
        if not session.turns:
            raise DataError("cannot encode an empty session")
        enc = self.encode_inputs(session)
        return ag.reshape(self._forward_session_encoding([enc]), (self.session_dim,))

    def _prepare(self, session: Session) -> Session:
        return strip_elicitation(session) if self.kind is ModelKind.FP else session

    def predict_batch(self, sessions: Sequence[Session], batch_size: int = 256) -> np.ndarray:
        """Dissatisfaction probabilities for many sessions."""
        encoded = [self.encode_inputs(self._prepare(s)) for s in sessions]
        return self._predict_encoded(encoded, batch_size)

    def _predict_encoded(self, encoded: list[_EncodedSession], batch_size: int = 256) -> np.ndarray:
        probs = np.empty(len(encoded))
        for start in range(0, len(encoded), batch_size):
            chunk = encoded[start : start + batch_size]
            logits = self._forward_logits(chunk)
            probs[start : start + len(chunk)] = ag.sigmoid(logits).values
        return probs

    def _logits_encoded(self, encoded: list[_EncodedSession], batch_size: int = 256) -> np.ndarray:
        out = np.empty(len(encoded))
        for start in range(0, len(encoded), batch_size):
            chunk = encoded[start : start + batch_size]
            out[start : start + len(chunk)] = self._forward_logits(chunk).values
        return out

    def predict(self, session: Session) -> Prediction:
        p = float(self.predict_batch([session])[0])
        return Prediction(p=p, session_id=session.session_id)

    # -- persistence ----------------------------------------------------------

    def save(self, path: str | Path) -> None:
        f = self.features
        header = {
            "kind": self.kind.value,
            "config": asdict(self.config),
            "features": {
                "vocab": sorted(f.vocab, key=f.vocab.get),
                "turn_cat": {n: sorted(v, key=v.get) for n, v in f.turn_cat.items()},
                "sess_cat": {n: sorted(v, key=v.get) for n, v in f.sess_cat.items()},
                "turn_num_names": list(f.turn_num_names),
                "sess_num_names": list(f.sess_num_names),
            },
            "vocab_hash": f.content_hash(),
            "layer_specs": [spec.to_dict() for spec in self.layer_specs()],
        }
        arrays = {p.name: p.values for p in self.parameters()}
        arrays["stats/turn_num_mean"] = f.turn_num_mean
        arrays["stats/turn_num_std"] = f.turn_num_std
        arrays["stats/sess_num_mean"] = f.sess_num_mean
        arrays["stats/sess_num_std"] = f.sess_num_std
        save_checkpoint(path, header, arrays)

    @classmethod
    def load(cls, path: str | Path) -> "SatisfactionModel":
        header, arrays = load_checkpoint(path)
        try:
            raw = header["features"]
            config_dict = dict(header["config"])
            config_dict["dense_sizes"] = tuple(config_dict["dense_sizes"])
            config = ModelConfig(**config_dict)
            kind = ModelKind(header["kind"])
            declared_hash = header["vocab_hash"]
        except (KeyError, TypeError, ValueError) as exc:
            raise CheckpointError(f"{path}: malformed model header: {exc}") from exc
        features = FeatureSpace(
            vocab={t: i for i, t in enumerate(raw["vocab"])},
            turn_cat={n: {v: i for i, v in enumerate(vals)} for n, vals in raw["turn_cat"].items()},
            sess_cat={n: {v: i for i, v in enumerate(vals)} for n, vals in raw["sess_cat"].items()},
            turn_num_names=tuple(raw["turn_num_names"]),
            sess_num_names=tuple(raw["sess_num_names"]),
            turn_num_mean=arrays["stats/turn_num_mean"],
            turn_num_std=arrays["stats/turn_num_std"],
            sess_num_mean=arrays["stats/sess_num_mean"],
            sess_num_std=arrays["stats/sess_num_std"],
        )
        if features.content_hash() != declared_hash:
            raise CheckpointError(f"{path}: vocabulary hash mismatch; refusing to load")
        model = cls(config, kind, features)
        for param in model.parameters():
            if param.name not in arrays:
                raise CheckpointError(f"{path}: missing parameter {param.name}")
            stored = arrays[param.name]
            if stored.shape != param.values.shape:
                raise CheckpointError(
                    f"{path}: parameter {param.name} has shape {stored.shape}, "
                    f"expected {param.values.shape}"
                )
            param.values = stored
        return model


def _weighted_bce_values(logits: np.ndarray, labels: np.ndarray, weights: np.ndarray) -> float:
    per = np.maximum(logits, 0.0) - logits * labels + np.log1p(np.exp(-np.abs(logits)))
    return float((weights * per).mean())


def train(dataset: Sequence[Session], config: ModelConfig, kind: ModelKind) -> SatisfactionModel:
    """Train a predictor on labeled sessions.

    The dataset is split 80/10/10 (train/validation/held-out) with the config
    seed; optimization minimizes class-weighted binary cross-entropy with
    early stopping on validation PR-AUC.  Deterministic given the seed.
    """
    kind = ModelKind(kind)
    sessions = list(dataset)
    if any(s.label is None for s in sessions):
        raise DataError("training requires labeled sessions")
    if kind is ModelKind.FP:
        sessions = [strip_elicitation(s) for s in sessions]
    labels_all = {s.label for s in sessions}
    if labels_all != {0, 1}:
        raise DataError(f"training needs both classes, got labels {sorted(labels_all)}")

    train_split, val_split, _held_out = split_dataset(sessions, config.seed)
    if not train_split or not val_split:
        raise DataError("dataset too small to split into train/validation")
    if {s.label for s in train_split} != {0, 1}:
        raise DataError("training split ended up single-class; provide more data")

    features = build_features(train_split, config.vocab_min_freq)
    model = SatisfactionModel(config, kind, features)

    n_pos = sum(s.label for s in train_split)
    n_neg = len(train_split) - n_pos
    pos_weight = (
        config.class_weight_positive
        if config.class_weight_positive is not None
        else n_neg / n_pos
    )

    enc_train = [model.encode_inputs(s) for s in train_split]
    enc_val = [model.encode_inputs(s) for s in val_split]
    y_train = np.asarray([s.label for s in train_split], dtype=np.float64)
    y_val = np.asarray([s.label for s in val_split], dtype=np.float64)
    w_train = np.where(y_train == 1.0, pos_weight, 1.0)
    w_val = np.where(y_val == 1.0, pos_weight, 1.0)

    optimizer = Adam(
        model.parameters(),
        learning_rate=config.learning_rate,
        clip_norm=config.grad_clip_norm,
    )
    shuffle_rng = np.random.default_rng([config.seed, 23])

    best_auc = -np.inf
    best_loss = np.inf
    best_params: dict[str, np.ndarray] | None = None
    patience_left = config.early_stop_patience
    val_has_pos = bool((y_val == 1).any())

    for epoch in range(1, config.epochs + 1):
        order = shuffle_rng.permutation(len(enc_train))
        total_loss = 0.0
        for start in range(0, len(order), config.batch_size):
            idx = order[start : start + config.batch_size]
            batch = [enc_train[i] for i in idx]
            logits = model._forward_logits(batch)
            loss = ag.bce_with_logits(logits, y_train[idx], w_train[idx])
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            total_loss += loss.item() * len(idx)
        train_loss = total_loss / len(enc_train)

        val_logits = model._logits_encoded(enc_val, config.batch_size)
        val_loss = _weighted_bce_values(val_logits, y_val, w_val)
        val_probs = 1.0 / (1.0 + np.exp(-np.clip(val_logits, -500, 500)))
        val_auc = pr_auc(list(zip(val_probs, y_val.astype(int)))) if val_has_pos else None
        model.history.append(EpochStats(epoch, train_loss, val_loss, val_auc))

        # Early stopping on validation PR-AUC, ties broken by validation loss
        # so a saturated PR-AUC still tracks the best-fit epoch.
        auc_key = val_auc if val_auc is not None else -np.inf
        improved = auc_key > best_auc + 1e-9 or (
            abs(auc_key - best_auc) <= 1e-9 and val_loss < best_loss - 1e-9
        )
        if improved:
            best_auc = max(best_auc, auc_key)
            best_loss = val_loss
            best_params = {p.name: p.values.copy() for p in model.parameters()}
            patience_left = config.early_stop_patience
        else:
            patience_left -= 1
            if patience_left <= 0:
                break

    if best_params is not None:
        for param in model.parameters():
            param.values = best_params[param.name]
    return model
