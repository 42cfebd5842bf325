#!/usr/bin/env python3
"""Plot micro F1 and cross-domain F1 spread against the feedback rate.

Reads the report.json produced by `satfusion evaluate` and writes a two-panel
figure next to it.

Usage:
    python scripts/plot_rate_sweep.py runs/default/report.json
"""
import argparse
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("report", type=Path)
    parser.add_argument("--out", type=Path, default=None)
    args = parser.parse_args()

    payload = json.loads(args.report.read_text())
    rates = sorted(float(r) for r in payload["rates"])
    approaches = ["HP", "EFB+HP", "EFB+FP+HP"]

    fig, (ax_f1, ax_std) = plt.subplots(1, 2, figsize=(10, 4))
    for approach in approaches:
        f1 = [payload["rates"][f"{r:g}"][approach]["micro"]["f1"] for r in rates]
        ax_f1.plot(rates, f1, marker="o", label=approach)
        std = [
            (payload["rates"][f"{r:g}"][approach]["macro_std"] or {}).get("f1")
            for r in rates
        ]
        if all(s is not None for s in std):
            ax_std.plot(rates, std, marker="o", label=approach)
    for ax, title in ((ax_f1, "micro F1"), (ax_std, "cross-domain F1 std dev")):
        ax.set_xscale("log")
        ax.set_xlabel("feedback collection rate")
        ax.set_title(title)
        ax.grid(True, alpha=0.3)
        ax.legend()
    fig.tight_layout()
    out = args.out or args.report.with_name("rate_sweep.png")
    fig.savefig(out, dpi=120)
    print(f"wrote {out}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
