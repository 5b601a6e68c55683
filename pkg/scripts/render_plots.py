"""Render the CSV files written by ``goalstate train`` / ``goalstate eval`` to PNG.

    python scripts/render_plots.py RUN_DIR [--out plots/]

Looks for ``train/loss.csv`` and ``eval/eval_samples.csv`` under RUN_DIR (the
layout of ``goalstate e2e``), or for the files directly in RUN_DIR.
Requires matplotlib (``pip install .[plot]``).
"""
import argparse
import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def find(root: Path, name: str, sub: str):
    for p in (root / sub / name, root / name):
        if p.exists():
            return p
    return None


def plot_loss(path, out):
    rows = read_csv(path)
    step = [int(r["step"]) for r in rows]
    fig, ax = plt.subplots(figsize=(6, 4))
    for key in ("total", "noise_term", "structure_term"):
        ax.plot(step, [float(r[key]) for r in rows], label=key)
    ax.set_yscale("log")
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out, dpi=120)
    plt.close(fig)


def plot_pce(path, out):
    rows = read_csv(path)
    model = [float(r["pce"]) for r in rows]
    base = [float(r["baseline_pce"]) for r in rows]
    rel = [float(r["relative_baseline_pce"]) for r in rows]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.boxplot([model, rel, base])
    ax.set_xticks([1, 2, 3], ["model", "relative mean", "mean goal"])
    ax.set_ylabel("PCE (m)")
    fig.tight_layout()
    fig.savefig(out, dpi=120)
    plt.close(fig)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("run_dir", type=Path)
    ap.add_argument("--out", type=Path)
    args = ap.parse_args(argv)
    out = args.out or args.run_dir / "plots"
    out.mkdir(parents=True, exist_ok=True)
    loss = find(args.run_dir, "loss.csv", "train")
    pces = find(args.run_dir, "eval_samples.csv", "eval")
    if loss:
        plot_loss(loss, out / "loss.png")
        print(out / "loss.png")
    if pces:
        plot_pce(pces, out / "pce.png")
        print(out / "pce.png")
    if not (loss or pces):
        ap.error(f"no loss.csv or eval_samples.csv under {args.run_dir}")


if __name__ == "__main__":
    main()
