"""Metrics CSV files and rate-performance figures."""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

METRIC_FIELDS = ["run_id", "variant", "seed", "split", "lb", "bpp", "flip_prob", "miou", "macc"]

# fixed style per variant so figures are comparable across runs
_STYLE = {
    "both+pretrain": ("tab:red", "o", "-"),
    "both": ("tab:purple", "s", "--"),
    "rgb": ("tab:green", "^", ":"),
    "thermal": ("tab:blue", "v", "-."),
}


def write_metrics(rows: list[dict], path: str | Path, append: bool = False) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    new = not (append and path.exists())
    with path.open("a" if append else "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=METRIC_FIELDS, extrasaction="ignore")
        if new:
            writer.writeheader()
        for row in rows:
            writer.writerow({k: _fmt(row.get(k, "")) for k in METRIC_FIELDS})
    return path


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v


def read_metrics(path: str | Path) -> list[dict]:
    with Path(path).open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        for k in ("bpp", "flip_prob", "miou", "macc"):
            if r.get(k, "") != "":
                r[k] = float(r[k])
        for k in ("lb", "seed"):
            if r.get(k, "") != "":
                r[k] = int(r[k])
    return rows


def curves(rows: list[dict], metric: str) -> dict[str, tuple[list[float], list[float]]]:
    """Per variant: bpp values and the metric averaged over seeds at each bpp."""
    grouped: dict[str, dict[float, list[float]]] = {}
    for r in rows:
        grouped.setdefault(r.get("variant") or r["run_id"], {}).setdefault(r["bpp"], []).append(r[metric])
    out = {}
    for variant in sorted(grouped):
        xs = sorted(grouped[variant])
        out[variant] = (xs, [sum(grouped[variant][x]) / len(grouped[variant][x]) for x in xs])
    return out


def plot_rate_curves(rows: list[dict], out_dir: str | Path, stem: str = "rate") -> list[Path]:
    """Write ``<stem>_miou.png`` and ``<stem>_macc.png``: metric vs bpp, one line per variant."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for metric, label in (("miou", "mIoU"), ("macc", "mAcc")):
        fig, ax = plt.subplots(figsize=(5.0, 3.6), dpi=120)
        for variant, (xs, ys) in curves(rows, metric).items():
            color, marker, ls = _STYLE.get(variant, (None, "x", "-"))
            ax.plot(xs, ys, label=variant, color=color, marker=marker, linestyle=ls)
        ax.set_xlabel("bpp")
        ax.set_ylabel(label)
        ax.set_xscale("log", base=2)
        ax.set_ylim(0.0, 1.0)
        ax.grid(True, which="both", alpha=0.3)
        ax.legend(loc="lower right", fontsize=8)
        fig.tight_layout()
        path = out_dir / f"{stem}_{metric}.png"
        # no timestamp chunk, so identical inputs give identical bytes
        fig.savefig(path, metadata={"Software": None})
        plt.close(fig)
        paths.append(path)
    return paths
