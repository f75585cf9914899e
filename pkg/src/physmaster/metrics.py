"""Mask-comparison metrics and checkpoint evaluation.

All three metrics operate per frame per object on boolean mask stacks of
shape (T, N, H, W) and average over the (frame, object) cells. Pixel
coordinates are normalized by the image side, so centroid L2 and chamfer
live in [0, sqrt(2)] and a pure horizontal shift of `s` pixels at width W
scores exactly s/W.

Empty-mask conventions (bounded worst cases): if exactly one of the two
masks in a cell is empty, centroid L2 and chamfer score sqrt(2) and IoU
scores 0; cells where both masks are empty are skipped. A ground-truth mask
that is empty for an object across every frame is an error.
"""

from __future__ import annotations

import csv
import hashlib
import io
import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels

WORST_DISTANCE = math.sqrt(2.0)


def _check_mask_pair(gen_masks: np.ndarray, gt_masks: np.ndarray) -> None:
    if gen_masks.shape != gt_masks.shape:
        raise ValueError(
            f"mask geometry mismatch: {gen_masks.shape} vs {gt_masks.shape}"
        )
    if gen_masks.ndim != 4:
        raise ValueError("masks must have shape (T, N, H, W)")
    empty_all = ~gt_masks.any(axis=(0, 2, 3))
    if empty_all.any():
        raise ValueError("ground-truth mask empty across all frames for an object")


def _pixel_coords(mask: np.ndarray) -> np.ndarray:
    """(n, 2) array of (row+0.5)/H, (col+0.5)/W foreground coordinates."""
    h, w = mask.shape
    rows, cols = np.nonzero(mask)
    return np.stack(((rows + 0.5) / h, (cols + 0.5) / w), axis=1)


def _centroid(mask: np.ndarray) -> np.ndarray:
    h, w = mask.shape
    rows, cols = np.nonzero(mask)
    return np.array([(rows + 0.5).mean() / h, (cols + 0.5).mean() / w])


def _cell_average(gen_masks, gt_masks, cell_fn) -> float:
    values = []
    t_total, n_obj = gen_masks.shape[:2]
    for t in range(t_total):
        for n in range(n_obj):
            gen, gt = gen_masks[t, n], gt_masks[t, n]
            gen_empty, gt_empty = not gen.any(), not gt.any()
            if gen_empty and gt_empty:
                continue
            values.append(cell_fn(gen, gt, gen_empty or gt_empty))
    return float(np.mean(values)) if values else 0.0


def centroid_l2(gen_masks: np.ndarray, gt_masks: np.ndarray) -> float:
    """Mean distance between mask centroids, normalized by image side."""
    _check_mask_pair(gen_masks, gt_masks)

    def cell(gen, gt, one_empty):
        if one_empty:
            return WORST_DISTANCE
        delta = _centroid(gen) - _centroid(gt)
        # plain sqrt(dx^2 + dy^2); BLAS nrm2 rounds differently
        return float(np.sqrt((delta * delta).sum()))

    return _cell_average(gen_masks, gt_masks, cell)


def chamfer(gen_masks: np.ndarray, gt_masks: np.ndarray) -> float:
    """Symmetric mean chamfer distance between foreground pixel sets."""
    _check_mask_pair(gen_masks, gt_masks)

    def cell(gen, gt, one_empty):
        if one_empty:
            return WORST_DISTANCE
        p, q = _pixel_coords(gen), _pixel_coords(gt)
        d_pq = float(kernels.nearest_dists(p, q).mean())
        d_qp = float(kernels.nearest_dists(q, p).mean())
        return 0.5 * (d_pq + d_qp)

    return _cell_average(gen_masks, gt_masks, cell)


def iou(gen_masks: np.ndarray, gt_masks: np.ndarray) -> float:
    """Mean intersection over union; empty-vs-nonempty cells score 0."""
    _check_mask_pair(gen_masks, gt_masks)

    def cell(gen, gt, one_empty):
        if one_empty:
            return 0.0
        inter = np.logical_and(gen, gt).sum()
        union = np.logical_or(gen, gt).sum()
        return float(inter / union)

    return _cell_average(gen_masks, gt_masks, cell)


# ---------------------------------------------------------------------------
# per-checkpoint evaluation
# ---------------------------------------------------------------------------


@dataclass
class MetricReport:
    """Per-clip metric rows plus split and overall aggregates."""

    model_id: str
    rows: list[dict] = field(default_factory=list)

    def add_row(self, clip_id: str, split: str, l2: float, cd: float, iou_: float):
        self.rows.append(
            {"clip_id": clip_id, "split": split, "l2": l2, "cd": cd, "iou": iou_}
        )

    def splits(self) -> list[str]:
        seen: list[str] = []
        for row in self.rows:
            if row["split"] not in seen:
                seen.append(row["split"])
        return seen

    def aggregate(self, split: str | None = None) -> dict[str, float]:
        rows = [r for r in self.rows if split is None or r["split"] == split]
        if not rows:
            raise ValueError(f"no rows for split {split!r}")
        return {
            "l2": float(np.mean([r["l2"] for r in rows])),
            "cd": float(np.mean([r["cd"] for r in rows])),
            "iou": float(np.mean([r["iou"] for r in rows])),
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["clip_id", "split", "l2", "cd", "iou"])
        for r in self.rows:
            writer.writerow(
                [r["clip_id"], r["split"], f"{r['l2']:.6f}", f"{r['cd']:.6f}", f"{r['iou']:.6f}"]
            )
        for split in self.splits() + [None]:
            agg = self.aggregate(split)
            writer.writerow(
                [
                    "aggregate",
                    split if split is not None else "average",
                    f"{agg['l2']:.6f}",
                    f"{agg['cd']:.6f}",
                    f"{agg['iou']:.6f}",
                ]
            )
        return buf.getvalue()

    def to_markdown(self) -> str:
        lines = [
            f"### Evaluation: {self.model_id}",
            "",
            "| Split | L2 (down) | CD (down) | IoU (up) |",
            "|---|---|---|---|",
        ]
        for split in self.splits() + [None]:
            agg = self.aggregate(split)
            name = split if split is not None else "average"
            lines.append(
                f"| {name} | {agg['l2']:.4f} | {agg['cd']:.4f} | {agg['iou']:.4f} |"
            )
        return "\n".join(lines) + "\n"


def clip_eval_seed(eval_seed: int, clip_id: str) -> int:
    """Stable per-clip sampling seed (Python's hash() is salted, so use sha256)."""
    digest = hashlib.sha256(f"{eval_seed}:{clip_id}".encode()).digest()
    return int.from_bytes(digest[:8], "little") % (2**31 - 1)


def evaluate_clips(
    model_id: str,
    clip_iter,
) -> MetricReport:
    """Build a report from an iterable of evaluated clips.

    `clip_iter` yields (clip_id, split, gen_masks, gt_masks) tuples; metric
    computation and aggregation happen here so every caller (CLI eval,
    ablation harness, tests) shares one code path.
    """
    report = MetricReport(model_id=model_id)
    for clip_id, split, gen_masks, gt_masks in clip_iter:
        report.add_row(
            clip_id,
            split,
            centroid_l2(gen_masks, gt_masks),
            chamfer(gen_masks, gt_masks),
            iou(gen_masks, gt_masks),
        )
    return report
