"""Attention rollout: cumulative patch-to-patch relevance through the model.

Per layer, the head-averaged attention matrix is augmented with the
identity (standing in for the residual connection), row-renormalized, and
multiplied onto the running rollout. The center stack's rollout is seeded
by the renormalized sum of both ears' final rollouts, mirroring how the
integration layer merges the two pathways. Per-patch relevance is the
column mean of a rollout matrix: how much every patch attends to a given
patch, which needs no class token.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .model import AttentionCapture, BinauralTransformer

__all__ = ["RolloutRecord", "RolloutError", "layer_rollout", "rollout_chain",
           "bast_rollout", "relevance_grid", "export_heatmap"]


class RolloutError(ValueError):
    """Missing or malformed attention matrices."""


def layer_rollout(attn: np.ndarray) -> np.ndarray:
    """One layer's identity-augmented, row-normalized attention (N x N).

    ``attn`` is (heads, N, N) with softmax-normalized rows. The result is
    rownormalize(mean_over_heads(attn) + I), again row-stochastic.
    """
    attn = np.asarray(attn, dtype=np.float64)
    if attn.ndim != 3 or attn.shape[-1] != attn.shape[-2]:
        raise RolloutError(
            f"expected (heads, N, N) square attention, got {attn.shape}")
    mean = attn.mean(axis=0)
    aug = mean + np.eye(mean.shape[0])
    return aug / aug.sum(axis=1, keepdims=True)


def rollout_chain(attn_layers: list[np.ndarray],
                  init: np.ndarray | None = None) -> list[np.ndarray]:
    """Cumulative rollouts R_k = A_k @ R_{k-1} for each layer, R_0 = init or I."""
    if not attn_layers:
        raise RolloutError("attention capture is empty; nothing to roll out")
    n = attn_layers[0].shape[-1]
    running = np.eye(n) if init is None else np.asarray(init, dtype=np.float64)
    chain = []
    for attn in attn_layers:
        running = layer_rollout(attn) @ running
        chain.append(running)
    return chain


@dataclass
class RolloutRecord:
    """Raw attention, cumulative rollouts, and relevance grids for one input.

    ``attention`` and ``rollouts`` are keyed by encoder ("left", "right",
    "center"); ``relevance`` holds (n_h, n_t) grids per ear plus the
    center pathway's combined grid.
    """

    attention: dict[str, list[np.ndarray]] = field(default_factory=dict)
    rollouts: dict[str, list[np.ndarray]] = field(default_factory=dict)
    relevance: dict[str, np.ndarray] = field(default_factory=dict)
    grid_shape: tuple[int, int] = (0, 0)


def relevance_grid(rollout: np.ndarray, n_h: int, n_t: int) -> np.ndarray:
    """Column-mean relevance of a rollout matrix, reshaped to the patch grid."""
    return rollout.mean(axis=0).reshape(n_h, n_t)


def bast_rollout(model: BinauralTransformer, x_left: np.ndarray,
                 x_right: np.ndarray) -> RolloutRecord:
    """Full rollout analysis of a single sample in eval mode.

    The center chain starts from rownormalize(R_left + R_right); relevance
    grids are emitted for each ear's final rollout and for the center.
    """
    _, capture = model.forward_with_attention(x_left, x_right)
    return rollout_from_capture(capture, model.grid.n_h, model.grid.n_t)


def rollout_from_capture(capture: AttentionCapture, n_h: int, n_t: int
                         ) -> RolloutRecord:
    if not capture.left or not capture.right or not capture.center:
        raise RolloutError("attention capture is missing matrices; "
                           "run the forward pass with capture enabled")

    def single(attn_layers):
        # capture stores (batch, heads, N, N); analysis is per single sample
        out = []
        for a in attn_layers:
            if a.shape[0] != 1:
                raise RolloutError(
                    f"rollout expects a single sample, got batch {a.shape[0]}")
            out.append(np.asarray(a[0], dtype=np.float64))
        return out

    left_attn = single(capture.left)
    right_attn = single(capture.right)
    center_attn = single(capture.center)

    left_chain = rollout_chain(left_attn)
    right_chain = rollout_chain(right_attn)
    seed = left_chain[-1] + right_chain[-1]
    seed = seed / seed.sum(axis=1, keepdims=True)
    center_chain = rollout_chain(center_attn, init=seed)

    record = RolloutRecord(grid_shape=(n_h, n_t))
    record.attention = {"left": left_attn, "right": right_attn,
                        "center": center_attn}
    record.rollouts = {"left": left_chain, "right": right_chain,
                       "center": center_chain}
    record.relevance = {
        "left": relevance_grid(left_chain[-1], n_h, n_t),
        "right": relevance_grid(right_chain[-1], n_h, n_t),
        "center": relevance_grid(center_chain[-1], n_h, n_t),
    }
    return record


def upsample_grid(grid: np.ndarray, height: int, width: int, patch: int,
                  stride: int) -> np.ndarray:
    """Nearest-patch-center upsampling of a relevance grid to pixel size."""
    n_h, n_t = grid.shape
    rows = np.clip(np.round((np.arange(height) - patch / 2.0) / stride),
                   0, n_h - 1).astype(int)
    cols = np.clip(np.round((np.arange(width) - patch / 2.0) / stride),
                   0, n_t - 1).astype(int)
    return grid[np.ix_(rows, cols)]


def export_heatmap(record: RolloutRecord, meta: dict, out_dir,
                   height: int = 129, width: int = 61, patch: int = 16,
                   stride: int = 6) -> list[Path]:
    """Write per-pathway relevance CSVs plus upsampled overlays and metadata.

    Produces ``rollout_<id>_<ear>.csv`` (patch grid),
    ``rollout_<id>_<ear>_overlay.csv`` (pixel grid), and
    ``rollout_<id>_meta.json``.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    sample_id = meta.get("sample_id", "sample")
    written = []
    for ear, grid in record.relevance.items():
        path = out_dir / f"rollout_{sample_id}_{ear}.csv"
        with open(path, "w", newline="", encoding="utf-8") as fh:
            csv.writer(fh).writerows(grid.tolist())
        written.append(path)
        overlay = upsample_grid(grid, height, width, patch, stride)
        opath = out_dir / f"rollout_{sample_id}_{ear}_overlay.csv"
        with open(opath, "w", newline="", encoding="utf-8") as fh:
            csv.writer(fh).writerows(overlay.tolist())
        written.append(opath)
    meta_path = out_dir / f"rollout_{sample_id}_meta.json"
    meta_path.write_text(json.dumps(
        {**meta, "grid_shape": list(record.grid_shape),
         "overlay_shape": [height, width],
         "pathways": sorted(record.relevance)}, indent=2, sort_keys=True) + "\n",
        encoding="utf-8")
    written.append(meta_path)
    return written
