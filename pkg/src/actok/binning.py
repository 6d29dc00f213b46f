"""Per-dimension quantile binning of continuous action vectors.

The baseline tokenizer: each action dimension is discretized into
`num_bins` equal-mass bins fitted between two outlier-clipping quantiles
of the training data. Encoding is a binary search over the bin edges;
decoding returns a per-bin representative value.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from actok.errors import DatasetError, FitError

FORMAT_NAME = "quantile-binning"
FORMAT_VERSION = 1

# A dimension whose clip window is narrower than this is treated as constant.
_DEGENERATE_SPAN = 1e-12


@dataclass
class BinningScheme:
    edges: np.ndarray    # (D, num_bins - 1), strictly ascending per dimension
    centers: np.ndarray  # (D, num_bins)
    clip: tuple[float, float]

    @property
    def action_dim(self) -> int:
        return self.edges.shape[0]

    @property
    def num_bins(self) -> int:
        return self.centers.shape[1]


def _strictly_ascending(edges: np.ndarray, floor: float) -> np.ndarray:
    """Nudge duplicate quantile edges upward so intervals stay well-formed."""
    out = edges.copy()
    prev = floor
    for i in range(out.shape[0]):
        if out[i] <= prev:
            out[i] = np.nextafter(prev, np.inf)
        prev = out[i]
    return out


def _bin_medians(sorted_vals: np.ndarray, edges: np.ndarray, lo: float, hi: float) -> np.ndarray:
    """Median of the training values landing in each bin; empty bins fall
    back to the midpoint of their interval."""
    num_bins = edges.shape[0] + 1
    # values >= edges[k-1] belong to bin >= k (ties go to the upper bin)
    bounds = np.concatenate(([0], np.searchsorted(sorted_vals, edges, side="left"),
                             [sorted_vals.shape[0]]))
    centers = np.empty(num_bins)
    for k in range(num_bins):
        left, right = bounds[k], bounds[k + 1]
        if right > left:
            mid = (left + right - 1) // 2
            centers[k] = 0.5 * (sorted_vals[mid] + sorted_vals[left + (right - left) // 2])
        else:
            low_edge = lo if k == 0 else edges[k - 1]
            high_edge = hi if k == num_bins - 1 else edges[k]
            centers[k] = 0.5 * (low_edge + high_edge)
    return centers


def fit_quantile_bins(actions, num_bins: int = 256,
                      clip: tuple[float, float] = (0.01, 0.99)) -> BinningScheme:
    """Fit per-dimension equal-mass bins between the clip quantiles.

    Edges for dimension d sit at the empirical quantiles of the raw data
    at levels clip_low + (clip_high - clip_low) * k / num_bins, which is
    equal mass within the clip window. Centers are the medians of the
    clipped training values falling in each bin.
    """
    X = np.asarray(actions, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if X.size == 0:
        raise FitError("cannot fit binning scheme on empty input")
    if num_bins < 2:
        raise FitError("num_bins must be >= 2")
    lo_q, hi_q = clip
    if not (0.0 < lo_q < hi_q < 1.0):
        raise FitError(f"clip quantiles must satisfy 0 < low < high < 1, got {clip}")

    dims = X.shape[1]
    edges = np.empty((dims, num_bins - 1))
    centers = np.empty((dims, num_bins))
    levels = lo_q + (hi_q - lo_q) * np.arange(1, num_bins) / num_bins
    for d in range(dims):
        col = X[:, d]
        lo = float(np.quantile(col, lo_q))
        hi = float(np.quantile(col, hi_q))
        if hi - lo <= _DEGENERATE_SPAN:
            # constant dimension: every value lands in bin 0 and decodes back
            step = max(abs(lo) * 1e-9, 1e-9)
            edges[d] = lo + step * np.arange(1, num_bins)
            centers[d] = 0.5 * (np.concatenate(([lo - step], edges[d]))
                                + np.concatenate((edges[d], [lo + step * num_bins])))
            centers[d, 0] = lo
            continue
        e = _strictly_ascending(np.quantile(col, levels), lo)
        clipped = np.clip(col, lo, hi)
        centers[d] = _bin_medians(np.sort(clipped), e, lo, hi)
        edges[d] = e
    return BinningScheme(edges=edges, centers=centers, clip=(lo_q, hi_q))


def bin_encode(a, scheme: BinningScheme) -> np.ndarray:
    """Map a D-vector (or batch of them) to per-dimension token ids.

    Bins are half-open [edge_k, edge_{k+1}); values on an edge go to the
    upper bin, values outside the fitted range saturate to bin 0 or the top.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.shape[-1] != scheme.action_dim:
        raise DatasetError(f"action dim {a.shape[-1]} != scheme dim {scheme.action_dim}")
    tokens = np.empty(a.shape, dtype=np.int64)
    for d in range(scheme.action_dim):
        tokens[..., d] = np.searchsorted(scheme.edges[d], a[..., d], side="right")
    return tokens


def bin_decode(tokens, scheme: BinningScheme) -> np.ndarray:
    """Inverse of bin_encode: return the per-dimension bin centers."""
    tokens = np.asarray(tokens, dtype=np.int64)
    if tokens.shape[-1] != scheme.action_dim:
        raise DatasetError(f"token dim {tokens.shape[-1]} != scheme dim {scheme.action_dim}")
    if np.any(tokens < 0) or np.any(tokens >= scheme.num_bins):
        raise DatasetError(f"token id out of range [0, {scheme.num_bins})")
    out = np.empty(tokens.shape, dtype=np.float64)
    for d in range(scheme.action_dim):
        out[..., d] = scheme.centers[d][tokens[..., d]]
    return out


def save_scheme(scheme: BinningScheme, path) -> None:
    payload = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "num_bins": scheme.num_bins,
        "action_dim": scheme.action_dim,
        "clip": [scheme.clip[0], scheme.clip[1]],
        "edges": scheme.edges.tolist(),
        "centers": scheme.centers.tolist(),
    }
    with open(path, "w") as fh:
        json.dump(payload, fh)
        fh.write("\n")


def load_scheme(path) -> BinningScheme:
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"binning scheme not found: {path}")
    with open(path) as fh:
        payload = json.load(fh)
    if payload.get("format") != FORMAT_NAME or payload.get("version") != FORMAT_VERSION:
        raise DatasetError(f"{path}: not a version-{FORMAT_VERSION} {FORMAT_NAME} file")
    return BinningScheme(
        edges=np.asarray(payload["edges"], dtype=np.float64),
        centers=np.asarray(payload["centers"], dtype=np.float64),
        clip=(float(payload["clip"][0]), float(payload["clip"][1])),
    )
