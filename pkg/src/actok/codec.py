"""Compressed action-chunk codec: normalize -> DCT -> quantize -> BPE.

Encoding maps an (N, D) chunk of continuous actions to a short integer
token sequence; decoding inverts every stage, so reconstruction error
comes from quantization alone. Stages, in order:

  1. per-dimension affine map onto [-1, 1], clipping at fitted data
     quantiles (constant dimensions map to 0),
  2. orthonormal DCT along the configured chunk axis,
  3. multiply by the scale, round half away from zero, clamp to
     [-clamp, clamp],
  4. zigzag signed integers onto [0, 2*clamp] and flatten timestep-major,
  5. BPE over the resulting symbol stream.
"""

from __future__ import annotations

import hashlib
import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from actok.bpe import BpeModel, bpe_decode, bpe_encode, bpe_from_dict, bpe_to_dict, \
    bpe_train_and_encode
from actok.dct import DctAxis, dct_matrix
from actok.errors import CalibrationError, CodecError, DatasetError, FitError, \
    MalformedChunkError
from actok.trajectory import ChunkSpec

FORMAT_NAME = "action-codec"
FORMAT_VERSION = 1

DEFAULT_CLAMP = 127          # integer coefficients live in [-127, 127]
DEFAULT_MAX_VOCAB = 2048     # total token ids, base alphabet included
DEFAULT_NORM_QUANTILES = (0.01, 0.99)

_DEGENERATE_SPAN = 1e-12

# calibration grid: powers of two, then bisection between the last
# failing and first passing point
_GRID_MAX_EXP = 16
_BISECT_STEPS = 8
_HOLDOUT_STRIDE = 10         # every 10th chunk forms the held-out split


@dataclass(frozen=True)
class CodecConfig:
    spec: ChunkSpec
    dct_axis: DctAxis = DctAxis.PER_TIMESTEP
    scale: float | None = None       # fixed quantization scale, or
    target_err: float | None = None  # calibrate the scale to this error
    clamp: int = DEFAULT_CLAMP
    max_vocab: int = DEFAULT_MAX_VOCAB
    norm_quantiles: tuple[float, float] = DEFAULT_NORM_QUANTILES
    min_pair_count: int = 2


@dataclass
class CodecModel:
    spec: ChunkSpec
    dct_axis: DctAxis
    scale: float
    clamp: int
    q_low: np.ndarray    # (D,)
    q_high: np.ndarray   # (D,)
    bpe: BpeModel

    @property
    def base_alphabet_size(self) -> int:
        return 2 * self.clamp + 1

    def to_dict(self) -> dict:
        return {
            "format": FORMAT_NAME,
            "version": FORMAT_VERSION,
            "horizon": self.spec.horizon,
            "action_dim": self.spec.action_dim,
            "dct_axis": self.dct_axis.value,
            "scale": float(self.scale),
            "clamp": int(self.clamp),
            "q_low": [float(v) for v in self.q_low],
            "q_high": [float(v) for v in self.q_high],
            "bpe": bpe_to_dict(self.bpe),
        }

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


@dataclass
class FitSummary:
    chunks: int
    vocab_used: int
    saturation_rate: float
    mean_tokens_per_chunk: float
    baseline_tokens_per_chunk: int   # N * D
    compression_ratio: float         # mean tokens / baseline

    def lines(self) -> list[str]:
        return [
            f"chunks fitted:        {self.chunks}",
            f"vocab used:           {self.vocab_used}",
            f"saturation rate:      {self.saturation_rate:.4%}",
            f"mean tokens/chunk:    {self.mean_tokens_per_chunk:.2f}",
            f"baseline tokens:      {self.baseline_tokens_per_chunk}",
            f"compression ratio:    {self.compression_ratio:.3f}",
        ]


def _chunk_values(chunk) -> np.ndarray:
    return np.asarray(getattr(chunk, "values", chunk), dtype=np.float64)


def _stack_chunks(chunks, spec: ChunkSpec) -> np.ndarray:
    if not chunks:
        raise FitError("cannot fit codec on an empty chunk list")
    arrs = []
    for i, c in enumerate(chunks):
        v = _chunk_values(c)
        if v.shape != (spec.horizon, spec.action_dim):
            raise FitError(
                f"chunk {i} has shape {v.shape}, expected "
                f"({spec.horizon}, {spec.action_dim})"
            )
        arrs.append(v)
    return np.stack(arrs)


def _normalize(values: np.ndarray, q_low: np.ndarray, q_high: np.ndarray) -> np.ndarray:
    span = q_high - q_low
    safe = np.where(span > _DEGENERATE_SPAN, span, 1.0)
    z = 2.0 * (values - q_low) / safe - 1.0
    z = np.clip(z, -1.0, 1.0)
    return np.where(span > _DEGENERATE_SPAN, z, 0.0)


def _denormalize(z: np.ndarray, q_low: np.ndarray, q_high: np.ndarray) -> np.ndarray:
    z = np.clip(z, -1.0, 1.0)  # decoded chunks stay inside the quantile box
    return q_low + (z + 1.0) * 0.5 * (q_high - q_low)


def _forward_dct(z: np.ndarray, axis: DctAxis) -> np.ndarray:
    # z has shape (..., N, D); matmul broadcasts over leading axes
    if axis is DctAxis.PER_TIMESTEP:
        return z @ dct_matrix(z.shape[-1]).T
    return np.einsum("kn,...nd->...kd", dct_matrix(z.shape[-2]), z)


def _inverse_dct(c: np.ndarray, axis: DctAxis) -> np.ndarray:
    if axis is DctAxis.PER_TIMESTEP:
        return c @ dct_matrix(c.shape[-1])
    return np.einsum("nk,...nd->...kd", dct_matrix(c.shape[-2]), c)


def _round_half_away(x: np.ndarray) -> np.ndarray:
    return np.copysign(np.floor(np.abs(x) + 0.5), x)


def _quantize(coeffs: np.ndarray, scale: float, clamp: int) -> tuple[np.ndarray, int]:
    raw = _round_half_away(coeffs * scale)
    clipped = np.clip(raw, -clamp, clamp)
    saturated = int(np.count_nonzero(raw != clipped))
    return clipped.astype(np.int64), saturated


def _zigzag(q: np.ndarray) -> np.ndarray:
    return np.where(q >= 0, 2 * q, -2 * q - 1)


def _unzigzag(s: np.ndarray) -> np.ndarray:
    return np.where(s % 2 == 0, s // 2, -(s + 1) // 2)


def encode_chunk(chunk, model: CodecModel) -> list[int]:
    """Encode one (N, D) chunk to its token sequence."""
    v = _chunk_values(chunk)
    expected = (model.spec.horizon, model.spec.action_dim)
    if v.shape != expected:
        raise CodecError(f"chunk shape {v.shape} != model spec {expected}")
    z = _normalize(v, model.q_low, model.q_high)
    coeffs = _forward_dct(z, model.dct_axis)
    q, _ = _quantize(coeffs, model.scale, model.clamp)
    symbols = _zigzag(q).ravel(order="C")  # timestep-major
    return bpe_encode(symbols.tolist(), model.bpe)


def decode_tokens(tokens, model: CodecModel) -> np.ndarray:
    """Decode a token sequence back to an (N, D) chunk.

    The BPE expansion must yield exactly N*D base symbols; anything else
    raises MalformedChunkError and no partial chunk is returned.
    """
    symbols = bpe_decode(tokens, model.bpe)
    expected = model.spec.horizon * model.spec.action_dim
    if len(symbols) != expected:
        raise MalformedChunkError(
            f"decoded {len(symbols)} base symbols, chunk needs exactly {expected}"
        )
    s = np.asarray(symbols, dtype=np.int64)
    if np.any(s < 0) or np.any(s >= model.base_alphabet_size):
        raise MalformedChunkError("decoded symbol outside the codec alphabet")
    q = _unzigzag(s).reshape(model.spec.horizon, model.spec.action_dim)
    coeffs = q.astype(np.float64) / model.scale
    z = _inverse_dct(coeffs, model.dct_axis)
    return _denormalize(z, model.q_low, model.q_high)


def _roundtrip_err(z: np.ndarray, axis: DctAxis, scale: float, clamp: int) -> np.ndarray:
    """Per-chunk max-abs round-trip error in normalized units, no BPE."""
    coeffs = _forward_dct(z, axis)
    q, _ = _quantize(coeffs, scale, clamp)
    back = np.clip(_inverse_dct(q.astype(np.float64) / scale, axis), -1.0, 1.0)
    return np.max(np.abs(back - z), axis=(-2, -1))


def calibrate_scale(chunks, target_err: float, config: CodecConfig,
                    q_low: np.ndarray | None = None,
                    q_high: np.ndarray | None = None) -> float:
    """Smallest scale whose held-out 99th-percentile round-trip error meets
    the target.

    Scans powers of two from 1 to 2**16, then refines with 8 geometric
    bisection steps between the last failing and first passing grid point.
    Error is measured in normalized units on every 10th chunk.
    """
    if not target_err > 0:
        raise FitError("target_err must be positive")
    stacked = _stack_chunks(chunks, config.spec)
    if q_low is None or q_high is None:
        q_low, q_high = _fit_quantile_range(stacked, config.norm_quantiles)
    held = stacked[::_HOLDOUT_STRIDE] if stacked.shape[0] >= _HOLDOUT_STRIDE else stacked
    z = _normalize(held, q_low, q_high)

    def achieved(scale: float) -> float:
        return float(np.quantile(_roundtrip_err(z, config.dct_axis, scale, config.clamp), 0.99))

    lo = None
    hi = None
    for exp in range(_GRID_MAX_EXP + 1):
        scale = float(2 ** exp)
        if achieved(scale) <= target_err:
            hi = scale
            break
        lo = scale
    if hi is None:
        raise CalibrationError(
            f"target {target_err} unreachable: achieved {achieved(float(2 ** _GRID_MAX_EXP)):.3g} "
            f"at scale {2 ** _GRID_MAX_EXP}"
        )
    if lo is None:
        return hi  # grid minimum already qualifies
    for _ in range(_BISECT_STEPS):
        mid = float(np.sqrt(lo * hi))
        if achieved(mid) <= target_err:
            hi = mid
        else:
            lo = mid
    return hi


def _fit_quantile_range(stacked: np.ndarray,
                        quantiles: tuple[float, float]) -> tuple[np.ndarray, np.ndarray]:
    rows = stacked.reshape(-1, stacked.shape[-1])
    q_low = np.quantile(rows, quantiles[0], axis=0)
    q_high = np.quantile(rows, quantiles[1], axis=0)
    return q_low, q_high


def fit_codec(chunks, config: CodecConfig) -> tuple[CodecModel, FitSummary]:
    """Fit normalization, scale, and the BPE table on a chunk corpus."""
    stacked = _stack_chunks(chunks, config.spec)
    if not np.all(np.isfinite(stacked)):
        raise FitError("chunk corpus contains non-finite values")
    q_low, q_high = _fit_quantile_range(stacked, config.norm_quantiles)

    if config.scale is not None:
        if not config.scale > 0:
            raise FitError("scale must be positive")
        scale = float(config.scale)
    elif config.target_err is not None:
        scale = calibrate_scale(chunks, config.target_err, config, q_low, q_high)
    else:
        raise FitError("config must set either scale or target_err")

    z = _normalize(stacked, q_low, q_high)
    coeffs = _forward_dct(z, config.dct_axis)
    q, saturated = _quantize(coeffs, scale, config.clamp)
    if coeffs.size and saturated / coeffs.size >= 0.01:
        warnings.warn(
            f"{saturated / coeffs.size:.1%} of quantized coefficients clamp at "
            f"+/-{config.clamp}; consider a larger clamp bound",
            RuntimeWarning,
            stacklevel=2,
        )
    symbols = _zigzag(q).reshape(stacked.shape[0], -1)
    base = 2 * config.clamp + 1
    bpe, encoded = bpe_train_and_encode(
        [row.tolist() for row in symbols],
        config.max_vocab,
        base_alphabet_size=base,
        min_pair_count=config.min_pair_count,
    )
    model = CodecModel(
        spec=config.spec,
        dct_axis=config.dct_axis,
        scale=scale,
        clamp=config.clamp,
        q_low=q_low,
        q_high=q_high,
        bpe=bpe,
    )
    baseline = config.spec.horizon * config.spec.action_dim
    mean_tokens = float(np.mean([len(s) for s in encoded]))
    summary = FitSummary(
        chunks=stacked.shape[0],
        vocab_used=bpe.vocab_size,
        saturation_rate=saturated / coeffs.size if coeffs.size else 0.0,
        mean_tokens_per_chunk=mean_tokens,
        baseline_tokens_per_chunk=baseline,
        compression_ratio=mean_tokens / baseline,
    )
    return model, summary


def roundtrip_bound(model: CodecModel) -> float:
    """Worst-case reconstruction error for unclipped, unsaturated chunks.

    Quantization perturbs each coefficient by at most 1/(2*scale); the
    orthonormal inverse transform turns that into at most sqrt(L)/(2*scale)
    per normalized entry, and denormalization scales by the widest
    half-range.
    """
    L = (model.spec.action_dim if model.dct_axis is DctAxis.PER_TIMESTEP
         else model.spec.horizon)
    half_range = float(np.max((model.q_high - model.q_low) / 2.0))
    return np.sqrt(L) / (2.0 * model.scale) * half_range


def save_model(model: CodecModel, path) -> None:
    payload = model.to_dict()
    payload["fingerprint"] = model.fingerprint()
    with open(path, "w") as fh:
        json.dump(payload, fh)
        fh.write("\n")


def load_model(path) -> CodecModel:
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"codec model not found: {path}")
    with open(path) as fh:
        payload = json.load(fh)
    if payload.get("format") != FORMAT_NAME or payload.get("version") != FORMAT_VERSION:
        raise DatasetError(f"{path}: not a version-{FORMAT_VERSION} {FORMAT_NAME} file")
    model = CodecModel(
        spec=ChunkSpec(horizon=int(payload["horizon"]), action_dim=int(payload["action_dim"])),
        dct_axis=DctAxis.from_name(payload["dct_axis"]),
        scale=float(payload["scale"]),
        clamp=int(payload["clamp"]),
        q_low=np.asarray(payload["q_low"], dtype=np.float64),
        q_high=np.asarray(payload["q_high"], dtype=np.float64),
        bpe=bpe_from_dict(payload["bpe"]),
    )
    recorded = payload.get("fingerprint")
    if recorded is not None and recorded != model.fingerprint():
        raise DatasetError(f"{path}: fingerprint mismatch, file may be corrupted")
    return model
