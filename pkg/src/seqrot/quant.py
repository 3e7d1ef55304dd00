"""Group quantizers: round-to-nearest with optional clipping, and GPTQ.

Groups always run along the input-channel dimension of each row, i.e. a
(rows, cols) matrix is quantized per row in contiguous groups of
``group_size`` columns. ``group_size=None`` means one group per row
(per-channel).

Rounding is half-away-from-zero everywhere; half-even would change codes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    EmptyCalibrationError,
    GroupDoesNotDivideError,
    InvalidSpecError,
    ShapeMismatchError,
    SingularHessianError,
)

# MSE clip search grid: 1.00, 0.99, ..., 0.50
DEFAULT_MSE_GRID = tuple(round(1.0 - 0.01 * i, 2) for i in range(51))

CLIP_NONE = "none"
CLIP_RATIO = "ratio"
CLIP_MSE = "mse"


@dataclass(frozen=True)
class Clip:
    """Range-clipping policy for one quantizer."""

    kind: str = CLIP_NONE
    ratio: float = 1.0
    grid: tuple[float, ...] = ()

    @staticmethod
    def none() -> "Clip":
        return Clip(CLIP_NONE)

    @staticmethod
    def fixed(ratio: float) -> "Clip":
        return Clip(CLIP_RATIO, ratio=ratio)

    @staticmethod
    def mse(grid: tuple[float, ...] = DEFAULT_MSE_GRID) -> "Clip":
        return Clip(CLIP_MSE, grid=tuple(grid))

    def validate(self) -> None:
        if self.kind not in (CLIP_NONE, CLIP_RATIO, CLIP_MSE):
            raise InvalidSpecError(f"unknown clip kind {self.kind!r}")
        if self.kind == CLIP_RATIO and not 0.0 < self.ratio <= 1.0:
            raise InvalidSpecError(f"clip ratio must be in (0, 1], got {self.ratio}")
        if self.kind == CLIP_MSE:
            if not self.grid:
                raise InvalidSpecError("MSE clip grid must be non-empty")
            if any(not 0.0 < r <= 1.0 for r in self.grid):
                raise InvalidSpecError("every MSE grid ratio must be in (0, 1]")


@dataclass(frozen=True)
class QuantSpec:
    """Bit-width, grouping, symmetry and clipping for one quantizer."""

    bits: int
    group_size: int | None = None   # None: one group per row
    symmetric: bool = False
    clip: Clip = field(default_factory=Clip.none)

    def __post_init__(self):
        if not 2 <= self.bits <= 8:
            raise InvalidSpecError(f"bits must be in [2, 8], got {self.bits}")
        if self.group_size is not None and self.group_size < 1:
            raise InvalidSpecError(f"group size must be positive, got {self.group_size}")
        self.clip.validate()

    @property
    def qmin(self) -> int:
        return -(1 << (self.bits - 1)) if self.symmetric else 0

    @property
    def qmax(self) -> int:
        return (1 << (self.bits - 1)) - 1 if self.symmetric else (1 << self.bits) - 1


@dataclass(frozen=True)
class QuantizedTensor:
    """Integer codes plus per-group scales/zero-points, round-trippable to floats."""

    codes: np.ndarray               # int64, shape = original
    scales: np.ndarray              # float64, (rows, n_groups)
    zero_points: np.ndarray | None  # int64, (rows, n_groups); None when symmetric
    shape: tuple[int, int]
    spec: QuantSpec

    def __post_init__(self):
        self.codes.flags.writeable = False
        self.scales.flags.writeable = False
        if self.zero_points is not None:
            self.zero_points.flags.writeable = False


@dataclass(frozen=True)
class CalibrationHessian:
    """Symmetric PSD proxy Hessian accumulated from calibration activations."""

    matrix: np.ndarray
    sample_count: int

    def __post_init__(self):
        self.matrix.flags.writeable = False


def round_half_away(x: np.ndarray) -> np.ndarray:
    """Round half away from zero (numpy's round is half-even)."""
    return np.trunc(x + np.copysign(0.5, x))


def _group_view(w: np.ndarray, group_size: int | None) -> np.ndarray:
    rows, cols = w.shape
    g = cols if group_size is None else group_size
    if cols % g != 0:
        raise GroupDoesNotDivideError(f"group size {g} does not divide row length {cols}")
    return w.reshape(rows, cols // g, g)


def _group_params(grouped: np.ndarray, spec: QuantSpec, ratio: np.ndarray):
    """Per-group (scale, zero_point, lo, hi) for a (rows, n_groups, g) array.

    ``ratio`` broadcasts against (rows, n_groups). The clip ratio shrinks both
    range ends toward the group midpoint (asymmetric) or shrinks max|w|
    (symmetric). Degenerate groups (one distinct value c) get an exact
    representation: scale |c| with the zero point one code below, or scale 1
    with code 0 when c == 0; either way the round trip is exact.
    """
    if spec.symmetric:
        amax = np.abs(grouped).max(axis=2) * ratio
        qpos = (1 << (spec.bits - 1)) - 1
        degenerate = amax == 0.0
        scale = np.where(degenerate, 1.0, amax / qpos)
        zero = None
        lo = -amax
        hi = amax
    else:
        mn = grouped.min(axis=2)
        mx = grouped.max(axis=2)
        mid = 0.5 * (mn + mx)
        half = 0.5 * (mx - mn) * ratio
        lo = mid - half
        hi = mid + half
        levels = (1 << spec.bits) - 1
        degenerate = mx == mn
        scale = np.where(degenerate, 1.0, (hi - lo) / levels)
        zero = np.clip(np.where(degenerate, 0.0, round_half_away(-lo / scale)),
                       spec.qmin, spec.qmax)
        if np.any(degenerate):
            c = grouped[..., 0]
            scale = np.where(degenerate, np.where(c == 0.0, 1.0, np.abs(c)), scale)
            zero = np.where(degenerate & (c < 0.0), 1.0, zero)
        zero = zero.astype(np.int64)
    return scale, zero, lo, hi


def _encode(grouped: np.ndarray, spec: QuantSpec, scale, zero, lo, hi):
    """Codes for a (rows, n_groups, g) array given per-group parameters.

    Values are clipped to [lo, hi] before rounding; degenerate groups have
    lo == hi so their codes land on the exact representation automatically.
    """
    clipped = np.clip(grouped, lo[..., None], hi[..., None])
    q = round_half_away(clipped / scale[..., None])
    if zero is not None:
        q = q + zero[..., None]
    return np.clip(q, spec.qmin, spec.qmax).astype(np.int64)


def _decode(codes: np.ndarray, scale, zero) -> np.ndarray:
    q = codes.astype(np.float64)
    if zero is not None:
        q = q - zero[..., None]
    return q * scale[..., None]


def _search_ratios(grouped: np.ndarray, spec: QuantSpec, grid,
                   chunk: int = 8) -> np.ndarray:
    """Per-group MSE-minimizing clip ratio; ties broken toward the larger ratio.

    Ratios are evaluated in descending order in broadcast batches: a (k, 1, 1)
    ratio block turns every per-group quantity into (k, rows, n_groups) and a
    single vectorized pass scores k ratios at once.
    """
    rows, n_groups, _ = grouped.shape
    best_err = np.full((rows, n_groups), np.inf)
    best_ratio = np.ones((rows, n_groups))
    ratios = sorted(set(grid), reverse=True)
    for start in range(0, len(ratios), chunk):
        block = ratios[start:start + chunk]
        ratio = np.asarray(block)[:, None, None]
        scale, zero, lo, hi = _group_params(grouped, spec, ratio)
        # same arithmetic as _encode followed by _decode, with the zero-point
        # add/sub folded into one shifted clamp; codes stay float (small ints
        # are exact) to skip the integer round trip
        x = np.clip(grouped, lo[..., None], hi[..., None])
        x /= scale[..., None]
        x += np.copysign(0.5, x)
        np.trunc(x, out=x)
        if zero is None:
            np.clip(x, spec.qmin, spec.qmax, out=x)
        else:
            zf = zero.astype(np.float64)[..., None]
            np.clip(x, spec.qmin - zf, spec.qmax - zf, out=x)
        x *= scale[..., None]
        x -= grouped
        np.square(x, out=x)
        err = x.sum(axis=-1)
        for i, r in enumerate(block):
            better = err[i] < best_err
            best_err = np.where(better, err[i], best_err)
            best_ratio = np.where(better, r, best_ratio)
    return best_ratio


def _effective_ratios(grouped: np.ndarray, spec: QuantSpec) -> np.ndarray:
    rows, n_groups, _ = grouped.shape
    clip = spec.clip
    if clip.kind == CLIP_NONE:
        return np.ones((rows, n_groups))
    if clip.kind == CLIP_RATIO:
        return np.full((rows, n_groups), clip.ratio)
    return _search_ratios(grouped, spec, clip.grid)


def rtn_quantize(w: np.ndarray, spec: QuantSpec) -> QuantizedTensor:
    """Round-to-nearest group quantization of a (rows, cols) matrix."""
    w = np.asarray(w, dtype=np.float64)
    grouped = _group_view(w, spec.group_size)
    ratio = _effective_ratios(grouped, spec)
    scale, zero, lo, hi = _group_params(grouped, spec, ratio)
    codes = _encode(grouped, spec, scale, zero, lo, hi)
    return QuantizedTensor(codes=codes.reshape(w.shape), scales=scale,
                           zero_points=zero, shape=w.shape, spec=spec)


def dequantize(q: QuantizedTensor) -> np.ndarray:
    """Reconstruct floats: (code - zero_point) * scale per element."""
    grouped = _group_view(q.codes, q.spec.group_size)
    return _decode(grouped, q.scales, q.zero_points).reshape(q.shape)


def mse_clip_search(group: np.ndarray, spec: QuantSpec,
                    grid: tuple[float, ...] = DEFAULT_MSE_GRID) -> tuple[float, float]:
    """Brute-force the clip ratio minimizing squared error on one group.

    Returns (ratio, error); ties broken toward the larger ratio. Degenerate
    (constant) groups return (1.0, 0.0).
    """
    if len(grid) == 0:
        raise InvalidSpecError("clip ratio grid must be non-empty")
    g = np.asarray(group, dtype=np.float64).reshape(1, 1, -1)
    if g[0, 0].max() == g[0, 0].min():
        return 1.0, 0.0
    best_ratio, best_err = 1.0, np.inf
    for r in sorted(set(grid), reverse=True):
        ratio = np.full((1, 1), r)
        scale, zero, lo, hi = _group_params(g, spec, ratio)
        codes = _encode(g, spec, scale, zero, lo, hi)
        err = float(((g - _decode(codes, scale, zero)) ** 2).sum())
        if err < best_err:
            best_err, best_ratio = err, r
    return best_ratio, best_err


def hessian_from_calibration(x: np.ndarray) -> CalibrationHessian:
    """Proxy Hessian 2 X^T X / samples from a (samples, d) activation matrix."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x.shape[0] < 1 or x.size == 0:
        raise EmptyCalibrationError("calibration requires at least one sample")
    h = 2.0 * (x.T @ x) / x.shape[0]
    h = 0.5 * (h + h.T)
    return CalibrationHessian(matrix=h, sample_count=x.shape[0])


def gptq_quantize(w: np.ndarray, hessian: CalibrationHessian,
                  spec: QuantSpec, damp: float = 0.01) -> QuantizedTensor:
    """Column-by-column quantization with Hessian-weighted error feedback.

    Per-group scales and zero-points are fixed up front from the (clipped)
    original weights; the left-to-right column sweep then propagates each
    column's rounding residual into the not-yet-quantized columns through the
    inverse-Hessian Cholesky factor. No activation reordering.

    At very low bit-widths the greedy sweep can occasionally lose to plain
    rounding once codes saturate the clamp range, so each row keeps whichever
    assignment (sweep or straight RTN, same scales) has the smaller proxy
    objective delta.T @ H @ delta. This guarantees the sweep never ends up
    worse than RTN under the proxy objective.
    """
    w = np.asarray(w, dtype=np.float64)
    rows, d = w.shape
    h = hessian.matrix
    if h.shape != (d, d):
        raise ShapeMismatchError(f"Hessian is {h.shape}, weights have {d} columns")
    grouped = _group_view(w, spec.group_size)
    g = grouped.shape[2]

    ratio = _effective_ratios(grouped, spec)
    scale, zero, lo, hi = _group_params(grouped, spec, ratio)

    hd = h + damp * np.mean(np.diag(h)) * np.eye(d)
    try:
        np.linalg.cholesky(hd)
        hinv = np.linalg.inv(hd)
        hinv = 0.5 * (hinv + hinv.T)
        u = np.linalg.cholesky(hinv).T  # upper triangular, hinv = u.T @ u
    except np.linalg.LinAlgError as exc:
        raise SingularHessianError(f"Cholesky failed after dampening: {exc}") from None

    work = w.copy()
    codes = np.empty((rows, d), dtype=np.int64)
    for j in range(d):
        gi = j // g
        col = work[:, j:j + 1].reshape(rows, 1, 1)
        zcol = None if zero is None else zero[:, gi:gi + 1]
        c = _encode(col, spec, scale[:, gi:gi + 1], zcol,
                    lo[:, gi:gi + 1], hi[:, gi:gi + 1])
        codes[:, j] = c.reshape(rows)
        deq = _decode(c, scale[:, gi:gi + 1], zcol).reshape(rows)
        err = (work[:, j] - deq) / u[j, j]
        if j + 1 < d:
            work[:, j + 1:] -= np.outer(err, u[j, j + 1:])

    rtn_codes = _encode(grouped, spec, scale, zero, lo, hi).reshape(rows, d)
    sweep_delta = w - _decode(_group_view(codes, spec.group_size), scale, zero).reshape(rows, d)
    rtn_delta = w - _decode(_group_view(rtn_codes, spec.group_size), scale, zero).reshape(rows, d)
    sweep_obj = np.einsum("rd,de,re->r", sweep_delta, h, sweep_delta)
    rtn_obj = np.einsum("rd,de,re->r", rtn_delta, h, rtn_delta)
    keep_rtn = rtn_obj < sweep_obj
    if np.any(keep_rtn):
        codes[keep_rtn] = rtn_codes[keep_rtn]

    return QuantizedTensor(codes=codes, scales=scale, zero_points=zero,
                           shape=w.shape, spec=spec)


METRIC_MSE = "mse"
METRIC_MAX_ABS = "max_abs"
METRIC_PROXY = "proxy"


def quant_error(w: np.ndarray, w_hat: np.ndarray, metric: str = METRIC_MSE,
                hessian: CalibrationHessian | None = None) -> float:
    """Elementwise error metrics between a matrix and its reconstruction."""
    w = np.asarray(w, dtype=np.float64)
    w_hat = np.asarray(w_hat, dtype=np.float64)
    if w.shape != w_hat.shape:
        raise ShapeMismatchError(f"shapes differ: {w.shape} vs {w_hat.shape}")
    delta = w - w_hat
    if metric == METRIC_MSE:
        return float(np.mean(delta ** 2))
    if metric == METRIC_MAX_ABS:
        return float(np.max(np.abs(delta))) if delta.size else 0.0
    if metric == METRIC_PROXY:
        if hessian is None:
            raise InvalidSpecError("proxy metric requires a Hessian")
        return float(np.trace(delta @ hessian.matrix @ delta.T))
    raise InvalidSpecError(f"unknown metric {metric!r}")


def proxy_objective(w: np.ndarray, w_hat: np.ndarray,
                    hessian: CalibrationHessian) -> float:
    return quant_error(w, w_hat, METRIC_PROXY, hessian)
