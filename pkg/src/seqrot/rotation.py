"""Rotation wiring for a toy LLaMA-style transformer block.

Weights are stored (in_dim, out_dim) and applied as ``y = x @ W``, so the
front rotation of a weight acts on its rows (input channels) and the rear
rotation on its columns. Fusing a front rotation R means replacing W by
R^T W; a block whose hidden states live in the rotated basis then computes
exactly the same function as the original block.

Slot layout: r1 rotates the hidden dimension between blocks, r2 the per-head
value/output dimension, r3 queries and keys after RoPE (online only), r4 the
down-projection input (online, with its transpose fused into the down
projection rows).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatchError, InvalidConfigError
from .transforms import (
    KIND_HADAMARD,
    KIND_WALSH,
    OrthoMatrix,
    _mix_seed,
    gsr,
    hadamard_sylvester,
    is_power_of_two,
    randomize_signs,
    walsh_from_hadamard,
)

WEIGHT_NAMES = ("wq", "wk", "wv", "wo", "wup", "wgate", "wdown")

R1, R2, R3, R4, IDENTITY = "r1", "r2", "r3", "r4", "identity"

VARIANT_IDENTITY = "identity"
VARIANT_GH = "gh"    # global Hadamard (randomized)
VARIANT_GW = "gw"    # global Walsh (unrandomized)
VARIANT_LH = "lh"    # local Hadamard blocks (randomized)
VARIANT_GSR = "gsr"  # local Walsh blocks (unrandomized)
VARIANTS = (VARIANT_GH, VARIANT_GW, VARIANT_LH, VARIANT_GSR)

R4_GLOBAL = "global"
R4_LOCAL = "local"


@dataclass(frozen=True)
class WeightRole:
    role: str
    front: str
    rear: str


def assignment_table() -> tuple[WeightRole, ...]:
    """Front/rear rotation slot per weight type."""
    return (
        WeightRole("wq", R1, IDENTITY),
        WeightRole("wk", R1, IDENTITY),
        WeightRole("wv", R1, R2),
        WeightRole("wo", R2, R1),
        WeightRole("wup", R1, IDENTITY),
        WeightRole("wgate", R1, IDENTITY),
        WeightRole("wdown", R4, R1),
    )


def as_dense(r, dtype=np.float64) -> np.ndarray:
    if isinstance(r, OrthoMatrix):
        return r.dense(dtype)
    return np.asarray(r, dtype=dtype)


def rotate_weight(w: np.ndarray, front=None, rear=None) -> np.ndarray:
    """W' = front^T @ W @ rear, either side may be None (identity)."""
    out = np.asarray(w, dtype=np.float64)
    if front is not None:
        f = as_dense(front)
        if f.shape[0] != out.shape[0]:
            raise DimensionMismatchError(
                f"front rotation order {f.shape[0]} != weight rows {out.shape[0]}")
        out = f.T @ out
    if rear is not None:
        r = as_dense(rear)
        if r.shape[0] != out.shape[1]:
            raise DimensionMismatchError(
                f"rear rotation order {r.shape[0]} != weight cols {out.shape[1]}")
        out = out @ r
    return out


def per_head_blockdiag(r: np.ndarray, heads: int) -> np.ndarray:
    """Expand a head_dim rotation to the full hidden dim, one block per head."""
    return np.kron(np.eye(heads), as_dense(r))


@dataclass(frozen=True)
class ToyBlockConfig:
    hidden: int = 64
    heads: int = 4
    ffn: int = 128
    group_size: int = 16
    seq_len: int = 8
    seed: int = 0

    def __post_init__(self):
        if not is_power_of_two(self.hidden) or not is_power_of_two(self.ffn):
            raise InvalidConfigError("hidden and ffn dims must be powers of two")
        if self.hidden < 2 or self.ffn < 2 or self.seq_len < 1 or self.heads < 1:
            raise InvalidConfigError("all dimensions must be at least 2 (seq/heads at least 1)")
        if self.hidden % self.heads != 0 or self.hidden // self.heads < 2:
            raise InvalidConfigError("heads must divide hidden dim with head_dim >= 2")
        if not is_power_of_two(self.group_size) or self.hidden % self.group_size != 0:
            raise InvalidConfigError("group size must be a power of two dividing hidden dim")

    @property
    def head_dim(self) -> int:
        return self.hidden // self.heads


@dataclass
class ToyBlock:
    """Weights plus any online rotations; immutable by convention after build."""

    cfg: ToyBlockConfig
    weights: dict
    r3_online: np.ndarray | None = None   # head_dim x head_dim
    r4_online: np.ndarray | None = None   # ffn x ffn
    input_rotation: np.ndarray | None = None  # hidden-basis change of the fused block
    fusion_log: tuple = ()


def build_toy_block(cfg: ToyBlockConfig) -> ToyBlock:
    """Deterministic seeded weights; RMSNorm scales are pre-folded to ones."""
    rng = np.random.default_rng(cfg.seed)
    c, h = cfg.hidden, cfg.ffn
    weights = {}
    for name in WEIGHT_NAMES:
        shape = {"wq": (c, c), "wk": (c, c), "wv": (c, c), "wo": (c, c),
                 "wup": (c, h), "wgate": (c, h), "wdown": (h, c)}[name]
        weights[name] = rng.standard_normal(shape) / np.sqrt(shape[0])
    return ToyBlock(cfg=cfg, weights=weights)


@dataclass(frozen=True)
class RotationAssignment:
    """Which rotation to place in each slot; strings name a variant or a file path."""

    r1: str = VARIANT_IDENTITY
    r2: str = VARIANT_IDENTITY
    r3: str = VARIANT_IDENTITY
    r4: str = VARIANT_IDENTITY
    r4_mode: str = R4_GLOBAL
    seed: int = 0


def resolve_variant(kind: str, size: int, group: int, seed: int,
                    local: bool = False):
    """Build (or load) the rotation for one slot; None means identity.

    Randomization follows the usual convention: Hadamard-family matrices get
    seeded diagonal sign flips, Walsh-family matrices are left as constructed.
    """
    if kind == VARIANT_IDENTITY:
        return None
    if kind in VARIANTS:
        if local:
            kind = {VARIANT_GH: VARIANT_LH, VARIANT_GW: VARIANT_GSR}.get(kind, kind)
        if kind == VARIANT_GH:
            return randomize_signs(hadamard_sylvester(size), seed)
        if kind == VARIANT_GW:
            return walsh_from_hadamard(hadamard_sylvester(size))
        if kind == VARIANT_LH:
            return gsr(size, group, base=KIND_HADAMARD, seed=seed)
        return gsr(size, group, base=KIND_WALSH)
    from .tensorfile import load_rotation_dense

    dense = load_rotation_dense(kind)
    if dense.shape[0] != size:
        raise DimensionMismatchError(
            f"external rotation {kind} has order {dense.shape[0]}, slot needs {size}")
    return dense


def resolve_assignment(assign: RotationAssignment, cfg: ToyBlockConfig) -> dict:
    g = cfg.group_size
    return {
        R1: resolve_variant(assign.r1, cfg.hidden, g, _mix_seed(assign.seed, 1)),
        R2: resolve_variant(assign.r2, cfg.head_dim, min(g, cfg.head_dim),
                            _mix_seed(assign.seed, 2)),
        R3: resolve_variant(assign.r3, cfg.head_dim, min(g, cfg.head_dim),
                            _mix_seed(assign.seed, 3)),
        R4: resolve_variant(assign.r4, cfg.ffn, g, _mix_seed(assign.seed, 4),
                            local=assign.r4_mode == R4_LOCAL),
    }


def fuse_rotations(block: ToyBlock, assign: RotationAssignment) -> ToyBlock:
    """Rotate every weight per the assignment table; returns a new block.

    r3 and r4 stay online (r4 additionally folds its transpose into the down
    projection rows). The fused block consumes and produces hidden states in
    the r1-rotated basis; ``input_rotation`` records that basis change.
    """
    cfg = block.cfg
    rots = resolve_assignment(assign, cfg)
    r1, r2, r3, r4 = rots[R1], rots[R2], rots[R3], rots[R4]
    r2_full = None if r2 is None else per_head_blockdiag(r2, cfg.heads)

    slot_matrix = {R1: r1, R2: r2_full, R4: r4, IDENTITY: None}
    weights = {}
    log = []
    for role in assignment_table():
        front = slot_matrix[role.front]
        rear = slot_matrix[role.rear]
        weights[role.role] = rotate_weight(block.weights[role.role], front, rear)
        log.append((role.role, role.front, role.rear))

    return ToyBlock(
        cfg=cfg,
        weights=weights,
        r3_online=None if r3 is None else as_dense(r3),
        r4_online=None if r4 is None else as_dense(r4),
        input_rotation=None if r1 is None else as_dense(r1),
        fusion_log=tuple(log),
    )


def _rms_norm(x: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    return x / np.sqrt(np.mean(x * x, axis=-1, keepdims=True) + eps)


def _rope(x: np.ndarray, theta: float = 10000.0) -> np.ndarray:
    """Rotary embedding over (seq, heads, head_dim), half-split pairing."""
    seq, _, hd = x.shape
    half = hd // 2
    pos = np.arange(seq, dtype=x.dtype)[:, None]
    freq = theta ** (-np.arange(half, dtype=x.dtype) / half)
    ang = pos * freq[None, :]
    cos = np.cos(ang)[:, None, :]
    sin = np.sin(ang)[:, None, :]
    lo, hi = x[..., :half], x[..., half:]
    return np.concatenate([lo * cos - hi * sin, lo * sin + hi * cos], axis=-1)


def _softmax(x: np.ndarray) -> np.ndarray:
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def _silu(x: np.ndarray) -> np.ndarray:
    return x / (1.0 + np.exp(-x))


def _maybe_quantize_weight(w: np.ndarray, spec) -> np.ndarray:
    """Fake-quantize a weight: groups run along input channels of each output."""
    from .quant import dequantize, rtn_quantize

    return dequantize(rtn_quantize(w.T, spec)).T


def _fake_quantize_activation(a: np.ndarray, spec) -> np.ndarray:
    from .quant import dequantize, rtn_quantize

    return dequantize(rtn_quantize(a, spec))


def forward(block: ToyBlock, x: np.ndarray, weight_spec=None, act_spec=None,
            dtype=np.float64) -> np.ndarray:
    """RMSNorm -> causal attention (RoPE) -> residual -> RMSNorm -> SwiGLU -> residual.

    With ``weight_spec`` every weight is round-tripped through the group
    quantizer; with ``act_spec`` the down-projection input is fake-quantized
    (symmetric RTN) after the online r4 rotation.
    """
    cfg = block.cfg
    x = np.asarray(x, dtype=dtype)
    if x.ndim != 2 or x.shape[1] != cfg.hidden:
        raise DimensionMismatchError(f"input must be (seq, {cfg.hidden}), got {x.shape}")
    seq = x.shape[0]
    hd = cfg.head_dim

    wts = dict(block.weights)
    if weight_spec is not None:
        wts = {k: _maybe_quantize_weight(v, weight_spec) for k, v in wts.items()}
    wts = {k: v.astype(dtype) for k, v in wts.items()}

    h = _rms_norm(x)
    q = (h @ wts["wq"]).reshape(seq, cfg.heads, hd)
    k = (h @ wts["wk"]).reshape(seq, cfg.heads, hd)
    v = (h @ wts["wv"]).reshape(seq, cfg.heads, hd)
    q = _rope(q)
    k = _rope(k)
    if block.r3_online is not None:
        r3 = block.r3_online.astype(dtype)
        q = q @ r3
        k = k @ r3

    scores = np.einsum("thd,shd->hts", q, k) / np.sqrt(np.asarray(hd, dtype=dtype))
    mask = np.triu(np.full((seq, seq), -np.inf, dtype=dtype), k=1)
    attn = _softmax(scores + mask[None, :, :])
    ctx = np.einsum("hts,shd->thd", attn, v).reshape(seq, cfg.hidden)
    x = x + ctx @ wts["wo"]

    h2 = _rms_norm(x)
    a = _silu(h2 @ wts["wgate"]) * (h2 @ wts["wup"])
    if block.r4_online is not None:
        a = a @ block.r4_online.astype(dtype)
    if act_spec is not None:
        a = _fake_quantize_activation(a, act_spec).astype(dtype)
    return x + a @ wts["wdown"]


def front_rotation_locality(w: np.ndarray, front, rear, group_index: int,
                          group_size: int, seed: int = 0,
                          tolerance: float = 1e-12) -> bool:
    """Perturbation test: rows of one rotated-weight group depend only on the
    matching column group of the front rotation.

    Replaces the front rotation's columns outside the chosen group with random
    values and checks the group's rows of W' are unchanged.
    """
    w = np.asarray(w, dtype=np.float64)
    if w.shape[0] % group_size != 0:
        raise DimensionMismatchError(
            f"group size {group_size} does not divide weight rows {w.shape[0]}")
    lo = group_index * group_size
    hi = lo + group_size
    base = rotate_weight(w, front, rear)
    f = as_dense(front).copy()
    rng = np.random.default_rng(seed)
    outside = np.ones(f.shape[1], dtype=bool)
    outside[lo:hi] = False
    f[:, outside] = rng.standard_normal((f.shape[0], int(outside.sum())))
    perturbed = rotate_weight(w, f, rear)
    return bool(np.max(np.abs(perturbed[lo:hi] - base[lo:hi])) <= tolerance)


def invariance_max_diff(cfg: ToyBlockConfig, assign: RotationAssignment,
                        input_seed: int = 0, dtype=np.float64) -> float:
    """max |fused forward - reference forward| on a random input, full precision.

    The fused block runs in the rotated hidden basis, so the input is rotated
    in and the output rotated back before comparing.
    """
    block = build_toy_block(cfg)
    fused = fuse_rotations(block, assign)
    rng = np.random.default_rng(input_seed)
    x = rng.standard_normal((cfg.seq_len, cfg.hidden))
    y_ref = forward(block, x, dtype=dtype)
    if fused.input_rotation is None:
        y_fused = forward(fused, x, dtype=dtype)
    else:
        r1 = fused.input_rotation.astype(dtype)
        y_fused = forward(fused, x.astype(dtype) @ r1, dtype=dtype) @ r1.T
    return float(np.max(np.abs(y_fused - y_ref)))
