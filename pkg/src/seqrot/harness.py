"""Experiment harness: rotation-variant comparisons, sequency-variance tables
and the global-vs-local ablation of the online FFN rotation.

Every variant in a comparison consumes byte-identical corpus tensors and the
same quantizer spec; SHA-256 fingerprints of the consumed bytes are recorded
per variant so a report can prove its own fairness.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .corpus import CorpusSpec, corpus_hash, gen_corpus
from .errors import DimensionMismatchError, InvalidSpecError
from .quant import (
    METRIC_MAX_ABS,
    METRIC_MSE,
    METRIC_PROXY,
    CalibrationHessian,
    QuantSpec,
    dequantize,
    gptq_quantize,
    hessian_from_calibration,
    quant_error,
    rtn_quantize,
)
from .rotation import (
    RotationAssignment,
    ToyBlockConfig,
    as_dense,
    build_toy_block,
    forward,
    fuse_rotations,
    resolve_variant,
)
from .transforms import _mix_seed, natural_sequency_formula

METRICS = (METRIC_MSE, METRIC_MAX_ABS, METRIC_PROXY)

QUANTIZER_RTN = "rtn"
QUANTIZER_GPTQ = "gptq"

DEFAULT_PAIRS = (("gw", "gh"), ("gsr", "lh"), ("gsr", "gh"))


@dataclass
class ExperimentReport:
    variants: tuple
    metrics: tuple
    per_tensor: dict            # variant -> metric -> np.ndarray over tensors
    summary: dict               # variant -> metric -> {"mean": .., "median": ..}
    corpus_hash: str
    fairness_hashes: dict       # variant -> sha256 of consumed corpus bytes
    quantizer: str
    config: dict = field(default_factory=dict)

    def fairness_ok(self) -> bool:
        return all(h == self.corpus_hash for h in self.fairness_hashes.values())


def run_comparison(corpus, variants, wspec: QuantSpec | None,
                   quantizer: str = QUANTIZER_RTN, seed: int = 0,
                   calib_samples: int = 256) -> ExperimentReport:
    """Rotate, quantize, rotate back, and score every (tensor, variant) pair.

    The rotation under test plays the hidden-state slot of a query-type
    weight: it acts on the input-channel (column) dimension and the rear side
    is the identity. ``wspec=None`` skips quantization, which isolates the
    rotate/rotate-back round trip.
    """
    if quantizer not in (QUANTIZER_RTN, QUANTIZER_GPTQ):
        raise InvalidSpecError(f"unknown quantizer {quantizer!r}")
    cols = corpus[0].shape[1]
    for t in corpus:
        if t.shape[1] != cols:
            raise DimensionMismatchError("corpus tensors must share their column count")
    group = (wspec.group_size if wspec and wspec.group_size else cols)

    mats = {}
    for idx, v in enumerate(variants):
        r = resolve_variant(v, cols, group, _mix_seed(seed, 100 + idx))
        mats[v] = None if r is None else as_dense(r)

    rng = np.random.default_rng(_mix_seed(seed, 7))
    h_base = hessian_from_calibration(rng.standard_normal((calib_samples, cols)))

    per_tensor = {v: {m: np.zeros(len(corpus)) for m in METRICS} for v in variants}
    fairness = {}
    for v in variants:
        r1 = mats[v]
        if quantizer == QUANTIZER_GPTQ:
            hm = h_base.matrix if r1 is None else r1.T @ h_base.matrix @ r1
            h_rot = CalibrationHessian(matrix=0.5 * (hm + hm.T),
                                       sample_count=h_base.sample_count)
        hasher = hashlib.sha256()
        for i, w in enumerate(corpus):
            w = np.ascontiguousarray(w, dtype=np.float64)
            hasher.update(w.tobytes())
            rotated = w if r1 is None else w @ r1
            if wspec is None:
                w_hat = rotated
            elif quantizer == QUANTIZER_RTN:
                w_hat = dequantize(rtn_quantize(rotated, wspec))
            else:
                w_hat = dequantize(gptq_quantize(rotated, h_rot, wspec))
            back = w_hat if r1 is None else w_hat @ r1.T
            per_tensor[v][METRIC_MSE][i] = quant_error(w, back, METRIC_MSE)
            per_tensor[v][METRIC_MAX_ABS][i] = quant_error(w, back, METRIC_MAX_ABS)
            per_tensor[v][METRIC_PROXY][i] = quant_error(w, back, METRIC_PROXY, h_base)
        fairness[v] = hasher.hexdigest()

    summary = {v: {m: {"mean": float(np.mean(per_tensor[v][m])),
                       "median": float(np.median(per_tensor[v][m]))}
                   for m in METRICS} for v in variants}
    return ExperimentReport(
        variants=tuple(variants), metrics=METRICS, per_tensor=per_tensor,
        summary=summary, corpus_hash=corpus_hash(corpus),
        fairness_hashes=fairness, quantizer=quantizer,
        config={"seed": seed, "calib_samples": calib_samples,
                "wspec": None if wspec is None else vars(wspec)})


def sign_test(a, b) -> tuple[int, int, float]:
    """One-sided paired sign test for 'a < b': (wins, effective_n, p_value).

    Ties are dropped; the p-value is the exact binomial tail
    P(X >= wins | n, 1/2).
    """
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise DimensionMismatchError("paired samples must have equal length")
    wins = int(np.count_nonzero(a < b))
    losses = int(np.count_nonzero(a > b))
    n = wins + losses
    if n == 0:
        return 0, 0, 1.0
    p = sum(math.comb(n, k) for k in range(wins, n + 1)) / 2.0 ** n
    return wins, n, float(p)


@dataclass(frozen=True)
class DirectionalResult:
    better: str
    worse: str
    metric: str
    median_better: float
    median_worse: float
    wins: int
    n: int
    p_value: float

    @property
    def holds(self) -> bool:
        return self.median_better < self.median_worse and self.p_value < 0.05


def directional_tests(report: ExperimentReport, pairs=DEFAULT_PAIRS,
                      metric: str = METRIC_MSE) -> list[DirectionalResult]:
    """Median comparison plus sign test for each (expected-better, worse) pair."""
    out = []
    for a, b in pairs:
        if a not in report.per_tensor or b not in report.per_tensor:
            continue
        xa = report.per_tensor[a][metric]
        xb = report.per_tensor[b][metric]
        wins, n, p = sign_test(xa, xb)
        out.append(DirectionalResult(
            better=a, worse=b, metric=metric,
            median_better=float(np.median(xa)), median_worse=float(np.median(xb)),
            wins=wins, n=n, p_value=p))
    return out


def sequency_variance_report(n: int, group: int) -> dict:
    """Per-group sequency variance of natural versus sequency-ordered rows."""
    if n % group != 0:
        raise DimensionMismatchError(f"group {group} does not divide order {n}")
    natural = natural_sequency_formula(n).astype(np.float64).reshape(-1, group)
    walsh = np.arange(n, dtype=np.float64).reshape(-1, group)
    return {
        "n": n,
        "group": group,
        "natural_variance": natural.var(axis=1),
        "walsh_variance": walsh.var(axis=1),
        "natural_mean_variance": float(natural.var(axis=1).mean()),
        "walsh_mean_variance": float(walsh.var(axis=1).mean()),
    }


def sequency_variance_sweep(max_n: int = 4096) -> list[dict]:
    """Mean group variance of both orderings for every (n, G), 2 <= G < n."""
    out = []
    n = 4
    while n <= max_n:
        seq = natural_sequency_formula(n).astype(np.float64)
        g = 2
        while g < n:
            nat = seq.reshape(-1, g).var(axis=1).mean()
            wal = np.arange(n, dtype=np.float64).reshape(-1, g).var(axis=1).mean()
            out.append({"n": n, "group": g, "natural": float(nat), "walsh": float(wal)})
            g *= 2
        n *= 2
    return out


def bootstrap_median_ci(diffs, n_boot: int = 1000, seed: int = 0,
                        alpha: float = 0.05) -> tuple[float, float]:
    """Percentile bootstrap confidence interval for the median."""
    diffs = np.asarray(diffs, dtype=np.float64)
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, diffs.size, size=(n_boot, diffs.size))
    medians = np.median(diffs[idx], axis=1)
    return (float(np.quantile(medians, alpha / 2)),
            float(np.quantile(medians, 1 - alpha / 2)))


@dataclass
class AblationReport:
    modes: tuple
    settings: tuple
    cells: dict          # mode -> setting -> np.ndarray over seeds
    medians: dict        # mode -> setting -> float
    diff_ci: dict        # setting -> (lo, hi) for median(local - global)
    significant: dict    # setting -> bool (CI excludes zero)
    config: dict


def r4_ablation(cfg: ToyBlockConfig, modes=("global", "local"),
                weight_spec: QuantSpec | None = None,
                act_spec: QuantSpec | None = None,
                n_seeds: int = 20, r1_kind: str = "gsr",
                r4_kind: str = "gh", base_seed: int = 0) -> AblationReport:
    """Global-vs-local online FFN rotation under weight/activation quantization.

    Cells are output MSE against the unrotated full-precision block:
    the no-quant setting checks invariance, the weight-only and
    weight+activation settings measure the quantization damage per mode.
    """
    weight_spec = weight_spec or QuantSpec(bits=2, group_size=cfg.group_size)
    act_spec = act_spec or QuantSpec(bits=4, group_size=cfg.group_size,
                                     symmetric=True)
    wlabel = f"w{weight_spec.bits}"
    settings = ("w16a16", wlabel, f"{wlabel}a{act_spec.bits}")
    quant_for = {"w16a16": (None, None), wlabel: (weight_spec, None),
                 settings[2]: (weight_spec, act_spec)}

    cells = {mode: {s: np.zeros(n_seeds) for s in settings} for mode in modes}
    for i in range(n_seeds):
        seed = base_seed + i
        cfg_i = replace(cfg, seed=_mix_seed(seed, 1))
        block = build_toy_block(cfg_i)
        rng = np.random.default_rng(_mix_seed(seed, 2))
        x = rng.standard_normal((cfg.seq_len, cfg.hidden))
        y_ref = forward(block, x)
        for mode in modes:
            assign = RotationAssignment(r1=r1_kind, r4=r4_kind, r4_mode=mode,
                                        seed=_mix_seed(seed, 3))
            fused = fuse_rotations(block, assign)
            r1 = fused.input_rotation
            x_in = x if r1 is None else x @ r1
            for s in settings:
                wspec, aspec = quant_for[s]
                y = forward(fused, x_in, weight_spec=wspec, act_spec=aspec)
                if r1 is not None:
                    y = y @ r1.T
                cells[mode][s][i] = float(np.mean((y - y_ref) ** 2))

    medians = {mode: {s: float(np.median(cells[mode][s])) for s in settings}
               for mode in modes}
    diff_ci = {}
    significant = {}
    if "global" in modes and "local" in modes:
        for s in settings:
            diffs = cells["local"][s] - cells["global"][s]
            lo, hi = bootstrap_median_ci(diffs, seed=base_seed)
            diff_ci[s] = (lo, hi)
            significant[s] = lo > 0 or hi < 0
    return AblationReport(
        modes=tuple(modes), settings=settings, cells=cells, medians=medians,
        diff_ci=diff_ci, significant=significant,
        config={"cfg": vars(cfg), "n_seeds": n_seeds, "r1": r1_kind,
                "r4": r4_kind, "base_seed": base_seed,
                "weight_bits": weight_spec.bits, "act_bits": act_spec.bits})


def default_corpus_spec(seed: int = 0) -> CorpusSpec:
    return CorpusSpec(seed=seed)


def default_weight_spec() -> QuantSpec:
    from .quant import Clip

    return QuantSpec(bits=2, group_size=64, clip=Clip.mse())


def run_default_comparison(seed: int = 0, count: int = 100,
                           quantizer: str = QUANTIZER_RTN) -> ExperimentReport:
    """The standard structured-corpus comparison across all four variants."""
    spec = replace(default_corpus_spec(seed), count=count)
    corpus = gen_corpus(spec)
    report = run_comparison(corpus, ("gh", "gw", "lh", "gsr"),
                            default_weight_spec(), quantizer=quantizer, seed=seed)
    report.config["corpus"] = vars(spec)
    return report
