"""Command-line interface: construction, inspection, quantization and comparisons.

Exit codes: 0 success, 1 computation or tolerance failure, 2 usage errors.
Every run echoes its full flag set (one `# config:` line) so it can be
reproduced bit-identically; tables go to stdout, diagnostics to stderr.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from . import harness
from .corpus import CorpusSpec, gen_corpus
from .errors import SeqrotError
from .quant import (
    Clip,
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
    invariance_max_diff,
)
from .tensorfile import (
    read_tensor,
    save_quantized,
    save_rotation,
    write_report,
)
from .transforms import (
    OrthoMatrix,
    is_power_of_two,
    orthogonality_residual,
    sequency_profile,
)

USAGE_ERROR = 2
RUN_ERROR = 1


class UsageError(Exception):
    pass


def _echo(command: str, flags: dict) -> None:
    parts = []
    for k, v in flags.items():
        if v is None or v is False:
            continue
        flag = f"--{k.replace('_', '-')}"
        parts.append(flag if v is True else f"{flag} {v}")
    print(f"# config: seqrot {command} " + " ".join(parts))


def _parse_clip(text: str) -> Clip:
    if text == "none":
        return Clip.none()
    if text == "mse":
        return Clip.mse()
    if text.startswith("ratio:"):
        try:
            return Clip.fixed(float(text.split(":", 1)[1]))
        except ValueError:
            pass
    raise UsageError(f"bad --clip value {text!r} (use none, mse or ratio:R)")


def _sequency_summary(m: OrthoMatrix, group: int | None) -> str:
    prof = sequency_profile(m, group or m.group_size or m.n)
    seq = prof.per_row_sequency
    lines = []
    if m.n <= 64:
        lines.append("row sequencies: " + " ".join(str(int(s)) for s in seq))
    else:
        lines.append(f"row sequencies: min {seq.min()} max {seq.max()} "
                     f"(n={m.n})")
    lines.append("group sequency variance: " +
                 " ".join(f"{v:.4g}" for v in prof.per_group_variance[:16]) +
                 (" ..." if prof.per_group_variance.size > 16 else ""))
    return "\n".join(lines)


def cmd_make_rotation(args) -> int:
    _echo("make-rotation", {
        "kind": args.kind, "n": args.n, "group": args.group,
        "randomize": args.randomize, "seed": args.seed, "out": args.out})
    if not is_power_of_two(args.n):
        raise UsageError("n must be a power of two")
    if args.kind in ("lh", "gsr"):
        if args.group is None:
            raise UsageError("--group is required for lh/gsr")
        if not is_power_of_two(args.group) or args.n % args.group != 0:
            raise UsageError("group must be a power of two dividing n")
    from .transforms import gsr, hadamard_sylvester, randomize_signs, walsh_from_hadamard

    seed = args.seed if args.randomize else None
    if args.kind == "gh":
        m = hadamard_sylvester(args.n)
    elif args.kind == "gw":
        m = walsh_from_hadamard(hadamard_sylvester(args.n))
    elif args.kind == "lh":
        m = gsr(args.n, args.group, base="hadamard", seed=seed)
    else:
        m = gsr(args.n, args.group, base="walsh", seed=seed)
    if args.randomize and args.kind in ("gh", "gw"):
        m = randomize_signs(m, args.seed)
    residual = orthogonality_residual(m)
    print(f"kind {args.kind}  n {args.n}  orthogonality residual {residual:.3e}")
    print(_sequency_summary(m, args.group))
    if args.out:
        save_rotation(args.out, m)
        print(f"wrote {args.out}")
    return 0


def cmd_inspect(args) -> int:
    _echo("inspect", {"file": args.file, "group": args.group})
    arr, meta = read_tensor(args.file)
    print(f"shape {arr.shape}  dtype {arr.dtype}  metadata {meta}")
    if meta.get("content") == "rotation" and arr.dtype == np.int8:
        from .tensorfile import load_rotation

        m = load_rotation(args.file)
        print(f"orthogonality residual {orthogonality_residual(m):.3e}")
        print(_sequency_summary(m, args.group))
    elif arr.ndim == 2 and arr.shape[0] == arr.shape[1]:
        residual = orthogonality_residual(arr.astype(np.float64))
        print(f"orthogonality residual {residual:.3e}")
    return 0


def cmd_quantize(args) -> int:
    _echo("quantize", {
        "file": args.file, "bits": args.bits, "group": args.group,
        "scheme": args.scheme, "clip": args.clip, "symmetric": args.symmetric,
        "calib_samples": args.calib_samples, "seed": args.seed, "out": args.out})
    arr, _ = read_tensor(args.file)
    w = arr.astype(np.float64)
    if w.ndim != 2:
        raise UsageError(f"quantize expects a 2-D tensor, got shape {w.shape}")
    spec = QuantSpec(bits=args.bits, group_size=args.group,
                     symmetric=args.symmetric, clip=_parse_clip(args.clip))
    if args.scheme == "rtn":
        qt = rtn_quantize(w, spec)
    else:
        rng = np.random.default_rng(args.seed)
        h = hessian_from_calibration(rng.standard_normal((args.calib_samples,
                                                          w.shape[1])))
        qt = gptq_quantize(w, h, spec)
    w_hat = dequantize(qt)
    print(f"mse {quant_error(w, w_hat, 'mse'):.17g}")
    print(f"max_abs {quant_error(w, w_hat, 'max_abs'):.17g}")
    if args.out:
        save_quantized(args.out, qt)
        print(f"wrote {args.out}")
    return 0


def cmd_compare(args) -> int:
    flags = {
        "variants": args.variants, "bits": args.bits, "group": args.group,
        "quantizer": args.quantizer, "clip": args.clip, "count": args.count,
        "rows": args.rows, "cols": args.cols, "dist": args.dist,
        "t-dof": args.t_dof, "outliers": args.outliers,
        "outlier-gain": args.outlier_gain, "smooth": args.smooth,
        "seed": args.seed, "out": args.out}
    _echo("compare", flags)
    variants = tuple(args.variants.split(","))
    spec = CorpusSpec(count=args.count, rows=args.rows, cols=args.cols,
                      base_dist=args.dist, t_dof=args.t_dof,
                      outlier_channels=args.outliers,
                      outlier_gain=args.outlier_gain,
                      smooth_weight=args.smooth, seed=args.seed)
    wspec = QuantSpec(bits=args.bits, group_size=args.group,
                      clip=_parse_clip(args.clip))
    corpus = gen_corpus(spec)
    report = harness.run_comparison(corpus, variants, wspec,
                                    quantizer=args.quantizer, seed=args.seed)
    report.config["corpus"] = vars(spec)

    print(f"# corpus sha256 {report.corpus_hash}")
    fair = report.fairness_ok()
    print(f"# fairness hashes identical: {fair}")
    header = f"{'variant':10s}" + "".join(
        f"{m + '.' + s:>16s}" for m in report.metrics for s in ("median", "mean"))
    print(header)
    for v in report.variants:
        row = f"{v:10s}"
        for m in report.metrics:
            row += f"{report.summary[v][m]['median']:16.6g}"
            row += f"{report.summary[v][m]['mean']:16.6g}"
        print(row)
    for r in harness.directional_tests(report):
        verdict = "CONFIRMED" if r.holds else "NOT CONFIRMED"
        print(f"directional {r.better}<{r.worse} ({r.metric}): "
              f"median {r.median_better:.6g} vs {r.median_worse:.6g}, "
              f"wins {r.wins}/{r.n}, sign-test p {r.p_value:.3e} -> {verdict}")
    if not fair:
        print("fairness check failed", file=sys.stderr)
        return RUN_ERROR
    if args.out:
        write_report(args.out, report)
        print(f"wrote {args.out}")
    return 0


def cmd_invariance(args) -> int:
    flags = {"r1": args.r1, "r2": args.r2, "r3": args.r3, "r4": args.r4,
             "r4-mode": args.r4_mode, "hidden": args.hidden, "heads": args.heads,
             "ffn": args.ffn, "group": args.group, "seq-len": args.seq_len,
             "seeds": args.seeds, "precision": args.precision, "seed": args.seed}
    _echo("invariance", flags)
    dtype = np.float64 if args.precision == "f64" else np.float32
    tol = 1e-10 if args.precision == "f64" else 1e-4
    worst = 0.0
    for s in range(args.seeds):
        cfg = ToyBlockConfig(hidden=args.hidden, heads=args.heads, ffn=args.ffn,
                             group_size=args.group, seq_len=args.seq_len,
                             seed=args.seed + s)
        assign = RotationAssignment(r1=args.r1, r2=args.r2, r3=args.r3,
                                    r4=args.r4, r4_mode=args.r4_mode,
                                    seed=args.seed + s)
        worst = max(worst, invariance_max_diff(cfg, assign, input_seed=args.seed + s,
                                               dtype=dtype))
    ok = worst < tol
    print(f"max abs diff = {worst:.3e} {'<' if ok else '>='} {tol:.0e}: "
          f"{'PASS' if ok else 'FAIL'}")
    return 0 if ok else RUN_ERROR


def cmd_r4_ablation(args) -> int:
    flags = {"hidden": args.hidden, "heads": args.heads, "ffn": args.ffn,
             "group": args.group, "seq-len": args.seq_len, "seeds": args.seeds,
             "bits": args.bits, "act-bits": args.act_bits, "r1": args.r1,
             "seed": args.seed}
    _echo("r4-ablation", flags)
    cfg = ToyBlockConfig(hidden=args.hidden, heads=args.heads, ffn=args.ffn,
                         group_size=args.group, seq_len=args.seq_len)
    wspec = QuantSpec(bits=args.bits, group_size=args.group, clip=Clip.mse())
    aspec = QuantSpec(bits=args.act_bits, group_size=args.group, symmetric=True,
                      clip=Clip.fixed(0.9))
    rep = harness.r4_ablation(cfg, weight_spec=wspec, act_spec=aspec,
                              n_seeds=args.seeds, r1_kind=args.r1,
                              base_seed=args.seed)
    print(f"{'r4 mode':10s}" + "".join(f"{s + '.medianMSE':>20s}" for s in rep.settings))
    for mode in rep.modes:
        print(f"{mode:10s}" + "".join(f"{rep.medians[mode][s]:20.6g}"
                                      for s in rep.settings))
    for s in rep.settings:
        lo, hi = rep.diff_ci[s]
        tag = "significant" if rep.significant[s] else "not significant"
        print(f"local-global median diff [{s}]: CI95 [{lo:.4g}, {hi:.4g}] -> {tag}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="seqrot")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--out", default=None)
    common.add_argument("--precision", choices=("f32", "f64"), default="f64")

    p = sub.add_parser("make-rotation", parents=[common])
    p.add_argument("--kind", choices=("gh", "gw", "lh", "gsr"), required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--group", type=int, default=None)
    p.add_argument("--randomize", action="store_true")
    p.set_defaults(func=cmd_make_rotation)

    p = sub.add_parser("inspect", parents=[common])
    p.add_argument("--file", required=True)
    p.add_argument("--group", type=int, default=None)
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("quantize", parents=[common])
    p.add_argument("--file", required=True)
    p.add_argument("--bits", type=int, required=True)
    p.add_argument("--group", type=int, default=None)
    p.add_argument("--scheme", choices=("rtn", "gptq"), default="rtn")
    p.add_argument("--clip", default="none")
    p.add_argument("--symmetric", action="store_true")
    p.add_argument("--calib-samples", type=int, default=256)
    p.set_defaults(func=cmd_quantize)

    p = sub.add_parser("compare", parents=[common])
    p.add_argument("--variants", default="gh,gw,lh,gsr")
    p.add_argument("--bits", type=int, default=2)
    p.add_argument("--group", type=int, default=64)
    p.add_argument("--quantizer", choices=("rtn", "gptq"), default="rtn")
    p.add_argument("--clip", default="mse")
    p.add_argument("--count", type=int, default=100)
    p.add_argument("--rows", type=int, default=512)
    p.add_argument("--cols", type=int, default=512)
    p.add_argument("--dist", choices=("gaussian", "student_t"), default="student_t")
    p.add_argument("--t-dof", type=float, default=4.0)
    p.add_argument("--outliers", type=int, default=4)
    p.add_argument("--outlier-gain", type=float, default=20.0)
    p.add_argument("--smooth", type=float, default=0.3)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("invariance", parents=[common])
    for slot in ("r1", "r2", "r3", "r4"):
        p.add_argument(f"--{slot}", default="identity")
    p.add_argument("--r4-mode", choices=("global", "local"), default="global")
    p.add_argument("--hidden", type=int, default=64)
    p.add_argument("--heads", type=int, default=4)
    p.add_argument("--ffn", type=int, default=128)
    p.add_argument("--group", type=int, default=16)
    p.add_argument("--seq-len", type=int, default=8)
    p.add_argument("--seeds", type=int, default=20)
    p.set_defaults(func=cmd_invariance)

    p = sub.add_parser("r4-ablation", parents=[common])
    p.add_argument("--hidden", type=int, default=64)
    p.add_argument("--heads", type=int, default=4)
    p.add_argument("--ffn", type=int, default=128)
    p.add_argument("--group", type=int, default=16)
    p.add_argument("--seq-len", type=int, default=8)
    p.add_argument("--seeds", type=int, default=20)
    p.add_argument("--bits", type=int, default=2)
    p.add_argument("--act-bits", type=int, default=4)
    p.add_argument("--r1", default="gsr")
    p.set_defaults(func=cmd_r4_ablation)
    return parser


def main(argv=None) -> int:
    from .errors import (
        GroupDoesNotDivideError,
        InvalidConfigError,
        InvalidSpecError,
        NonPowerOfTwoError,
    )

    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    except (NonPowerOfTwoError, GroupDoesNotDivideError, InvalidSpecError,
            InvalidConfigError) as exc:
        # bad user-supplied values surface as usage errors, like argparse's own
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    except SeqrotError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return RUN_ERROR


if __name__ == "__main__":
    sys.exit(main())
