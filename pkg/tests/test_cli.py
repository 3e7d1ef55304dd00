import numpy as np
import pytest

from seqrot.cli import main
from seqrot.quant import rtn_quantize
from seqrot.tensorfile import load_quantized, load_rotation, read_report, write_tensor
from seqrot.transforms import orthogonality_residual


def run_cli(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


class TestMakeRotation:
    def test_gw_prints_ascending_sequencies(self, capsys):
        code, out, _ = run_cli(capsys, "make-rotation", "--kind", "gw", "--n", "8")
        assert code == 0
        assert "0 1 2 3 4 5 6 7" in out

    def test_gsr_two_blocks_written(self, capsys, tmp_path):
        p = tmp_path / "gsr.gsrt"
        code, out, _ = run_cli(capsys, "make-rotation", "--kind", "gsr", "--n", "8",
                               "--group", "4", "--out", str(p))
        assert code == 0
        m = load_rotation(p)
        assert np.all(m.signs[:4, 4:] == 0)
        assert np.all(m.signs[4:, :4] == 0)
        assert orthogonality_residual(m) < 1e-10

    def test_bad_group_exits_2(self, capsys):
        code, _, err = run_cli(capsys, "make-rotation", "--kind", "gsr", "--n", "8",
                               "--group", "3")
        assert code == 2
        assert "group must be a power of two dividing n" in err

    def test_non_power_of_two_n_exits_2(self, capsys):
        code, _, _ = run_cli(capsys, "make-rotation", "--kind", "gh", "--n", "12")
        assert code == 2

    def test_unknown_flag_exits_2(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["make-rotation", "--kind", "gh", "--n", "8", "--bogus"])
        assert exc.value.code == 2

    def test_randomize_reproducible(self, capsys, tmp_path):
        a, b = tmp_path / "a.gsrt", tmp_path / "b.gsrt"
        for p in (a, b):
            run_cli(capsys, "make-rotation", "--kind", "gh", "--n", "16",
                    "--randomize", "--seed", "9", "--out", str(p))
        assert np.array_equal(load_rotation(a).signs, load_rotation(b).signs)


class TestInspect:
    def test_rotation_file(self, capsys, tmp_path):
        p = tmp_path / "w.gsrt"
        run_cli(capsys, "make-rotation", "--kind", "gw", "--n", "16",
                "--out", str(p))
        code, out, _ = run_cli(capsys, "inspect", "--file", str(p), "--group", "4")
        assert code == 0
        assert "orthogonality residual" in out

    def test_missing_file_exits_1(self, capsys, tmp_path):
        code, _, err = run_cli(capsys, "inspect", "--file", str(tmp_path / "no.gsrt"))
        assert code == 1
        assert "error" in err


class TestQuantize:
    def test_lattice_exact_reports_zero_mse(self, capsys, tmp_path):
        p = tmp_path / "t.gsrt"
        write_tensor(p, np.tile(np.array([0.0, 1.0, 2.0, 3.0]), (2, 1)), {})
        code, out, _ = run_cli(capsys, "quantize", "--file", str(p), "--bits", "2",
                               "--group", "4")
        assert code == 0
        assert "mse 0" in out

    def test_writes_quantized_file(self, capsys, tmp_path):
        src = tmp_path / "w.gsrt"
        dst = tmp_path / "q.gsrt"
        rng = np.random.default_rng(0)
        w = rng.standard_normal((4, 16))
        write_tensor(src, w, {})
        code, _, _ = run_cli(capsys, "quantize", "--file", str(src), "--bits", "4",
                             "--group", "8", "--clip", "mse", "--out", str(dst))
        assert code == 0
        qt = load_quantized(dst)
        ref = rtn_quantize(w, qt.spec)
        assert np.array_equal(qt.codes, ref.codes)

    def test_gptq_scheme_runs(self, capsys, tmp_path):
        src = tmp_path / "w.gsrt"
        write_tensor(src, np.random.default_rng(1).standard_normal((4, 8)), {})
        code, out, _ = run_cli(capsys, "quantize", "--file", str(src), "--bits", "3",
                               "--group", "4", "--scheme", "gptq")
        assert code == 0
        assert "mse" in out

    def test_bad_clip_exits_2(self, capsys, tmp_path):
        src = tmp_path / "w.gsrt"
        write_tensor(src, np.zeros((2, 4)), {})
        code, _, _ = run_cli(capsys, "quantize", "--file", str(src), "--bits", "2",
                             "--clip", "huh")
        assert code == 2


COMPARE_ARGS = ["compare", "--count", "3", "--rows", "32", "--cols", "32",
                "--group", "8", "--bits", "2", "--seed", "5"]


class TestCompare:
    def test_csv_row_count_and_echo_reproducibility(self, capsys, tmp_path):
        out_a = tmp_path / "a.csv"
        code, stdout, _ = run_cli(capsys, *COMPARE_ARGS, "--out", str(out_a))
        assert code == 0
        rows = read_report(out_a)
        assert len(rows) == 4 * 3 * 3  # variants x tensors x metrics
        assert {r["variant"] for r in rows} == {"gh", "gw", "lh", "gsr"}
        # rerun from the echoed config; the report must be byte-identical
        echo = [l for l in stdout.splitlines() if l.startswith("# config:")][0]
        argv = echo.split()[3:]
        out_b = tmp_path / "b.csv"
        argv[argv.index("--out") + 1] = str(out_b)
        assert main(argv) == 0
        capsys.readouterr()
        assert out_a.read_bytes().replace(str(out_a).encode(), b"") \
            == out_b.read_bytes().replace(str(out_b).encode(), b"")

    def test_prints_fairness_and_verdicts(self, capsys):
        code, out, _ = run_cli(capsys, *COMPARE_ARGS)
        assert code == 0
        assert "# fairness hashes identical: True" in out
        assert "directional gsr<gh" in out

    def test_failure_leaves_no_partial_output(self, capsys, tmp_path):
        out = tmp_path / "never.csv"
        code, _, _ = run_cli(capsys, "compare", "--count", "2", "--rows", "16",
                             "--cols", "16", "--group", "8",
                             "--variants", "gh,bogus-file", "--out", str(out))
        assert code == 1
        assert not out.exists()


class TestInvariance:
    def test_pass(self, capsys):
        code, out, _ = run_cli(capsys, "invariance", "--r1", "gsr", "--r2", "gh",
                               "--r3", "gh", "--r4", "gh", "--seeds", "2")
        assert code == 0
        assert "PASS" in out

    def test_f32_tolerance(self, capsys):
        code, out, _ = run_cli(capsys, "invariance", "--r1", "gw", "--seeds", "2",
                               "--precision", "f32")
        assert code == 0
        assert "0.0001" in out or "1e-04" in out

    def test_non_orthogonal_external_fails(self, capsys, tmp_path):
        p = tmp_path / "junk.gsrt"
        write_tensor(p, np.random.default_rng(0).standard_normal((64, 64)), {})
        code, _, err = run_cli(capsys, "invariance", "--r1", str(p), "--seeds", "1")
        assert code == 1
        assert "error" in err


class TestR4Ablation:
    def test_runs_and_prints_grid(self, capsys):
        code, out, _ = run_cli(capsys, "r4-ablation", "--seeds", "2", "--hidden",
                               "32", "--heads", "2", "--ffn", "64", "--group", "16")
        assert code == 0
        assert "w16a16" in out
        assert "local-global median diff" in out
