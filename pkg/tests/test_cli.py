import numpy as np

from amcsim.cli import main
from amcsim.matrix_io import load_buffer, read_matrix, write_matrix


def run_cli(*argv):
    return main(list(argv))


class TestGen:
    def test_writes_matrix(self, tmp_path):
        out = tmp_path / "w.mat"
        assert run_cli("gen", "--kind", "wishart", "--dims", "16",
                       "--seed", "3", "--out", str(out)) == 0
        assert read_matrix(out).shape == (16, 16)

    def test_deterministic_bytes(self, tmp_path):
        a, b = tmp_path / "a.mat", tmp_path / "b.mat"
        run_cli("gen", "--kind", "gram", "--dims", "8", "--seed", "5", "--out", str(a))
        run_cli("gen", "--kind", "gram", "--dims", "8", "--seed", "5", "--out", str(b))
        assert a.read_bytes() == b.read_bytes()

    def test_regression_dims(self, tmp_path):
        out = tmp_path / "r.mat"
        run_cli("gen", "--kind", "regression", "--dims", "24x4",
                "--seed", "1", "--out", str(out))
        assert read_matrix(out).shape == (24, 4)


class TestSolve:
    def test_mvm_report_and_determinism(self, tmp_path):
        """Repeated CLI invocations with one seed produce byte-identical reports."""
        r1, r2 = tmp_path / "r1.csv", tmp_path / "r2.csv"
        args = ["solve", "mvm", "--generate", "wishart:24", "--seed", "7",
                "--trials", "2"]
        assert run_cli(*args, "--out", str(r1)) == 0
        assert run_cli(*args, "--out", str(r2)) == 0
        assert r1.read_bytes() == r2.read_bytes()
        text = r1.read_text()
        assert "# seed = 7" in text
        assert "# summary.median_rel" in text
        assert "trial,component,numerical,analog" in text

    def test_missing_source_is_input_error(self):
        assert run_cli("solve", "mvm", "--seed", "1") == 1

    def test_noise_requires_seed(self, tmp_path):
        assert run_cli("solve", "mvm", "--generate", "wishart:8") == 1

    def test_noise_off_needs_no_seed(self, tmp_path):
        out = tmp_path / "r.csv"
        assert run_cli("solve", "mvm", "--generate", "wishart:8", "--noise", "off",
                       "--ideal", "--out", str(out)) == 0

    def test_singular_matrix_exits_2(self, tmp_path):
        m = tmp_path / "singular.mat"
        write_matrix(m, np.ones((6, 6)))
        code = run_cli("solve", "inv", "--matrix", str(m), "--seed", "1")
        assert code == 2

    def test_matrix_file_input(self, tmp_path):
        m = tmp_path / "m.mat"
        write_matrix(m, np.eye(8) * 0.9 + 0.05)
        out = tmp_path / "r.csv"
        assert run_cli("solve", "inv", "--matrix", str(m), "--seed", "2",
                       "--out", str(out)) == 0

    def test_config_file_applied(self, tmp_path):
        cfg = tmp_path / "s.cfg"
        cfg.write_text("device.sigma_read = 0.0\ndevice.sigma_write = 0.0\n")
        out = tmp_path / "r.csv"
        assert run_cli("solve", "mvm", "--generate", "wishart:8", "--seed", "1",
                       "--config", str(cfg), "--out", str(out)) == 0
        assert "# device.sigma_read = 0.0" in out.read_text()

    def test_unknown_config_key_is_input_error(self, tmp_path):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("device.nope = 1\n")
        assert run_cli("solve", "mvm", "--generate", "wishart:8", "--seed", "1",
                       "--config", str(cfg)) == 1

    def test_bits_8_runs(self, tmp_path):
        out = tmp_path / "r.csv"
        assert run_cli("solve", "pinv", "--generate", "regression:32x4", "--seed", "4",
                       "--bits", "8", "--out", str(out)) == 0


class TestProgramDemo:
    def test_demo_report(self, tmp_path):
        out = tmp_path / "demo.csv"
        assert run_cli("program-demo", "--seed", "2", "--out", str(out)) == 0
        lines = out.read_text().splitlines()
        assert "level,success_rate,mean_pulses,mean_g,std_g" in lines
        data = [l for l in lines if not l.startswith("#")][1:]
        assert len(data) == 16


class TestNnInfer:
    def test_small_subset_ideal(self, tmp_path):
        out = tmp_path / "nn.csv"
        code = run_cli("nn", "infer", "--limit", "24", "--noise", "off", "--ideal",
                       "--bits", "8", "--out", str(out))
        assert code == 0
        text = out.read_text()
        assert "# summary.accuracy_analog" in text
        assert "index,label,pred_float,pred_analog" in text

    def test_bad_weights_path(self):
        assert run_cli("nn", "infer", "--weights", "/nonexistent.bin",
                       "--noise", "off", "--limit", "4") == 1


class TestRun:
    def test_program_with_buffers_and_dump(self, tmp_path, rng):
        targets = rng.integers(0, 16, (6, 6)).astype(float)
        tpath = tmp_path / "targets.mat"
        write_matrix(tpath, targets)
        vcodes = rng.integers(0, 256, 6).astype(float)
        vpath = tmp_path / "v.mat"
        write_matrix(vpath, vcodes.reshape(-1, 1))

        prog = tmp_path / "p.prog"
        prog.write_text("""
            # program, configure, execute, read out
            WRV macro=0 src=t
            CFG macro=0 kind=MVM gain=500.0
            MOV src=v dst=vv rows=6 cols=1
            EXE macro=0 src=vv
            RDO macro=0 dst=y
            HALT
        """)
        dump = tmp_path / "dump"
        assert run_cli("run", str(prog), "--buffer", f"t={tpath}",
                       "--buffer", f"v={vpath}", "--seed", "9",
                       "--dump-dir", str(dump)) == 0
        name, value = load_buffer(dump / "y.csv")
        assert name == "y"
        assert value.shape == (6, 1)

    def test_malformed_program_is_input_error(self, tmp_path):
        prog = tmp_path / "bad.prog"
        prog.write_text("FROB x=1\nHALT\n")
        assert run_cli("run", str(prog), "--noise", "off") == 1

    def test_missing_halt_is_input_error(self, tmp_path):
        prog = tmp_path / "nohalt.prog"
        prog.write_text("CFG macro=0 kind=MVM\n")
        assert run_cli("run", str(prog), "--noise", "off") == 1
