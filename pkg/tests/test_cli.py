import textwrap

import numpy as np
import pytest

from delayfold.cli import main
from delayfold.config import ConfigError, load_config
from delayfold.modulation import full_delay_set
from delayfold.reporting import read_matrix, write_matrix


def write_config(path, text):
    path.write_text(textwrap.dedent(text))
    return path


def make_feedforward_inputs(tmp_path, N=4, L=2, M=2, P=2, seed=10):
    rng = np.random.default_rng(seed)
    delays = full_delay_set(N)
    paths = {}
    for segment in range(2, L + 1):
        W = rng.uniform(-1, 1, (N, N + 1)) / np.sqrt(N)
        p = tmp_path / f"W{segment}.csv"
        write_matrix(p, W)
        paths[f"W{segment}"] = p
    write_matrix(tmp_path / "Win.csv", rng.uniform(-1, 1, (N, M + 1)))
    write_matrix(tmp_path / "Wout.csv", rng.uniform(-1, 1, (P, N + 1)))
    return paths, delays


@pytest.fixture
def semilinear_config(tmp_path):
    make_feedforward_inputs(tmp_path)
    hidden = "W2.csv"
    return write_config(tmp_path / "run.cfg", f"""\
        [run]
        mode = feedforward
        scheme = semilinear
        seed = 7
        x0 = 0.1

        [grid]
        T = 1.0
        N = 4
        segments = 2

        [weights]
        hidden = {hidden}

        [input]
        weights = Win.csv
        vector = 0.3, -0.2

        [output]
        weights = Wout.csv

        [semilinear]
        alpha = 1.0
        nonlinearity = sine
        """)


class TestConfigParsing:
    def test_missing_file(self):
        assert main(["simulate", "--config", "/nonexistent.cfg"]) == 2

    def test_missing_sections(self, tmp_path):
        cfg = write_config(tmp_path / "bad.cfg", """\
            [run]
            mode = feedforward
            scheme = semilinear
            """)
        assert main(["simulate", "--config", str(cfg)]) == 2

    def test_unknown_key_rejected(self, tmp_path):
        cfg = write_config(tmp_path / "bad.cfg", """\
            [run]
            mode = feedforward
            scheme = semilinear
            typo_key = 1

            [grid]
            T = 1.0
            N = 4
            segments = 2
            """)
        with pytest.raises(ConfigError):
            load_config(cfg)

    def test_non_increasing_delays_diagnosed(self, tmp_path, capsys):
        make_feedforward_inputs(tmp_path)
        cfg = write_config(tmp_path / "bad.cfg", """\
            [run]
            mode = feedforward
            scheme = semilinear

            [grid]
            T = 1.0
            N = 4
            segments = 2

            [delays]
            values = 3, 3

            [weights]
            hidden = W2.csv

            [semilinear]
            alpha = 1.0
            """)
        assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
        err = capsys.readouterr().err
        assert "Property (I)" in err

    def test_both_couplings_rejected(self, tmp_path):
        make_feedforward_inputs(tmp_path)
        (tmp_path / "p.csv").write_text("segment,delay,node,value\n")
        cfg = write_config(tmp_path / "bad.cfg", """\
            [run]
            mode = feedforward
            scheme = semilinear

            [grid]
            T = 1.0
            N = 4
            segments = 2

            [delays]
            full = true

            [modulation]
            profile = p.csv

            [weights]
            hidden = W2.csv

            [semilinear]
            alpha = 1.0
            """)
        with pytest.raises(ConfigError):
            load_config(cfg)

    def test_recurrent_maplimit_rejected(self, tmp_path):
        cfg = write_config(tmp_path / "bad.cfg", """\
            [run]
            mode = recurrent
            scheme = maplimit

            [grid]
            T = 1.0
            N = 4
            segments = 2

            [semilinear]
            alpha = 1.0
            """)
        with pytest.raises(ConfigError):
            load_config(cfg)


class TestSimulate:
    def test_minimal_semilinear_run(self, semilinear_config, tmp_path):
        out = tmp_path / "out"
        assert main(["simulate", "--config", str(semilinear_config),
                     "--out", str(out)]) == 0
        nodes = (out / "nodes.csv").read_text().strip().splitlines()
        assert nodes[0] == "segment,node,time,value"
        assert len(nodes) == 1 + 4 * 2
        output = (out / "output.csv").read_text().strip().splitlines()
        assert output[0] == "index,value"
        assert len(output) == 1 + 2

    def test_emit_weights(self, semilinear_config, tmp_path):
        out = tmp_path / "out2"
        assert main(["simulate", "--config", str(semilinear_config),
                     "--out", str(out), "--emit-weights"]) == 0
        emitted = read_matrix(out / "weights_02.csv")
        original = read_matrix(tmp_path / "W2.csv")
        assert np.array_equal(emitted, original)

    def test_determinism_byte_identical(self, semilinear_config, tmp_path):
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        assert main(["simulate", "--config", str(semilinear_config), "--out", str(out_a)]) == 0
        assert main(["simulate", "--config", str(semilinear_config), "--out", str(out_b)]) == 0
        assert (out_a / "nodes.csv").read_bytes() == (out_b / "nodes.csv").read_bytes()
        assert (out_a / "output.csv").read_bytes() == (out_b / "output.csv").read_bytes()

    def test_general_scheme(self, tmp_path):
        make_feedforward_inputs(tmp_path)
        cfg = write_config(tmp_path / "gen.cfg", """\
            [run]
            mode = feedforward
            scheme = general

            [grid]
            T = 1.0
            N = 4
            segments = 2

            [weights]
            hidden = W2.csv

            [input]
            weights = Win.csv
            vector = 0.5, 0.1

            [general]
            alpha = 1.0
            nonlinearity = tanh
            """)
        out = tmp_path / "gout"
        assert main(["simulate", "--config", str(cfg), "--out", str(out)]) == 0
        assert (out / "nodes.csv").exists()

    def test_recurrent_semilinear(self, tmp_path):
        rng = np.random.default_rng(3)
        N, K, M = 3, 5, 2
        write_matrix(tmp_path / "W.csv", np.diag(rng.uniform(-0.5, 0.5, N)))
        write_matrix(tmp_path / "Win.csv", rng.uniform(-1, 1, (N, M + 1)))
        write_matrix(tmp_path / "U.csv", rng.normal(size=(K, M)))
        cfg = write_config(tmp_path / "rec.cfg", """\
            [run]
            mode = recurrent
            scheme = semilinear

            [grid]
            T = 1.0
            N = 3
            segments = 5

            [delays]
            values = 3

            [weights]
            internal = W.csv

            [input]
            weights = Win.csv
            series = U.csv

            [semilinear]
            alpha = 1.0
            nonlinearity = tanh
            """)
        out = tmp_path / "rout"
        assert main(["simulate", "--config", str(cfg), "--out", str(out)]) == 0
        nodes = (out / "nodes.csv").read_text().strip().splitlines()
        assert len(nodes) == 1 + N * K
        assert not (out / "output.csv").exists()

    def test_blowup_exit_code(self, tmp_path, capsys):
        # identity feedback with a huge gain grows past the guard
        N, L = 2, 12
        write_matrix(tmp_path / "Wbig.csv",
                     np.column_stack([np.full((N, N), 5e3), np.zeros(N)]))
        cfg = write_config(tmp_path / "blow.cfg", f"""\
            [run]
            mode = feedforward
            scheme = semilinear
            x0 = 1.0

            [grid]
            T = 1.0
            N = {N}
            segments = {L}

            [delays]
            full = true

            [weights]
            hidden = {", ".join(["Wbig.csv"] * (L - 1))}

            [drive]
            input_segment = 1.0, 1.0

            [semilinear]
            alpha = 1.0
            nonlinearity = identity
            """)
        out = tmp_path / "bout"
        assert main(["simulate", "--config", str(cfg), "--out", str(out)]) == 3
        assert "blowup" in capsys.readouterr().err
        assert not (out / "nodes.csv").exists()  # nothing written on failure

    def test_maplimit_scheme(self, tmp_path):
        make_feedforward_inputs(tmp_path)
        cfg = write_config(tmp_path / "ml.cfg", """\
            [run]
            mode = feedforward
            scheme = maplimit

            [grid]
            T = 32.0
            N = 4
            segments = 2

            [weights]
            hidden = W2.csv

            [input]
            weights = Win.csv
            vector = 0.3, -0.2

            [output]
            weights = Wout.csv

            [semilinear]
            alpha = 1.0
            """)
        out = tmp_path / "mlout"
        assert main(["simulate", "--config", str(cfg), "--out", str(out)]) == 0
        assert (out / "nodes.csv").exists() and (out / "output.csv").exists()


class TestCompile:
    def test_round_trip_through_csv(self, tmp_path):
        rng = np.random.default_rng(17)
        N, L = 3, 3
        originals = []
        for segment in range(2, L + 1):
            W = rng.uniform(-1, 1, (N, N + 1))
            write_matrix(tmp_path / f"W{segment}.csv", W)
            originals.append(W)
        base = """\
            [run]
            mode = feedforward
            scheme = semilinear

            [grid]
            T = 1.0
            N = 3
            segments = 3

            [delays]
            full = true

            [semilinear]
            alpha = 1.0
            """
        cfg_a = write_config(tmp_path / "a.cfg", base + textwrap.dedent("""\
            [weights]
            hidden = W2.csv, W3.csv
            """))
        out_a = tmp_path / "rt1"
        assert main(["compile", "--config", str(cfg_a), "--out", str(out_a)]) == 0
        assert (out_a / "profile.csv").exists() and (out_a / "biases.csv").exists()

        cfg_b = write_config(tmp_path / "b.cfg", base + textwrap.dedent(f"""\
            [modulation]
            profile = {out_a / 'profile.csv'}

            [drive]
            biases = {out_a / 'biases.csv'}
            """))
        out_b = tmp_path / "rt2"
        assert main(["compile", "--config", str(cfg_b), "--out", str(out_b)]) == 0
        for i, original in enumerate(originals):
            back = read_matrix(out_b / f"weights_{i + 2:02d}.csv")
            assert np.array_equal(back, original)

    def test_unrealizable_is_config_error(self, tmp_path, capsys):
        write_matrix(tmp_path / "W.csv", np.array([[0.5, 0.0], [0.0, 0.0]]))
        cfg = write_config(tmp_path / "bad.cfg", """\
            [run]
            mode = recurrent
            scheme = semilinear

            [grid]
            T = 1.0
            N = 2
            segments = 3

            [delays]
            values = 1

            [weights]
            internal = W.csv

            [semilinear]
            alpha = 1.0
            """)
        assert main(["compile", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
        assert "(1, 1)" in capsys.readouterr().err

    def test_recurrent_round_trip(self, tmp_path):
        rng = np.random.default_rng(23)
        N = 4
        W = rng.uniform(-1, 1, (N, N))
        write_matrix(tmp_path / "W.csv", W)
        cfg = write_config(tmp_path / "rec.cfg", """\
            [run]
            mode = recurrent
            scheme = semilinear

            [grid]
            T = 1.0
            N = 4
            segments = 2

            [delays]
            full = true

            [weights]
            internal = W.csv

            [semilinear]
            alpha = 1.0
            """)
        out = tmp_path / "o"
        assert main(["compile", "--config", str(cfg), "--out", str(out)]) == 0
        cfg2 = write_config(tmp_path / "rec2.cfg", f"""\
            [run]
            mode = recurrent
            scheme = semilinear

            [grid]
            T = 1.0
            N = 4
            segments = 2

            [delays]
            full = true

            [modulation]
            profile = {out / 'profile.csv'}

            [semilinear]
            alpha = 1.0
            """)
        out2 = tmp_path / "o2"
        assert main(["compile", "--config", str(cfg2), "--out", str(out2)]) == 0
        assert np.array_equal(read_matrix(out2 / "weights_internal.csv"), W)


class TestVerify:
    def test_equivalence_on_stock_config(self, semilinear_config, tmp_path):
        out = tmp_path / "v"
        assert main(["verify", "--config", str(semilinear_config),
                     "--check", "equivalence", "--out", str(out)]) == 0
        assert (out / "equivalence_report.csv").exists()
        assert (out / "equivalence_summary.txt").exists()
        assert (out / "equivalence.png").exists()
        summary = (out / "equivalence_summary.txt").read_text()
        assert "passed = true" in summary

    def test_equivalence_random_suite(self, tmp_path):
        cfg = write_config(tmp_path / "r.cfg", """\
            [run]
            mode = feedforward
            scheme = general
            seed = 11

            [grid]
            T = 1.0
            N = 6
            segments = 3

            [verify]
            count = 5
            """)
        out = tmp_path / "v"
        assert main(["verify", "--config", str(cfg), "--check", "equivalence",
                     "--out", str(out)]) == 0
        rows = (out / "equivalence_report.csv").read_text().strip().splitlines()
        assert len(rows) == 1 + 5

    def test_maplimit_check(self, tmp_path):
        cfg = write_config(tmp_path / "m.cfg", """\
            [run]
            mode = feedforward
            scheme = semilinear
            seed = 5

            [grid]
            T = 1.0
            N = 6
            segments = 3

            [semilinear]
            alpha = 1.0
            nonlinearity = tanh
            """)
        out = tmp_path / "v"
        assert main(["verify", "--config", str(cfg), "--check", "maplimit",
                     "--out", str(out)]) == 0
        summary = (out / "maplimit_summary.txt").read_text()
        assert "passed = true" in summary
        assert (out / "maplimit_sweep.csv").exists()
        assert (out / "maplimit.png").exists()

    def test_convergence_check(self, tmp_path):
        cfg = write_config(tmp_path / "c.cfg", """\
            [run]
            mode = feedforward
            scheme = semilinear
            seed = 1

            [grid]
            T = 1.0
            N = 4
            segments = 2

            [semilinear]
            alpha = 1.0
            nonlinearity = sine

            [verify]
            node_counts = 4, 8, 16, 32
            """)
        out = tmp_path / "v"
        assert main(["verify", "--config", str(cfg), "--check", "convergence",
                     "--out", str(out), "--substeps", "2048"]) == 0
        summary = (out / "convergence_summary.txt").read_text()
        assert "passed = true" in summary

    def test_history_positive_and_negative(self, tmp_path):
        rng = np.random.default_rng(9)
        N = 4
        # legal recurrent-style feed-forward profile with one delay at tau = T
        rows = ["segment,delay,node,value"]
        for n in range(1, N + 1):
            rows.append(f"2,{N},{n},{rng.uniform(0.2, 0.8):.17g}")
        (tmp_path / "profile.csv").write_text("\n".join(rows) + "\n")
        base = f"""\
            [run]
            mode = feedforward
            scheme = semilinear

            [grid]
            T = 1.0
            N = {N}
            segments = 2

            [delays]
            values = {N}

            [drive]
            input_segment = 0.4, -0.2, 0.9, 0.0

            [semilinear]
            alpha = 1.0
            """
        cfg = write_config(tmp_path / "h.cfg", base + textwrap.dedent("""\
            [modulation]
            profile = profile.csv
            """))
        out = tmp_path / "v"
        assert main(["verify", "--config", str(cfg), "--check", "history",
                     "--out", str(out)]) == 0
        assert "passed = true" in (out / "history_summary.txt").read_text()

        # negative control: nonzero modulation on the first segment
        first = ["delay,node,value"] + [f"{N},{n},0.5" for n in range(1, N + 1)]
        (tmp_path / "first.csv").write_text("\n".join(first) + "\n")
        cfg_bad = write_config(tmp_path / "hbad.cfg", base + textwrap.dedent("""\
            [modulation]
            profile = profile.csv
            first_segment = first.csv
            """))
        out_bad = tmp_path / "vbad"
        assert main(["verify", "--config", str(cfg_bad), "--check", "history",
                     "--out", str(out_bad)]) == 1
        assert "passed = false" in (out_bad / "history_summary.txt").read_text()

    def test_topology_check(self, tmp_path):
        cfg = write_config(tmp_path / "t.cfg", """\
            [run]
            mode = feedforward
            scheme = semilinear

            [grid]
            T = 1.0
            N = 8
            segments = 2

            [semilinear]
            alpha = 1.0
            """)
        out = tmp_path / "v"
        assert main(["verify", "--config", str(cfg), "--check", "topology",
                     "--out", str(out)]) == 0
        rows = (out / "topology_report.csv").read_text().strip().splitlines()
        assert len(rows) == 1 + sum(2 * n - 1 for n in range(1, 9))

    def test_unknown_check_rejected(self, semilinear_config):
        with pytest.raises(SystemExit) as exc:
            main(["verify", "--config", str(semilinear_config), "--check", "bogus"])
        assert exc.value.code == 2

    def test_verify_outputs_deterministic(self, tmp_path):
        cfg = write_config(tmp_path / "d.cfg", """\
            [run]
            mode = feedforward
            scheme = semilinear
            seed = 3

            [grid]
            T = 1.0
            N = 5
            segments = 3

            [semilinear]
            alpha = 1.0

            [verify]
            count = 4
            """)
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        for out in (out_a, out_b):
            assert main(["verify", "--config", str(cfg), "--check", "equivalence",
                         "--out", str(out)]) == 0
        for name in ("equivalence_report.csv", "equivalence_summary.txt",
                     "equivalence.png"):
            assert (out_a / name).read_bytes() == (out_b / name).read_bytes(), name

    def test_seed_flag_overrides(self, tmp_path):
        cfg = write_config(tmp_path / "s.cfg", """\
            [run]
            mode = feedforward
            scheme = semilinear
            seed = 3

            [grid]
            T = 1.0
            N = 5
            segments = 3

            [semilinear]
            alpha = 1.0

            [verify]
            count = 2
            """)
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        assert main(["verify", "--config", str(cfg), "--check", "equivalence",
                     "--out", str(out_a), "--seed", "99"]) == 0
        assert main(["verify", "--config", str(cfg), "--check", "equivalence",
                     "--out", str(out_b)]) == 0
        a = (out_a / "equivalence_summary.txt").read_text()
        b = (out_b / "equivalence_summary.txt").read_text()
        assert "seed = 99" in a and "seed = 3" in b
