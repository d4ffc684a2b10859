"""Command-line wiring: exit codes, determinism, and output formats."""

import numpy as np
import pytest

from retarget import Dataset, ScenarioSpec, generate, save_dataset
from retarget.cli import EXIT_ESTIMATION, EXIT_INVALID, EXIT_OK, EXIT_USAGE, main


@pytest.fixture()
def binary_csv(tmp_path):
    scenario = ScenarioSpec(
        name="cli",
        d=1,
        m=2,
        covariate_law="uniform",
        propensity_coef=np.array([[0.0, 0.0], [0.0, 1.0]]),
        mean_coef=np.array([[0.0, 0.0], [0.2, 0.8]]),
        noise_sd=np.array([0.5, 0.5]),
    )
    data, _ = generate(scenario, 160, seed=21)
    path = tmp_path / "data.csv"
    save_dataset(data, str(path))
    return str(path)


@pytest.fixture()
def ternary_csv(tmp_path):
    rng = np.random.default_rng(0)
    n = 90
    data = Dataset(
        covariates=rng.uniform(-1, 1, (n, 1)),
        actions=rng.integers(0, 3, n),
        outcomes=rng.standard_normal(n),
        m=3,
    )
    path = tmp_path / "data3.csv"
    save_dataset(data, str(path))
    return str(path)


class TestSimulate:
    def test_writes_default_grid(self, tmp_path):
        out = tmp_path / "report.csv"
        code = main(
            [
                "simulate", "--reps", "2", "--n", "80", "--seed", "7",
                "--regret-draws", "500", "--out", str(out), "--threads", "1",
            ]
        )
        assert code == EXIT_OK
        lines = out.read_text().splitlines()
        assert lines[0].startswith("# config: ")
        assert '"seed": 7' in lines[0]
        data_rows = [l for l in lines if l and not l.startswith("#")][1:]
        assert len(data_rows) == 18

    def test_markdown_format(self, tmp_path, capsys):
        code = main(
            [
                "simulate", "--reps", "2", "--n", "60", "--schemes", "uniform,w0",
                "--regret-draws", "300", "--format", "markdown", "--threads", "1",
            ]
        )
        assert code == EXIT_OK
        out = capsys.readouterr().out
        assert "| scenario | uniform | w0 |" in out

    def test_bad_scheme_exits_invalid(self, tmp_path):
        code = main(
            ["simulate", "--reps", "1", "--n", "40", "--schemes", "bogus", "--threads", "1"]
        )
        assert code == EXIT_INVALID

    def test_scenario_file(self, tmp_path, capsys):
        import json

        from retarget import default_scenarios

        path = tmp_path / "scn.json"
        path.write_text(json.dumps([default_scenarios()[2].to_jsonable()]))
        code = main(
            [
                "simulate", "--scenarios", str(path), "--schemes", "uniform",
                "--reps", "2", "--n", "60", "--regret-draws", "300", "--threads", "1",
            ]
        )
        assert code == EXIT_OK
        assert "S-C,uniform," in capsys.readouterr().out

    def test_oracle_nuisances_flag(self, tmp_path):
        out = tmp_path / "r.csv"
        code = main(
            [
                "simulate", "--reps", "2", "--n", "60", "--schemes", "uniform",
                "--regret-draws", "300", "--oracle-nuisances", "--threads", "1",
                "--out", str(out),
            ]
        )
        assert code == EXIT_OK
        assert '"oracle_nuisances": true' in out.read_text().splitlines()[0]

    def test_threads_env_fallback(self, tmp_path, monkeypatch):
        monkeypatch.setenv("RETARGET_THREADS", "2")
        out = tmp_path / "r.csv"
        code = main(
            [
                "simulate", "--reps", "2", "--n", "60", "--schemes", "uniform",
                "--regret-draws", "300", "--out", str(out),
            ]
        )
        assert code == EXIT_OK
        monkeypatch.setenv("RETARGET_THREADS", "zippy")
        assert main(["simulate", "--reps", "1", "--n", "40"]) == EXIT_INVALID


class TestFit:
    def test_dv_on_three_arms_names_requirement(self, ternary_csv, capsys):
        code = main(["fit", "--equation", "dv", "--arm", "1", "--data", ternary_csv])
        assert code == EXIT_INVALID
        err = capsys.readouterr().err
        assert err.startswith("error[")
        assert "m=2" in err

    def test_best_fit_writes_key_value_file(self, binary_csv, tmp_path, capsys):
        out = tmp_path / "fit.txt"
        code = main(
            [
                "fit", "--equation", "best_fit", "--arm", "1", "--data", binary_csv,
                "--weights", "w0", "--seed", "3", "--out", str(out),
            ]
        )
        assert code == EXIT_OK
        body = out.read_text()
        assert body.startswith("# config: ")
        assert "equation=best_fit" in body
        assert "beta_0=" in body and "beta_1=" in body
        assert "residual_norm=" in body
        stdout = capsys.readouterr().out
        assert "best_fit regression" in stdout

    def test_on_arm_modes(self, binary_csv, tmp_path):
        for mode in ("known", "ols", "irls"):
            code = main(
                [
                    "fit", "--equation", "on_arm", "--arm", "1", "--mode", mode,
                    "--data", binary_csv, "--out", str(tmp_path / f"{mode}.txt"),
                ]
            )
            assert code == EXIT_OK

    def test_cate_with_features(self, binary_csv, tmp_path):
        code = main(
            [
                "fit", "--equation", "cate", "--data", binary_csv,
                "--features", "poly:2", "--out", str(tmp_path / "cate.txt"),
            ]
        )
        assert code == EXIT_OK

    def test_missing_file_exits_invalid(self, capsys):
        code = main(["fit", "--equation", "cate", "--data", "/nonexistent.csv"])
        assert code == EXIT_INVALID

    def test_oracle_nuisances_file(self, tmp_path, capsys):
        rng = np.random.default_rng(13)
        n = 50
        x = rng.uniform(-1, 1, (n, 1))
        a = rng.integers(0, 2, n)
        a[:2] = [0, 1]
        y = rng.standard_normal(n)
        data = Dataset(covariates=x, actions=a, outcomes=y, m=2)
        data_path = tmp_path / "d.csv"
        save_dataset(data, str(data_path))
        phi = rng.uniform(0.2, 0.8, n)
        oracle_path = tmp_path / "oracle.csv"
        lines = ["phi_0,phi_1,mu_0,mu_1"]
        for i in range(n):
            lines.append(f"{float(1 - phi[i])!r},{float(phi[i])!r},0.0,0.0")
        oracle_path.write_text("\n".join(lines) + "\n")
        code = main(
            [
                "fit", "--equation", "cate", "--data", str(data_path),
                "--oracle", str(oracle_path), "--weights", "w0",
                "--out", str(tmp_path / "fit.txt"),
            ]
        )
        assert code == EXIT_OK

    def test_dump_psi(self, binary_csv, tmp_path):
        psi_path = tmp_path / "psi.csv"
        code = main(
            [
                "fit", "--equation", "cate", "--data", binary_csv,
                "--dump-psi", str(psi_path), "--out", str(tmp_path / "f.txt"),
            ]
        )
        assert code == EXIT_OK
        assert psi_path.read_text().startswith("psi_0,psi_1")


class TestLearn:
    def test_byte_identical_reruns(self, binary_csv, tmp_path):
        a, b = tmp_path / "a.txt", tmp_path / "b.txt"
        argv = [
            "learn", "--data", binary_csv, "--class", "linear",
            "--weights", "w0", "--seed", "7",
        ]
        assert main(argv + ["--out", str(a)]) == EXIT_OK
        assert main(argv + ["--out", str(b)]) == EXIT_OK
        assert a.read_bytes() == b.read_bytes()
        assert b"theta_0=" in a.read_bytes()

    def test_finite_class(self, binary_csv, tmp_path):
        policies = tmp_path / "policies.txt"
        policies.write_text("const,0\nconst,1\n0.0,1.0\n")
        out = tmp_path / "learn.txt"
        code = main(
            [
                "learn", "--data", binary_csv, "--class", f"finite:{policies}",
                "--weights", "uniform", "--out", str(out),
            ]
        )
        assert code == EXIT_OK
        body = out.read_text()
        assert "class=finite(3)" in body
        assert "value_gap=" in body

    def test_unknown_class_invalid(self, binary_csv):
        assert main(["learn", "--data", binary_csv, "--class", "tree"]) == EXIT_INVALID


class TestReport:
    def test_csv_to_markdown(self, tmp_path, capsys):
        src = tmp_path / "r.csv"
        main(
            [
                "simulate", "--reps", "2", "--n", "60", "--schemes", "uniform,w0",
                "--regret-draws", "300", "--out", str(src), "--threads", "1",
            ]
        )
        code = main(["report", "--in", str(src), "--format", "markdown"])
        assert code == EXIT_OK
        out = capsys.readouterr().out
        assert "| scenario | uniform | w0 |" in out
        assert "(" in out and ")" in out


class TestExitCodes:
    def test_unknown_flag_is_usage_error(self, capsys):
        assert main(["simulate", "--bogus-flag"]) == EXIT_USAGE

    def test_unknown_command_is_usage_error(self, capsys):
        assert main(["frobnicate"]) == EXIT_USAGE

    def test_help_exits_zero(self, capsys):
        assert main(["--help"]) == EXIT_OK
        assert "simulate" in capsys.readouterr().out

    def test_estimation_failure_code(self, tmp_path, capsys):
        # 2 rows per arm, 1 covariate, ridge 0: singular outcome regressions
        # inside cross-fitting surface as estimation errors.
        path = tmp_path / "tiny.csv"
        path.write_text("x1,a,y\n0.1,0,1.0\n0.1,1,2.0\n0.2,0,1.5\n0.2,1,2.5\n")
        code = main(["fit", "--equation", "cate", "--data", str(path)])
        assert code == EXIT_ESTIMATION
