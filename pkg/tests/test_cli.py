import csv
import json

import numpy as np
import pytest

from qmtransfer import cli
from qmtransfer.data import DomainDataset, RngStream, save_csv
from qmtransfer.pipeline import AugmentedDataset
from qmtransfer.quantile_match import load_fit

TINY_SIM_CONFIG = """\
# small everything so a repetition takes milliseconds
engression.hidden_sizes = 8
engression.noise_dim = 2
engression.epochs = 60
pipeline.m_synthetic = 40
pipeline.m_predict = 8
kmm.max_iter = 300
krr.penalty_grid = 0.1,1.0
"""

TINY_AUG_CONFIG = """\
engression.hidden_sizes = 8
engression.noise_dim = 2
engression.epochs = 60
pipeline.m_synthetic = 40
pipeline.m_predict = 8
kmm.max_iter = 300
"""


def write_domain_csv(path, seed, n, d=1, shift=0.0):
    gen = RngStream(seed).generator()
    x = gen.normal(size=(n, d)) + shift
    y = 2.0 * x[:, 0] + 1.0 + 0.3 * gen.normal(size=n)
    save_csv([DomainDataset(x, y, 0)], path, domain_column=None)


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


@pytest.fixture
def sim_config(tmp_path):
    path = tmp_path / "sim.cfg"
    path.write_text(TINY_SIM_CONFIG)
    return str(path)


@pytest.fixture
def aug_config(tmp_path):
    path = tmp_path / "aug.cfg"
    path.write_text(TINY_AUG_CONFIG)
    return str(path)


@pytest.fixture
def domain_files(tmp_path):
    target = tmp_path / "target.csv"
    source = tmp_path / "source.csv"
    write_domain_csv(target, seed=101, n=10)
    write_domain_csv(source, seed=102, n=20, shift=0.5)
    return str(target), str(source)


class TestParseConfigFile:
    def test_all_value_kinds(self, tmp_path):
        path = tmp_path / "full.cfg"
        path.write_text(
            "# comment\n"
            "\n"
            "seed = 9\n"
            "engression.hidden_sizes = 32,16\n"
            "engression.batch_size = auto\n"
            "kmm.bandwidth = median_heuristic\n"
            "kmm.xi = 0.25\n"
            "pipeline.use_density_ratio = off\n"
            "mlp.hidden_grid = 10;50,50\n"
            "mlp.lr_grid = 0.01,0.001\n")
        cfg = cli.parse_config_file(path)
        assert cfg["seed"] == 9
        assert cfg["engression.hidden_sizes"] == (32, 16)
        assert cfg["engression.batch_size"] is None
        assert cfg["kmm.bandwidth"] == "median_heuristic"
        assert cfg["kmm.xi"] == 0.25
        assert cfg["pipeline.use_density_ratio"] is False
        assert cfg["mlp.hidden_grid"] == ((10,), (50, 50))
        assert cfg["mlp.lr_grid"] == (0.01, 0.001)

    def test_unknown_key_rejected_with_line(self, tmp_path):
        path = tmp_path / "bad.cfg"
        path.write_text("seed = 1\nengression.depth = 3\n")
        with pytest.raises(ValueError, match=r"bad\.cfg:2: unknown config key"):
            cli.parse_config_file(path)

    def test_bad_value_rejected_with_line(self, tmp_path):
        path = tmp_path / "bad.cfg"
        path.write_text("seed = soon\n")
        with pytest.raises(ValueError, match=r"bad\.cfg:1: bad value"):
            cli.parse_config_file(path)

    def test_missing_equals_rejected(self, tmp_path):
        path = tmp_path / "bad.cfg"
        path.write_text("seed 1\n")
        with pytest.raises(ValueError, match="expected 'key = value'"):
            cli.parse_config_file(path)


class TestSimulate:
    def test_writes_results_and_summary(self, tmp_path, sim_config, capsys):
        out = tmp_path / "run"
        code = cli.main(["simulate", "--n0", "20", "--ratio", "1",
                         "--reps", "2", "--seed", "7",
                         "--config", sim_config, "--out-dir", str(out)])
        assert code == 0
        rows = read_rows(out / "results.csv")
        assert rows[0] == ["repetition", "learner", "regime", "n0", "ratio",
                           "mse"]
        assert len(rows) == 1 + 2 * 3
        assert {r[2] for r in rows[1:]} == {"target_only", "oracle",
                                            "augmented"}
        summary = read_rows(out / "summary.csv")
        assert len(summary) == 1 + 3
        assert "mean_mse" in capsys.readouterr().out

    def test_identical_flags_identical_files(self, tmp_path, sim_config):
        outs = []
        for name in ("a", "b"):
            out = tmp_path / name
            code = cli.main(["simulate", "--n0", "20", "--ratio", "1",
                             "--reps", "1", "--seed", "3",
                             "--config", sim_config, "--out-dir", str(out)])
            assert code == 0
            outs.append(out)
        for fname in ("results.csv", "summary.csv"):
            assert (outs[0] / fname).read_bytes() == (outs[1] / fname).read_bytes()

    def test_config_supplies_flags(self, tmp_path, sim_config):
        cfg = tmp_path / "merged.cfg"
        cfg.write_text(TINY_SIM_CONFIG
                       + "simulate.n0 = 20\nsimulate.ratio = 1\n"
                         "simulate.reps = 1\nseed = 5\n"
                         f"output.dir = {tmp_path / 'fromcfg'}\n")
        assert cli.main(["simulate", "--config", str(cfg)]) == 0
        rows = read_rows(tmp_path / "fromcfg" / "results.csv")
        assert len(rows) == 1 + 3
        assert all(r[3] == "20" for r in rows[1:])

    def test_flag_overrides_config(self, tmp_path, sim_config):
        cfg = tmp_path / "merged.cfg"
        cfg.write_text(TINY_SIM_CONFIG
                       + "simulate.n0 = 20\nsimulate.ratio = 1\n"
                         "simulate.reps = 1\n"
                         f"output.dir = {tmp_path / 'o'}\n")
        assert cli.main(["simulate", "--config", str(cfg), "--n0", "25",
                         "--seed", "5"]) == 0
        rows = read_rows(tmp_path / "o" / "results.csv")
        assert all(r[3] == "25" for r in rows[1:])

    def test_zero_reps_is_usage_error(self, tmp_path, sim_config):
        assert cli.main(["simulate", "--reps", "0", "--config", sim_config,
                         "--out-dir", str(tmp_path)]) == 2

    def test_unknown_learner_is_usage_error(self, tmp_path, sim_config):
        assert cli.main(["simulate", "--learners", "forest", "--reps", "1",
                         "--config", sim_config,
                         "--out-dir", str(tmp_path)]) == 2

    def test_unknown_config_key_is_usage_error(self, tmp_path):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("simulate.warmup = 3\n")
        assert cli.main(["simulate", "--config", str(cfg)]) == 2


class TestAugment:
    def test_augments_and_writes_diagnostics(self, tmp_path, aug_config,
                                             domain_files):
        target, source = domain_files
        out = tmp_path / "aug.csv"
        fit_out = tmp_path / "fit.json"
        weights_out = tmp_path / "weights.csv"
        code = cli.main(["augment", "--target", target, "--source", source,
                         "--out", str(out), "--seed", "4",
                         "--config", aug_config,
                         "--fit-out", str(fit_out),
                         "--dump-weights", str(weights_out)])
        assert code == 0
        rows = read_rows(out)
        assert len(rows) == 1 + 30
        assert rows[0] == ["x1", "y_tilde", "weight", "origin"]
        origins = [r[3] for r in rows[1:]]
        assert origins.count("0") == 10 and origins.count("1") == 20

        diag = json.loads((tmp_path / "aug.csv.diagnostics.json").read_text())
        assert diag["seed"] == 4
        assert len(diag["quantile_fit"]["beta"]) == 2
        assert diag["kmm"][0]["feasible"] is True

        fit = load_fit(fit_out)
        np.testing.assert_allclose(fit.beta, diag["quantile_fit"]["beta"])
        weight_rows = read_rows(weights_out)
        assert weight_rows[0] == ["source", "row", "zeta"]
        assert len(weight_rows) == 1 + 20

    def test_no_density_ratio_gives_unit_weights(self, tmp_path, aug_config,
                                                 domain_files):
        target, source = domain_files
        out = tmp_path / "aug.csv"
        code = cli.main(["augment", "--target", target, "--source", source,
                         "--out", str(out), "--seed", "4",
                         "--config", aug_config, "--no-density-ratio"])
        assert code == 0
        back = AugmentedDataset.from_csv(out)
        np.testing.assert_array_equal(back.weights, np.ones(30))

    def test_missing_target_flag_is_usage_error(self, tmp_path, capsys):
        code = cli.main(["augment", "--source", "s.csv",
                         "--out", str(tmp_path / "o.csv")])
        assert code == 2
        assert "--target" in capsys.readouterr().err

    def test_header_mismatch_is_usage_error(self, tmp_path, aug_config,
                                            domain_files):
        target, _ = domain_files
        other = tmp_path / "wide.csv"
        write_domain_csv(other, seed=103, n=8, d=2)
        code = cli.main(["augment", "--target", target, "--source",
                         str(other), "--out", str(tmp_path / "o.csv"),
                         "--config", aug_config])
        assert code == 2

    def test_missing_file_is_usage_error(self, tmp_path, aug_config):
        code = cli.main(["augment", "--target", str(tmp_path / "nope.csv"),
                         "--source", str(tmp_path / "nope2.csv"),
                         "--out", str(tmp_path / "o.csv"),
                         "--config", aug_config])
        assert code == 2


class TestFitEval:
    def perfect_fit_files(self, tmp_path):
        x = np.linspace(-2, 2, 30).reshape(-1, 1)
        y = np.sin(x[:, 0])
        train = tmp_path / "train.csv"
        test = tmp_path / "test.csv"
        AugmentedDataset(x, y, np.ones(30), np.zeros(30, dtype=int)).to_csv(train)
        save_csv([DomainDataset(x, y, 0)], test, domain_column=None)
        return str(train), str(test)

    def test_near_interpolation_mse(self, tmp_path, capsys):
        train, test = self.perfect_fit_files(tmp_path)
        cfg = tmp_path / "krr.cfg"
        cfg.write_text("krr.penalty_grid = 1e-8\n")
        code = cli.main(["fit-eval", "--train", train, "--test", test,
                         "--learner", "krr", "--seed", "1",
                         "--config", str(cfg)])
        assert code == 0
        out = capsys.readouterr().out
        mse = float(out.split("test_mse=")[1].strip())
        assert mse < 1e-6

    def test_default_krr_grid_has_nine_candidates(self, tmp_path):
        train, test = self.perfect_fit_files(tmp_path)
        report = tmp_path / "report.txt"
        code = cli.main(["fit-eval", "--train", train, "--test", test,
                         "--learner", "krr", "--seed", "1",
                         "--report", str(report)])
        assert code == 0
        text = report.read_text()
        assert text.count("penalty") == 9
        assert text.count("<- chosen") == 1
        assert "test_mse" in text

    def test_unknown_learner_is_usage_error(self, tmp_path, capsys):
        train, test = self.perfect_fit_files(tmp_path)
        assert cli.main(["fit-eval", "--train", train, "--test", test,
                         "--learner", "forest"]) == 2

    def test_dimension_mismatch_is_usage_error(self, tmp_path):
        train, _ = self.perfect_fit_files(tmp_path)
        wide_test = tmp_path / "wide.csv"
        write_domain_csv(wide_test, seed=104, n=8, d=2)
        assert cli.main(["fit-eval", "--train", train, "--test",
                         str(wide_test), "--learner", "krr"]) == 2


class TestCommonBehavior:
    @pytest.mark.parametrize("argv", [
        ["--help"],
        ["simulate", "--help"],
        ["augment", "--help"],
        ["fit-eval", "--help"],
    ])
    def test_help_exits_zero(self, argv, capsys):
        assert cli.main(argv) == 0
        assert "--" in capsys.readouterr().out

    def test_unknown_subcommand_is_usage_error(self, capsys):
        assert cli.main(["reticulate"]) == 2

    def test_env_var_supplies_seed(self, tmp_path, aug_config, domain_files,
                                   monkeypatch):
        monkeypatch.setenv(cli.SEED_ENV_VAR, "77")
        target, source = domain_files
        out = tmp_path / "aug.csv"
        code = cli.main(["augment", "--target", target, "--source", source,
                         "--out", str(out), "--config", aug_config,
                         "--no-density-ratio"])
        assert code == 0
        diag = json.loads((tmp_path / "aug.csv.diagnostics.json").read_text())
        assert diag["seed"] == 77

    def test_seed_precedence_flag_over_file_over_env(self, tmp_path,
                                                     domain_files,
                                                     monkeypatch):
        monkeypatch.setenv(cli.SEED_ENV_VAR, "1")
        cfg = tmp_path / "seeded.cfg"
        cfg.write_text(TINY_AUG_CONFIG + "seed = 2\n")
        target, source = domain_files
        out = tmp_path / "aug.csv"

        code = cli.main(["augment", "--target", target, "--source", source,
                         "--out", str(out), "--config", str(cfg),
                         "--no-density-ratio"])
        assert code == 0
        diag = json.loads((tmp_path / "aug.csv.diagnostics.json").read_text())
        assert diag["seed"] == 2

        code = cli.main(["augment", "--target", target, "--source", source,
                         "--out", str(out), "--config", str(cfg),
                         "--seed", "3", "--no-density-ratio"])
        assert code == 0
        diag = json.loads((tmp_path / "aug.csv.diagnostics.json").read_text())
        assert diag["seed"] == 3
