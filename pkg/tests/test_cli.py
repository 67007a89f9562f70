import csv

import numpy as np
import pytest

from retailprob.cli import EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC, EXIT_OK, main
from retailprob.config import ConfigError, ExperimentConfig, load_config, parse_models
from retailprob.topdown import M5_LEVELS, RETAIL_LEVELS


@pytest.fixture
def out(tmp_path):
    return str(tmp_path / "out")


def toy(out, *extra):
    return ["--synthetic", "toy", "--n-lags", "14", "--output-dir", out, *extra]


class TestConfig:
    def test_defaults(self):
        cfg = ExperimentConfig(synthetic="toy").validate()
        assert cfg.horizon == 28 and cfg.n_lags == 100 and cfg.levels == RETAIL_LEVELS
        assert [m.name for m in cfg.models] == ["PR"]

    def test_m5_levels(self):
        assert ExperimentConfig(profile="m5", synthetic="toy").levels == M5_LEVELS

    def test_toml_then_overrides(self, tmp_path):
        path = tmp_path / "c.toml"
        path.write_text(
            'synthetic = "toy"\nhorizon = 7\ndist = "negbin"\n'
            '[[models]]\nname = "G"\nkind = "gbt"\nloss = "tweedie:1.3"\n'
        )
        cfg = load_config(path, {"horizon": "14", "quantiles": "0.2,0.8"})
        assert cfg.horizon == 14 and cfg.dist == "negbin" and cfg.levels == (0.2, 0.8)
        assert cfg.models[0].loss == "tweedie:1.3"

    @pytest.mark.parametrize(
        "overrides, pattern",
        [
            ({}, "exactly one"),
            ({"synthetic": "toy", "horizon": "0"}, "horizon"),
            ({"synthetic": "toy", "horizon": "x"}, "bad value"),
            ({"synthetic": "toy", "dist": "gamma"}, "dist"),
            ({"synthetic": "toy", "quantiles": "0.9,0.1"}, "sorted"),
            ({"synthetic": "toy", "models": ""}, "roster is empty"),
            ({"synthetic": "toy", "models": "A=pr,A=lasso"}, "unique"),
            ({"synthetic": "toy", "models": "A=svm"}, "unknown kind"),
            ({"synthetic": "toy", "models": "A=gbt:cauchy"}, "'A'"),
            ({"synthetic": "toy", "colour": "red"}, "unknown key"),
            ({"sales": "nope.csv", "hierarchy": "nope.csv"}, "not found"),
            ({"synthetic": "toy", "demand_class": "spiky"}, "spiky"),
            ({"synthetic": "toy", "shared_p": "maybe"}, "bad value"),
        ],
    )
    def test_rejects(self, overrides, pattern):
        with pytest.raises(ConfigError, match=pattern):
            load_config(None, overrides)

    def test_bad_toml(self, tmp_path):
        (tmp_path / "c.toml").write_text("horizon = = 3\n")
        with pytest.raises(ConfigError):
            load_config(tmp_path / "c.toml")

    def test_parse_models(self):
        (m,) = parse_models("NB=gbt:negbin@L")
        assert (m.name, m.kind, m.loss, m.level) == ("NB", "gbt", "negbin", "L")
        with pytest.raises(ConfigError):
            parse_models("oops")

    def test_digest_tracks_content(self):
        a = ExperimentConfig(synthetic="toy")
        b = ExperimentConfig(synthetic="toy", seed=1)
        assert a.digest() == ExperimentConfig(synthetic="toy").digest() != b.digest()


class TestCommands:
    def test_classify(self, out, capsys, tmp_path):
        assert main(["classify", *toy(out)]) == EXIT_OK
        rows = list(csv.DictReader(open(tmp_path / "out" / "demand_classes.csv")))
        assert {r["level"] for r in rows} == {"A", "L"} and len(rows) == 6
        assert "level A:" in capsys.readouterr().out

    def test_topdown_and_emit(self, out, tmp_path):
        assert main(["topdown", *toy(out, "--dist", "negbin", "--seed", "3")]) == EXIT_OK
        assert main(["emit-plots", out, "--out", str(tmp_path / "plots")]) == EXIT_OK
        assert (tmp_path / "plots" / "leaderboard.csv").read_text() == (tmp_path / "out" / "leaderboard.csv").read_text()

    def test_ensemble(self, out, capsys):
        assert main(["ensemble", *toy(out, "--folds", "2", "--models", "P=pr@L")]) == EXIT_OK
        assert "P-ens2" in capsys.readouterr().out

    def test_direct(self, out, tmp_path):
        assert main(["direct", *toy(out, "--horizon", "3", "--trees", "3")]) == EXIT_OK
        assert list(csv.reader(open(tmp_path / "out" / "metrics.csv")))[1][1] == "direct-gbt"

    def test_eval_round_trip(self, out, tmp_path):
        assert main(["topdown", *toy(out, "--class", "smooth")]) == EXIT_OK
        qfile = tmp_path / "out" / "quantiles_smooth_PR_L.csv"
        ev = str(tmp_path / "ev")
        assert main(["eval", *toy(ev, "--quantiles-file", str(qfile), "--model-name", "PR")]) == EXIT_OK
        (row,) = list(csv.DictReader(open(tmp_path / "ev" / "metrics.csv")))
        ref = [r for r in csv.DictReader(open(tmp_path / "out" / "metrics.csv")) if r["group"] == "smooth/L" and r["model"] == "PR" and r["metric"] == "wspl"]
        assert float(row["value"]) == pytest.approx(float(ref[0]["value"]), rel=1e-12)

    def test_sample_study(self, out, tmp_path):
        args = ["sample-study", "--synthetic", "toy", "--n-lags", "7", "--output-dir", out, "--sizes", "1,2", "--repeats", "2"]
        assert main(args) == EXIT_OK
        assert (tmp_path / "out" / "sampling_curve.csv").read_text().count("\n") == 5

    def test_set_flag(self, out, tmp_path):
        assert main(["classify", "--set", "synthetic=toy", "--set", f"output_dir={out}"]) == EXIT_OK


class TestExitCodes:
    @pytest.mark.parametrize(
        "argv",
        [
            ["topdown"],
            ["topdown", "--synthetic", "toy", "--horizon", "0"],
            ["topdown", "--synthetic", "toy", "--set", "nokey"],
            ["topdown", "--synthetic", "toy", "--dist", "gamma"],
            ["nosuchcommand"],
            ["sample-study", "--synthetic", "toy", "--sizes", "a,b"],
            ["sample-study", "--synthetic", "toy", "--sizes", "99"],
        ],
    )
    def test_config_errors(self, argv, tmp_path):
        if argv[0] != "nosuchcommand":
            argv = argv + ["--output-dir", str(tmp_path)]
        # argparse-level usage errors exit directly with the config code
        try:
            code = main(argv)
        except SystemExit as exc:
            code = exc.code
        assert code == EXIT_CONFIG

    def test_data_error_bad_csv(self, tmp_path):
        sales = tmp_path / "s.csv"
        sales.write_text("series_id,date,quantity\na,2020-01-01,-3\n")
        hier = tmp_path / "h.csv"
        hier.write_text("lower_id,aggregate_id\na,X\n")
        argv = ["classify", "--sales", str(sales), "--hierarchy", str(hier), "--output-dir", str(tmp_path / "o")]
        assert main(argv) == EXIT_DATA

    def test_data_error_missing_run(self, tmp_path):
        assert main(["emit-plots", str(tmp_path / "none")]) == EXIT_DATA

    def test_data_error_unknown_series(self, out, tmp_path):
        q = tmp_path / "q.csv"
        q.write_text("series_id,step,u,quantile\nZZZ,1,0.5,1\n")
        assert main(["eval", *toy(out, "--quantiles-file", str(q))]) == EXIT_DATA

    def test_numerical_failure(self, out, monkeypatch):
        import retailprob.experiments as ex

        def boom(*a, **k):
            raise ex.NumericalError("singular normal equations")

        monkeypatch.setattr(ex, "forecast_level", boom)
        assert main(["topdown", *toy(out)]) == EXIT_NUMERIC

    def test_long_csv_run(self, tmp_path):
        rng = np.random.default_rng(0)
        lines = ["series_id,date,quantity"]
        for sid in ("a", "b", "c"):
            for d, v in enumerate(rng.poisson(3, 60)):
                lines.append(f"{sid},2021-{1 + d // 28:02d}-{1 + d % 28:02d},{v}")
        (tmp_path / "s.csv").write_text("\n".join(lines) + "\n")
        (tmp_path / "h.csv").write_text("lower_id,aggregate_id\na,X\nb,X\nc,Y\n")
        argv = ["topdown", "--sales", str(tmp_path / "s.csv"), "--hierarchy", str(tmp_path / "h.csv"),
                "--horizon", "7", "--n-lags", "7", "--output-dir", str(tmp_path / "o")]
        assert main(argv) == EXIT_OK
