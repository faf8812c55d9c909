import json
import math

import numpy as np
import pytest

from kolmodens.cli import (
    ExperimentConfig,
    load_config,
    main,
    render_report,
    run_experiment,
    validate_config,
)
from kolmodens.errors import ConfigError

BASE_STABILITY = {
    "command": "stability",
    "seed": 11,
    "d": 1,
    "t": 1.0,
    "start": [0.2, 0.0],
    "proxy": {"c": 0.5},
    "field": {"sigma": {"family": "constant", "value": 1.0},
              "drift": {"family": "zero"}},
    "perturbation": {"family": "drift-bump", "epsilons": [0.05]},
    "grid": {"n_x": 5, "n_y": 5, "spans": [1.5, 1.0]},
    "scheme": {"time_nodes": 4, "space_nodes": 5, "order": 1},
    "method": "series",
    "stability": {"sampling": {"n_pairs": 300, "resolution": 41}},
}


def write_config(tmp_path, cfg, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return path


class TestValidation:
    def test_minimal_proxy_eval(self):
        cfg = validate_config({"command": "proxy-eval", "d": 1, "t": 1.0,
                               "start": [0.0, 0.0], "proxy": {"c": 1.0},
                               "grid": {"n_x": 7, "n_y": 7}})
        assert cfg.command == "proxy-eval"
        assert cfg.grid.n_x == 7

    def test_q_below_4d_cites_requirement(self):
        cfg = dict(BASE_STABILITY)
        cfg["perturbation"] = {"family": "drift-bump-lq", "epsilons": [0.05], "q": 2}
        with pytest.raises(ConfigError) as err:
            validate_config(cfg)
        assert any("q > 4d" in p and p.startswith("perturbation.q") for p in err.value.problems)

    def test_seed_override(self):
        cfg = validate_config(dict(BASE_STABILITY), seed_override=99)
        assert cfg.seed == 99
        assert cfg.raw["seed"] == 99

    def test_canonical_round_trip(self):
        cfg = validate_config(dict(BASE_STABILITY))
        text = cfg.canonical()
        again = validate_config(json.loads(text))
        assert again.canonical() == text

    INVALID_CASES = [
        ({"command": "nope"}, "command"),
        ({"command": "series", "t": -1.0, "field": {"sigma": {"family": "constant"}}}, "t"),
        ({"command": "series", "t": 1.0, "start": [0, 0]}, "field"),
        ({"command": "series", "t": 1.0, "start": [0, 0],
          "field": {"sigma": {"family": "warp"}}}, "field.sigma.family"),
        ({"command": "proxy-eval", "t": 1.0, "start": [0, 0], "proxy": {"c": 0.0}}, "proxy.c"),
        ({"command": "proxy-eval", "t": 1.0, "start": [0, 0], "proxy": {"c": 1.5}}, "proxy.c"),
        ({"command": "proxy-eval", "t": 1.0, "start": [0, 0], "grid": {"n_x": 1}}, "grid.n_x"),
        ({"command": "proxy-eval", "t": 1.0, "start": [0, 0],
          "grid": {"spans": [1.0, -2.0]}}, "grid.spans"),
        ({"command": "proxy-eval", "t": 1.0, "start": [np.nan, 0]}, "start"),
        ({"command": "stability", "t": 1.0, "start": [0, 0],
          "field": BASE_STABILITY["field"]}, "perturbation"),
        ({"command": "stability", "t": 1.0, "start": [0, 0],
          "field": BASE_STABILITY["field"],
          "perturbation": {"family": "melt", "epsilons": [0.1]}}, "perturbation.family"),
        ({"command": "stability", "t": 1.0, "start": [0, 0],
          "field": BASE_STABILITY["field"],
          "perturbation": {"family": "drift-bump", "epsilons": []}}, "perturbation.epsilons"),
        ({"command": "stability", "t": 1.0, "start": [0, 0],
          "field": BASE_STABILITY["field"],
          "perturbation": {"family": "drift-bump", "epsilons": [-0.1]}}, "perturbation.epsilons"),
        ({"command": "simulate", "t": 1.0, "start": [0, 0],
          "field": BASE_STABILITY["field"], "mc": {"n_paths": 12}}, "mc.n_paths"),
        ({"command": "stability", "t": 1.0, "start": [0, 0],
          "field": BASE_STABILITY["field"],
          "perturbation": {"family": "drift-bump", "epsilons": [0.1]},
          "method": "dowsing"}, "method"),
        ({"command": "series", "t": 1.0, "start": [0, 0], "d": 2,
          "field": BASE_STABILITY["field"]}, "grid"),
        ({"command": "series", "t": 1.0, "start": [0, 0],
          "field": BASE_STABILITY["field"],
          "scheme": {"space_rule": "cubist"}}, "scheme.space_rule"),
        ({"command": "report"}, "report.source"),
        ({"command": "series", "t": 1.0, "start": [0, 0], "seed": "abc",
          "field": BASE_STABILITY["field"]}, "seed"),
    ]

    @pytest.mark.parametrize("cfg,path", INVALID_CASES)
    def test_invalid_configs_rejected_before_compute(self, cfg, path):
        with pytest.raises(ConfigError) as err:
            validate_config(cfg)
        assert any(p.startswith(path) for p in err.value.problems), err.value.problems


class TestRunners:
    def test_proxy_eval_contains_mean_point_value(self, tmp_path):
        cfg = validate_config({"command": "proxy-eval", "d": 1, "t": 1.0,
                               "start": [0.0, 0.0], "proxy": {"c": 1.0},
                               "grid": {"n_x": 11, "n_y": 11}})
        run_experiment(cfg, out_dir=tmp_path)
        rows = (tmp_path / "proxy_eval.csv").read_text().splitlines()
        assert rows[0] == "t,x,y,value"
        values = [float(r.split(",")[3]) for r in rows[1:]]
        assert max(values) == pytest.approx(math.sqrt(3.0) / (2.0 * math.pi), rel=1e-12)

    def test_series_artifacts(self, tmp_path):
        cfg = validate_config({"command": "series", "d": 1, "t": 0.5,
                               "start": [0.1, 0.0],
                               "field": {"sigma": {"family": "constant", "value": 1.0},
                                         "drift": {"family": "constant", "value": 0.4}},
                               "grid": {"n_x": 3, "n_y": 3},
                               "scheme": {"time_nodes": 3, "space_nodes": 4, "order": 1}})
        manifest = run_experiment(cfg, out_dir=tmp_path)
        names = [a["name"] for a in manifest["artifacts"]]
        assert "series.csv" in names and "series_terms.csv" in names
        terms = (tmp_path / "series_terms.csv").read_text().splitlines()
        assert terms[0] == "t,x,y,r,term,bound"
        assert len(terms) == 1 + 9 * 2  # ranks 0 and 1 at each node

    def test_simulate_artifacts(self, tmp_path):
        cfg = validate_config({"command": "simulate", "d": 1, "t": 0.5,
                               "start": [0.1, 0.0],
                               "field": {"sigma": {"family": "constant", "value": 1.0}},
                               "grid": {"n_x": 9, "n_y": 9},
                               "mc": {"n_paths": 2000, "n_steps": 40}})
        run_experiment(cfg, out_dir=tmp_path)
        lines = (tmp_path / "density.csv").read_text().splitlines()
        assert lines[0] == "t,x,y,value,stderr"
        blob = json.loads((tmp_path / "density.json").read_text())
        assert blob["n_paths"] == 2000

    def test_stability_run_and_report_rendering(self, tmp_path):
        cfg = validate_config(dict(BASE_STABILITY))
        run_experiment(cfg, out_dir=tmp_path)
        rep = json.loads((tmp_path / "stability_report.json").read_text())
        assert rep["C_empirical"] > 0
        text = render_report(tmp_path / "stability_report.json")
        assert "epsilon sweep" in text and "drift-bump" in text

    def test_golden_determinism_across_runs_and_threads(self, tmp_path):
        cfg_path = write_config(tmp_path, BASE_STABILITY)
        outs = []
        for name, threads in (("a", None), ("b", None), ("c", "4")):
            out = tmp_path / name
            argv = ["--config", str(cfg_path), "--out", str(out)]
            if threads is not None:
                argv += ["--threads", threads]
            else:
                argv += ["--threads", "1"]
            assert main(argv) == 0
            outs.append(out)
        ref_csv = (outs[0] / "stability_grid.csv").read_bytes()
        ref_rep = (outs[0] / "stability_report.json").read_bytes()
        ref_man = (outs[0] / "manifest.json").read_bytes()
        for out in outs[1:]:
            assert (out / "stability_grid.csv").read_bytes() == ref_csv
            assert (out / "stability_report.json").read_bytes() == ref_rep
            assert (out / "manifest.json").read_bytes() == ref_man

    def test_manifest_lists_artifact_hashes(self, tmp_path):
        import hashlib

        cfg = validate_config({"command": "proxy-eval", "d": 1, "t": 1.0,
                               "start": [0.0, 0.0], "grid": {"n_x": 3, "n_y": 3}})
        manifest = run_experiment(cfg, out_dir=tmp_path)
        entry = manifest["artifacts"][0]
        digest = hashlib.sha256((tmp_path / entry["name"]).read_bytes()).hexdigest()
        assert digest == entry["sha256"]
        assert (tmp_path / "timing.json").exists()

    def test_cli_exit_codes(self, tmp_path, capsys):
        bad = write_config(tmp_path, {"command": "stability"}, "bad.json")
        assert main(["--config", str(bad)]) == 2
        err = capsys.readouterr().err
        assert "invalid config" in err
        missing = tmp_path / "missing.json"
        assert main(["--config", str(missing)]) == 2

    def test_out_env_var(self, tmp_path, monkeypatch):
        import kolmodens.cli as cli

        monkeypatch.setenv(cli.OUT_ENV, str(tmp_path / "envout"))
        cfg = validate_config({"command": "proxy-eval", "d": 1, "t": 1.0,
                               "start": [0.0, 0.0], "grid": {"n_x": 3, "n_y": 3}})
        run_experiment(cfg)
        assert (tmp_path / "envout" / "proxy_eval.csv").exists()
