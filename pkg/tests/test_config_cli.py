import csv
import json

import pytest
import yaml

from codice.cli import main
from codice.config import ENV_OUTPUT, ENV_WORKERS, load_config
from codice.errors import ConfigurationError

SMALL = {
    "dataset": {"synthetic": {"shape": "s_curve", "n": 300}},
    "model": {"kind": "logistic"},
    "diffusion": {"k": 8},
    "ga": {"population_size": 20, "max_iterations": 20, "patience": 5},
    "benchmark": {"n_instances": 2},
    "sweep": {"grid": [0.0, 0.2, 0.4, 0.6, 0.8, 1.0]},
    "workers": 1,
}


@pytest.fixture
def config(tmp_path):
    path = tmp_path / "run.yaml"
    doc = dict(SMALL, output={"directory": str(tmp_path / "out")})
    path.write_text(yaml.safe_dump(doc))
    return path


class TestConfig:
    def test_defaults(self):
        cfg = load_config(environ={})
        assert cfg.objective.lambda1 == 0.5 and cfg.diffusion.k == 10 and cfg.seed == 0

    def test_unknown_key(self, tmp_path):
        p = tmp_path / "c.yaml"
        p.write_text("objective:\n  lambda4: 1.0\n")
        with pytest.raises(ConfigurationError, match="lambda4"):
            load_config(p, environ={})

    def test_precedence(self, tmp_path):
        p = tmp_path / "c.yaml"
        p.write_text("output:\n  directory: from_file\nworkers: 3\nobjective:\n  lambda1: 0.1\n")
        env = {ENV_OUTPUT: "from_env", ENV_WORKERS: "2"}
        assert load_config(p, environ={}).output.directory == "from_file"
        cfg = load_config(p, environ=env)
        assert cfg.output.directory == "from_env" and cfg.workers == 2
        cfg = load_config(p, {"output.directory": "from_flag", "objective.lambda1": None}, environ=env)
        assert cfg.output.directory == "from_flag"
        assert cfg.objective.lambda1 == 0.1

    def test_bad_env(self):
        with pytest.raises(ConfigurationError):
            load_config(environ={ENV_WORKERS: "many"})

    def test_json_document(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text(json.dumps({"seed": 5}))
        assert load_config(p, environ={}).seed == 5

    def test_invalid_values(self, tmp_path):
        p = tmp_path / "c.yaml"
        for text in ("objective:\n  lambda1: -1\n", "sweep:\n  grid: [0, 1]\n",
                     "dataset:\n  csv: a.csv\n  synthetic: {}\n", "[1, 2]\n"):
            p.write_text(text)
            with pytest.raises(ConfigurationError):
                load_config(p, environ={})

    def test_method_overrides_inherit(self, tmp_path):
        p = tmp_path / "c.yaml"
        p.write_text("objective:\n  lambda2: 0.9\nbenchmark:\n  methods:\n"
                     "    - name: L1\n      objective:\n        proximity_mode: weighted_l1\n")
        cfg = load_config(p, {"objective.lambda1": 0.2}, environ={})
        w = cfg.benchmark.methods[0].weights(cfg.objective)
        assert (w.lambda1, w.lambda2, w.proximity_mode) == (0.2, 0.9, "weighted_l1")


class TestSynth:
    def test_rows_and_determinism(self, tmp_path, capsys):
        assert main(["synth", "--n", "50", "--seed", "3", "--out", str(tmp_path / "a")]) == 0
        assert main(["synth", "--n", "50", "--seed", "3", "--out", str(tmp_path / "b")]) == 0
        a = (tmp_path / "a" / "s_curve.csv").read_bytes()
        assert a == (tmp_path / "b" / "s_curve.csv").read_bytes()
        assert len(a.decode().splitlines()) == 51
        assert (tmp_path / "a" / "s_curve.schema.yaml").exists()

    def test_tiny_swiss_roll(self, tmp_path, capsys):
        assert main(["synth", "--shape", "swiss_roll", "--n", "2", "--out", str(tmp_path)]) == 0
        assert len((tmp_path / "swiss_roll.csv").read_text().splitlines()) == 3

    def test_synth_roundtrip_config(self, tmp_path, capsys):
        main(["synth", "--n", "200", "--out", str(tmp_path)])
        p = tmp_path / "c.yaml"
        p.write_text(yaml.safe_dump({"dataset": {"csv": "s_curve.csv", "schema_file": "s_curve.schema.yaml",
                                                 "target": "class"},
                                     "output": {"directory": str(tmp_path / "out")}}))
        assert main(["fit", "--config", str(p)]) == 0
        summary = json.loads((tmp_path / "out" / "artifacts.json").read_text())
        assert summary["n_train"] == 160


class TestCommands:
    def test_fit_and_effective_config(self, config, tmp_path, capsys):
        assert main(["fit", "--config", str(config), "--seed", "4"]) == 0
        out = tmp_path / "out"
        eff = yaml.safe_load((out / "effective_config.yaml").read_text())
        assert eff["seed"] == 4 and eff["diffusion"]["k"] == 8
        for name in ("preprocessor.json", "model.json", "diffusion.npz", "artifacts.json"):
            assert (out / name).exists()

    def test_explain_exit_codes(self, config, tmp_path, capsys):
        out = tmp_path / "out"
        assert main(["fit", "--config", str(config)]) == 0
        pred = json.loads((out / "artifacts.json").read_text())
        assert "test_accuracy" in pred
        code = main(["explain", "--config", str(config), "--index", "0"])
        assert code in (0, 2)
        rec = json.loads((out / "explanation.jsonl").read_text())
        assert code == (0 if rec["valid"] else 2)
        desired = rec["desired"]["target_class"]
        # asking for the class the row already has is reported, not an error
        assert main(["explain", "--config", str(config), "--index", "0", "--desired", str(1 - desired)]) == 2
        assert "already" in capsys.readouterr().err

    def test_explain_inline_row(self, config, tmp_path, capsys):
        row = '{"x": 0.5, "y": 1.0, "z": -0.5}'
        outputs = []
        for desired in ("0", "1"):
            code = main(["explain", "--config", str(config), "--row", row, "--desired", desired])
            assert code in (0, 2)
            outputs.append(capsys.readouterr().out)
        # exactly one of the two classes is the row's current prediction
        shown, = [json.loads(o) for o in outputs if o]
        assert shown["input"] == {"x": 0.5, "y": 1.0, "z": -0.5}
        assert "best_history" not in shown

    def test_benchmark(self, config, tmp_path, capsys):
        assert main(["benchmark", "--config", str(config)]) == 0
        with open(tmp_path / "out" / "benchmark.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert [r["method"] for r in rows] == ["CoDiCE_diff", "CoDiCE_L1"]
        assert list(rows[0])[:3] == ["method", "validity", "diffusion_mean"]
        assert (tmp_path / "out" / "benchmark_coords.csv").exists()
        assert "CoDiCE_L1" in capsys.readouterr().out

    def test_ablate(self, config, tmp_path, capsys):
        assert main(["ablate", "--config", str(config), "--n-instances", "1"]) == 0
        with open(tmp_path / "out" / "ablation.csv") as fh:
            assert len(list(csv.DictReader(fh))) == 3

    def test_sweep(self, config, tmp_path, capsys):
        assert main(["sweep", "--config", str(config), "--n-instances", "1"]) == 0
        with open(tmp_path / "out" / "sweep.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert [float(r["lambda1"]) for r in rows] == [0.0, 0.2, 0.4, 0.6, 0.8, 1.0]

    def test_bad_config_exit_1(self, tmp_path, capsys):
        p = tmp_path / "bad.yaml"
        p.write_text("nonsense: true\n")
        assert main(["benchmark", "--config", str(p)]) == 1
        assert "nonsense" in capsys.readouterr().err

    def test_missing_config_exit_1(self, tmp_path, capsys):
        assert main(["fit", "--config", str(tmp_path / "nope.yaml")]) == 1

    def test_bad_index(self, config, capsys):
        assert main(["explain", "--config", str(config), "--index", "9999"]) == 1
