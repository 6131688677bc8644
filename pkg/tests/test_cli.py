import json
from pathlib import Path

import numpy as np
import pytest
import yaml

from enscore import cli
from enscore.config import ConfigError, ExperimentConfig, load_config
from enscore.sampler import NonFiniteStateError

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

SMALL = {
    "name": "small",
    "seed": 4,
    "target": {"name": "banana"},
    "forward": {"kind": "ZeroDrift", "sigma_min": 0.01, "sigma_max": 10.0},
    "sampler": {"n_ens": 80, "n_resample": 4, "dt_init": 0.05},
    "eval": {"n_repeats": 20},
}


def _write(tmp_path, cfg, name="cfg.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(cfg, sort_keys=False))
    return path


def _run(tmp_path, cfg, *extra, out="out"):
    path = _write(tmp_path, cfg)
    code = cli.main(["run", str(path), "--output", str(tmp_path / out), *extra])
    return code, tmp_path / out


class TestList:
    def test_contents(self, capsys):
        assert cli.main(["list"]) == 0
        text = capsys.readouterr().out
        for word in ["banana", "ridged", "mixture3", "gaussian", "blr20"]:
            assert word in text
        assert "ReverseSDE_EulerMaruyama" in text and "ProbabilityFlow_Heun" in text
        assert "Gaussian" in text and "MIS" in text

    def test_stable(self, capsys):
        cli.main(["list"])
        first = capsys.readouterr().out
        cli.main(["list"])
        assert capsys.readouterr().out == first


class TestValidation:
    def test_unknown_target(self, tmp_path, capsys):
        cfg = dict(SMALL, target={"name": "pretzel"})
        code, _ = _run(tmp_path, cfg)
        err = capsys.readouterr().err
        assert code == 2
        assert "target.name" in err and "pretzel" in err

    def test_missing_target_name(self, tmp_path, capsys):
        code, _ = _run(tmp_path, dict(SMALL, target={"params": {}}))
        assert code == 2
        assert "target.name" in capsys.readouterr().err

    def test_line_anchored(self, tmp_path):
        path = tmp_path / "bad.yaml"
        path.write_text("seed: 1\ntarget:\n  name: banana\nsampler:\n  n_ens: 10\n  integrator: RK4\n")
        with pytest.raises(ConfigError) as info:
            load_config(path)
        assert info.value.line == 6
        assert "sampler.integrator" in str(info.value)

    @pytest.mark.parametrize(
        "patch,key",
        [
            ({"seed": None}, "seed"),
            ({"sampler": {"n_ens": 10.5}}, "sampler.n_ens"),
            ({"sampler": {"warp": 1}}, "sampler.warp"),
            ({"forward": {"kind": "Langevin"}}, "forward.kind"),
            ({"bogus": 1}, "bogus"),
        ],
    )
    def test_rejections(self, tmp_path, patch, key):
        cfg = dict(SMALL, **patch)
        if patch.get("seed", 0) is None:
            cfg.pop("seed")
        with pytest.raises(ConfigError) as info:
            load_config(_write(tmp_path, cfg))
        assert key in str(info.value)

    def test_ou_needs_prior(self, tmp_path):
        cfg = dict(SMALL, forward={"kind": "OrnsteinUhlenbeck"})
        code, _ = _run(tmp_path, cfg)
        assert code == 2

    def test_all_bundled_configs_parse(self):
        paths = sorted(CONFIGS.glob("*.yaml"))
        assert len(paths) >= 6
        for p in paths:
            load_config(p)


class TestRun:
    def test_small_run_artifacts(self, tmp_path):
        code, out = _run(tmp_path, SMALL)
        assert code == 0
        samples = np.loadtxt(out / "samples.csv", delimiter=",", skiprows=1)
        assert samples.shape == (80, 2)
        assert (out / "samples.csv").read_text().splitlines()[0] == "x0,x1"
        meta = json.loads((out / "run_meta.json").read_text())
        assert meta["p0_eval_count"] == 320
        assert {"wall_time_s", "config", "code_version"} <= set(meta)
        summary = json.loads((out / "summary.json").read_text())
        assert summary["ens"]["n_nonfinite"] == 0
        energy = json.loads((out / "energy.json").read_text())
        assert {"tau_self", "ens_vs_reference"} <= set(energy)

    def test_config_echo_round_trip(self, tmp_path):
        _, out = _run(tmp_path, SMALL)
        meta = json.loads((out / "run_meta.json").read_text())
        again = ExperimentConfig.from_dict(meta["config"])
        assert again == load_config(tmp_path / "cfg.yaml")

    def test_byte_identical(self, tmp_path):
        _, a = _run(tmp_path, SMALL, out="a")
        _, b = _run(tmp_path, SMALL, "--threads", "2", out="b")
        assert (a / "samples.csv").read_bytes() == (b / "samples.csv").read_bytes()
        assert (a / "energy.json").read_bytes() == (b / "energy.json").read_bytes()

    def test_seed_override(self, tmp_path):
        _, a = _run(tmp_path, SMALL, out="a")
        _, b = _run(tmp_path, SMALL, "--seed", "99", out="b")
        assert (a / "samples.csv").read_bytes() != (b / "samples.csv").read_bytes()
        assert json.loads((b / "run_meta.json").read_text())["config"]["seed"] == 99

    def test_runtime_error_exit_3(self, tmp_path, monkeypatch):
        def boom(*args, **kwargs):
            raise NonFiniteStateError(7, 0.25)

        monkeypatch.setattr(cli, "run", boom)
        code, out = _run(tmp_path, SMALL)
        assert code == 3
        diag = json.loads((out / "error.json").read_text())
        assert diag["error"] == "NonFiniteStateError" and diag["member"] == 7

    def test_blr20_energy_schema(self, tmp_path):
        cfg = load_config(CONFIGS / "blr20_loc.yaml").to_dict()
        cfg["sampler"].update(n_ens=60, n_resample=2, dt_init=0.05)
        cfg["baseline"].update(n_steps=300, burn_in=100, n_samples=60)
        cfg["eval"].update(n_repeats=10)
        code, out = _run(tmp_path, cfg)
        assert code == 0
        energy = json.loads((out / "energy.json").read_text())
        assert energy["reference"] == "analytic_posterior"
        assert {"ens_vs_reference", "mala_vs_reference", "tau_self"} <= set(energy)
        assert (out / "mala_samples.csv").exists()

    def test_banana_bundled_config(self, tmp_path):
        code = cli.main(["run", str(CONFIGS / "banana.yaml"), "--output", str(tmp_path / "banana")])
        assert code == 0
        samples = np.loadtxt(tmp_path / "banana" / "samples.csv", delimiter=",", skiprows=1)
        assert samples.shape == (1000, 2)
        meta = json.loads((tmp_path / "banana" / "run_meta.json").read_text())
        assert meta["p0_eval_count"] == 10_000
