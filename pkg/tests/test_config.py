"""Run configuration parsing and derived settings."""

import pytest

from bridgedistill.config import SCHEMA, ConfigError, RunConfig, describe_keys


class TestParse:
    def test_defaults(self):
        cfg = RunConfig()
        assert cfg["distill.lam"] == 1.0 and cfg["distill.temperature"] == 4.0
        assert cfg["grid.seeds"] == (0, 1, 2, 3, 4)

    def test_values_comments_and_blank_lines(self):
        cfg = RunConfig.parse("# header\n\ndistill.lam = 0.5  # weight\neval.k_list = 1,3\ndistill.mode=dc\n")
        assert cfg["distill.lam"] == 0.5 and cfg["eval.k_list"] == (1, 3) and cfg["distill.mode"] == "dc"

    def test_unknown_key_names_line(self):
        with pytest.raises(ConfigError, match=r"x\.cfg:2: unknown config key"):
            RunConfig.parse("run.seed = 1\nrun.typo = 3\n", "x.cfg")

    def test_bad_value(self):
        with pytest.raises(ConfigError, match="run.seed"):
            RunConfig.parse("run.seed = abc")

    def test_missing_equals(self):
        with pytest.raises(ConfigError):
            RunConfig.parse("run.seed 3")

    def test_round_trip(self, tmp_path):
        cfg = RunConfig({"run.seed": 7, "grid.modes": ("sc",), "dataset.public_fraction": 0.5})
        path = tmp_path / "c.cfg"
        path.write_text(cfg.to_text())
        assert RunConfig.load(path).values == cfg.values

    def test_set_unknown(self):
        with pytest.raises(ConfigError):
            RunConfig()["nope"] = 1


class TestDerived:
    def test_paths(self):
        cfg = RunConfig({"run.out": "o", "run.name": "n"})
        assert str(cfg.run_dir) == "o/n" and str(cfg.data_dir) == "o/n/data"
        cfg["dataset.dir"] = "d"
        assert str(cfg.data_dir) == "d"

    def test_distill_config_takes_seed_and_resolution(self):
        cfg = RunConfig({"run.seed": 3, "distill.resolution": 32, "distill.mode": "dc"})
        d = cfg.distill_config()
        assert (d.seed, d.resolution, d.mode) == (3, 32, "dc")
        assert cfg.degrade_config().p == 32

    def test_invalid_combination_surfaces(self):
        cfg = RunConfig({"distill.mode": "sc", "distill.teacher": "O"})
        with pytest.raises(ValueError):
            cfg.distill_config()

    def test_pipeline_config(self):
        pc = RunConfig({"eval.n_pos": 10}).pipeline_config()
        assert pc.n_pos == 10 and pc.dataset.n_identities == 60

    def test_describe_lists_every_key(self):
        text = describe_keys()
        assert len(text.splitlines()) == len(SCHEMA)
        for k in SCHEMA:
            assert k.name in text
