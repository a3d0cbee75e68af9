import pytest

from rlcat.config import ConfigError, ExperimentConfig, load_config, load_preset, override_seed


def test_reference_values():
    cfg = load_config()
    s = cfg.settings("A", "uplink")
    assert (s.rl.alpha, s.rl.tau, s.rl.dt_max, s.rl.w, s.rl.omega, s.map_cell_width) == (0.1, 10, 120, 0.8, -10, 25)
    assert (s.rl.s_star, s.rl.s_max) == (30, 40)
    assert s.ml_cat.phi_max == 40 and s.cat.phi_max == 30
    assert cfg.epochs == 400 and cfg.trace_set().n_train == 40


@pytest.mark.parametrize("mno,direction,star,smax", [("A", "downlink", 20, 30), ("B", "uplink", 20, 30),
                                                     ("B", "downlink", 30, 40), ("C", "uplink", 50, 60),
                                                     ("C", "downlink", 15, 25)])
def test_profiles(mno, direction, star, smax):
    p = load_config().profile(mno, direction)
    assert (p.s_star, p.s_max) == (star, smax)


def test_layered_file(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text("seed: 7\nrl: {w: 0.4}\nruns: [{mno: C, direction: downlink}]\n")
    cfg = load_config(path)
    assert cfg.seed == 7 and cfg.settings("C", "downlink").rl.w == 0.4
    assert cfg.run_keys() == [("C", "downlink")]


def test_w_out_of_range(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text("rl: {w: 1.5}\n")
    with pytest.raises(ConfigError, match="w"):
        load_config(path)


@pytest.mark.parametrize("over,needle", [
    ({"rl": {"gamma": 0.9}}, "rl.gamma"),
    ({"bogus": 1}, "bogus"),
    ({"profiles": {"A": {"sideways": {}}}}, "profiles.A.sideways"),
    ({"runs": [{"mno": "Z", "direction": "uplink"}]}, "Z"),
    ({"schemes": ["pcat"]}, "pcat"),
    ({"epochs": 0}, "epochs"),
    ({"profiles": {"A": {"uplink": {"s_star": 50}}}}, "profiles.A.uplink"),
    ({"profiles": {"A": {"uplink": {"colour": 1}}}}, "profiles.A.uplink"),
    ({"scenario": {"shadowing_corr_dist": 0}}, "scenario"),
    ({"predictor": {"kind": "tree_file"}}, "tree_path"),
    ({"sweep": {"w_values": [2]}}, "sweep"),
])
def test_validation_names_key(over, needle):
    with pytest.raises(ConfigError, match=needle):
        ExperimentConfig.from_dict(over)


def test_new_profile_and_overrides():
    cfg = ExperimentConfig.from_dict({"profiles": {"D": {"uplink": {
        "s_star": 5, "s_max": 10, "pred_mae": 1, "pred_rmse": 2, "rate_range": 12}}},
        "runs": [{"mno": "D", "direction": "uplink"}]})
    assert cfg.profile("D", "uplink").rate_range == 12
    assert cfg.with_overrides({"epochs": 3}).epochs == 3


def test_partial_profile_override():
    cfg = ExperimentConfig.from_dict({"profiles": {"A": {"uplink": {"s_star": 25}}}})
    p = cfg.profile("A", "uplink")
    assert (p.s_star, p.s_max, p.pred_rmse) == (25, 40, 4.061)


def test_scenario_overrides():
    cfg = ExperimentConfig.from_dict({"scenario": {
        "name": "highway", "duration": 50, "low_sinr_regions": [{"x": 1, "y": 2, "radius": 3, "penalty": 4}],
        "enb_positions": [[0, 0], [100, 0]]}})
    sc = cfg.scenario()
    assert sc.scenario == "highway" and sc.duration == 50 and len(sc.enb_positions) == 2
    assert sc.low_sinr_regions[0].penalty == 4


def test_missing_and_malformed_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "nope.yaml")
    bad = tmp_path / "bad.yaml"
    bad.write_text("rl: [\n")
    with pytest.raises(ConfigError):
        load_config(bad)
    bad.write_text("- 1\n")
    with pytest.raises(ConfigError):
        load_config(bad)


def test_digest_and_seed_override():
    cfg = load_config()
    assert cfg.digest() == load_config().digest()
    other = override_seed(cfg, 99)
    assert other.seed == 99 and other.digest() != cfg.digest()


def test_unknown_preset():
    with pytest.raises(ConfigError):
        load_preset("nope")
