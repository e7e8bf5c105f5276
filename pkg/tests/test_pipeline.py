from __future__ import annotations

import logging
import math
import subprocess
import sys

import numpy as np
import pytest
import yaml

from tailwait import io, pipeline
from tailwait.errors import NumericalError
from tailwait.exceedance import pooled_pair_waits, site_levels
from tailwait.mixture import GibbsDraws
from tailwait.pipeline import RunConfig, cmd_fit, cmd_gamma, cmd_simulate, cmd_waits, load_config, main
from tailwait.sim import Panel

SMALL_MSV = {
    "beta": 2.0, "delta": 0.5, "u_min": 0.5, "box": [[0, 0], [3, 3]], "horizon": 200.0,
    "attributes": {"type": "point_mass", "velocity": [0.3, 0.0], "shape": [[0.5, 0.0], [0.0, 0.5]]},
}


def small_raw(tmp_path, **blocks):
    raw = {"seed": 4, "out": str(tmp_path / "out"),
           "simulate": {"msv": SMALL_MSV, "sites": [[1, 1], [1.5, 1], [2.5, 2.5]], "n_times": 2000}}
    raw.update(blocks)
    return raw


def write_config(tmp_path, raw, name="cfg.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(raw))
    return str(path)


# config

def test_missing_seed_is_config_error(tmp_path):
    path = write_config(tmp_path, {"simulate": {}})
    assert main(["simulate", "--config", path]) == 2


def test_seed_flag_overrides(tmp_path):
    cfg = load_config(write_config(tmp_path, {"seed": 1}), seed=9, out=str(tmp_path))
    assert cfg.seed == 9 and cfg.out == tmp_path


def test_bad_configs_exit_2(tmp_path):
    assert main(["simulate", "--config", str(tmp_path / "absent.yaml")]) == 2
    (tmp_path / "broken.yaml").write_text("seed: [1,\n")
    assert main(["simulate", "--config", str(tmp_path / "broken.yaml")]) == 2
    bad = small_raw(tmp_path)
    bad["simulate"]["msv"] = {**SMALL_MSV, "colour": "red"}
    assert main(["simulate", "--config", write_config(tmp_path, bad)]) == 2
    bad = small_raw(tmp_path, gamma={"metrics": ["wasserstein"]})
    assert main(["gamma", "--config", write_config(tmp_path, bad)]) == 2


def test_missing_inputs_exit_3(tmp_path):
    path = write_config(tmp_path, small_raw(tmp_path))
    assert main(["waits", "--config", path]) == 3
    assert main(["fit", "--config", path]) == 3
    assert main(["gamma", "--config", path]) == 3


def test_numerical_error_exit_4(tmp_path, monkeypatch):
    def boom(*a, **k):
        raise NumericalError("non-finite posterior draw")

    monkeypatch.setattr(pipeline, "simulate_panel", boom)
    assert main(["simulate", "--config", write_config(tmp_path, small_raw(tmp_path))]) == 4


def test_console_script_help():
    res = subprocess.run([sys.executable, "-m", "tailwait.pipeline", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "simstudy" in res.stdout


# simulate

def test_simulate_writes_panel_and_is_reproducible(tmp_path):
    path = write_config(tmp_path, small_raw(tmp_path))
    assert main(["simulate", "--config", path]) == 0
    out = tmp_path / "out"
    first = {f.name: f.read_bytes() for f in out.iterdir()}
    panel = io.ingest_csv(out / "panel.csv")
    assert panel.values.shape == (3, 2000)
    np.testing.assert_array_equal(panel.sites, [[1, 1], [1.5, 1], [2.5, 2.5]])
    rec = io.read_sidecar(out / "panel.csv")[0]
    assert rec["config_hash"] == io.config_hash(load_config(path).raw)
    assert main(["simulate", "--config", path]) == 0
    assert {f.name: f.read_bytes() for f in out.iterdir()} == first


def test_simulate_seed_changes_panel(tmp_path):
    raw = small_raw(tmp_path)
    cmd_simulate(RunConfig(1, tmp_path / "a", raw))
    cmd_simulate(RunConfig(2, tmp_path / "b", raw))
    a = io.ingest_csv(tmp_path / "a" / "panel.csv").values
    b = io.ingest_csv(tmp_path / "b" / "panel.csv").values
    assert not np.array_equal(a, b)


def test_zero_intensity_panel_is_all_zero(tmp_path):
    raw = small_raw(tmp_path)
    raw["simulate"]["msv"] = {**SMALL_MSV, "beta": 1e-16}
    cmd_simulate(RunConfig(0, tmp_path, raw))
    assert not io.ingest_csv(tmp_path / "panel.csv").values.any()


def test_default_sites_fixed_then_random(tmp_path):
    raw = {"simulate": {"msv": {**SMALL_MSV, "box": [[0, 0], [10, 10]], "horizon": 5.0}, "n_sites": 7, "n_times": 3}}
    cmd_simulate(RunConfig(3, tmp_path, raw))
    sites = io.ingest_csv(tmp_path / "panel.csv").sites
    np.testing.assert_array_equal(sites[:5], pipeline.FIXED_SITES)
    assert sites.shape == (7, 2) and np.all((sites >= 0) & (sites <= 10))


def test_scale_shrinks_horizon_and_grid(tmp_path):
    raw = small_raw(tmp_path)
    cmd_simulate(RunConfig(0, tmp_path, raw), scale=0.1)
    p = io.ingest_csv(tmp_path / "panel.csv")
    assert p.times.size == 200 and p.times[-1] == pytest.approx(20.0)


# waits

def _toy_panel():
    a = np.zeros(12)
    a[[2, 7]] = 5.0
    b = np.zeros(12)
    b[[1, 4, 10]] = 5.0
    return Panel([[0.0, 0.0], [1.0, 0.0]], np.arange(12.0), np.vstack([a, b]))


def test_two_site_toy_waits(tmp_path):
    panel = _toy_panel()
    io.write_panel(tmp_path / "toy.csv", panel)
    raw = {"waits": {"panel": str(tmp_path / "toy.csv"), "quantiles": [0.5], "select": False}}
    cmd_waits(RunConfig(0, tmp_path, raw))
    d = tmp_path / "waits" / "q0.5"
    marg = io.read_marginal_waits(d / "marginal_waits.csv")
    # site 0: down-crossing at 3, up-crossing at 7 -> (7 - 3) - (1 + 1)
    np.testing.assert_array_equal(marg[0].values, [2.0])
    # site 1: (2, 4) -> 0 and (5, 10) -> 3
    np.testing.assert_array_equal(marg[1].values, [0.0, 3.0])
    assert marg[0].censoring_interval == 1.0
    pairs = io.read_pair_waits(d / "pair_waits.csv")
    expect = pooled_pair_waits(panel, site_levels(panel, 0.5), 0, 1)
    np.testing.assert_array_equal(pairs[(0, 1)].values, expect.values)
    levels = pipeline._levels(d / "pair_waits.csv")
    assert levels == {0: 0.0, 1: 0.0}


def test_single_site_panel_warns_and_has_no_pairs(tmp_path, caplog):
    panel = _toy_panel()
    single = Panel(panel.sites[:1], panel.times, panel.values[:1])
    io.write_panel(tmp_path / "one.csv", single)
    raw = {"waits": {"panel": str(tmp_path / "one.csv"), "quantiles": [0.5], "select": False}}
    with caplog.at_level(logging.WARNING):
        cmd_waits(RunConfig(0, tmp_path, raw))
    assert "single-site" in caplog.text
    assert io.read_pair_waits(tmp_path / "waits" / "q0.5" / "pair_waits.csv") == {}


def test_threshold_selection_reports_counts(tmp_path):
    io.write_panel(tmp_path / "toy.csv", _toy_panel())
    raw = {"waits": {"panel": str(tmp_path / "toy.csv"), "quantiles": [0.5], "min_count": 50}}
    assert main(["waits", "--config", write_config(tmp_path, {"seed": 0, "out": str(tmp_path), **raw})]) == 3


# fit and gamma

def test_end_to_end_small(tmp_path):
    raw = small_raw(tmp_path, waits={"quantiles": [0.9], "select": False},
                    fit={"n_iter": 300, "burn_in": 100, "thin": 2, "K": 5}, gamma={"M": 50, "metrics": ["rkhs", "ks"]})
    path = write_config(tmp_path, raw)
    for cmd in ("simulate", "waits", "fit", "gamma"):
        assert main([cmd, "--config", path]) == 0, cmd
    out = tmp_path / "out"
    draws = out / "draws" / "q0.9"
    names = {f.name for f in draws.glob("*.csv")}
    assert {"site_0.csv", "site_1.csv", "site_2.csv", "pair_0_1.csv", "pair_0_2.csv", "pair_1_2.csv",
            "components.csv"} <= names
    d = io.read_draws(draws / "site_0.csv")
    assert len(d) == 100 and d.weights.shape[1] == 5
    np.testing.assert_allclose(d.weights.sum(axis=1), 1.0, atol=1e-12)
    lines = (out / "gamma" / "gamma.csv").read_text().splitlines()
    assert lines[0] == "i,i_prime,threshold,metric,gamma_hat,p_d"
    assert len(lines) == 1 + 3 * 2
    for line in lines[1:]:
        g, pd = map(float, line.split(",")[4:])
        assert g >= 0 and 0 <= pd <= 1
    h = io.config_hash(load_config(path).raw)
    for f in [out / "panel.csv", draws / "pair_0_1.csv", out / "gamma" / "gamma.csv"]:
        assert io.read_sidecar(f)[0]["config_hash"] == h


def test_fit_is_deterministic(tmp_path):
    raw = small_raw(tmp_path, waits={"quantiles": [0.9], "select": False},
                    fit={"n_iter": 60, "burn_in": 20, "thin": 1, "K": 3})
    cfg = RunConfig(5, tmp_path / "out", raw)
    cmd_simulate(cfg)
    cmd_waits(cfg)
    cmd_fit(cfg)
    first = (tmp_path / "out" / "draws" / "q0.9" / "pair_0_1.csv").read_bytes()
    cmd_fit(cfg)
    assert (tmp_path / "out" / "draws" / "q0.9" / "pair_0_1.csv").read_bytes() == first


def _constant(weights, rates, n):
    return GibbsDraws(np.tile(weights, (n, 1)), np.tile(rates, (n, 1)), np.arange(n))


def test_gamma_self_pair_at_noise_floor(tmp_path):
    # two copies of one marginal law with the independence pair law |E - E'| ~ Exp
    R = 300
    d = _constant([0.0, 1.0], [0.4], R)
    qd = tmp_path / "draws" / "q0.99"
    for name in ("site_0", "site_1", "pair_0_1"):
        io.write_draws(qd / f"{name}.csv", d)
    rows = cmd_gamma(RunConfig(1, tmp_path, {"gamma": {"M": 400, "metrics": ["rkhs"]}}))
    assert len(rows) == 1
    detail = (tmp_path / "gamma" / "gamma_detail.csv").read_text().splitlines()[1].split(",")
    floor, q05, q95 = float(detail[4]), float(detail[6]), float(detail[7])
    g = rows[0][4]
    assert q05 <= floor <= q95
    assert abs(g - floor) < (q95 - q05) / math.sqrt(R)


def test_gamma_skips_pair_without_marginals(tmp_path, caplog):
    d = _constant([0.1, 0.9], [1.0], 20)
    qd = tmp_path / "draws" / "q0.99"
    io.write_draws(qd / "site_0.csv", d)
    io.write_draws(qd / "pair_0_1.csv", d)
    with caplog.at_level(logging.WARNING):
        rows = cmd_gamma(RunConfig(1, tmp_path, {"gamma": {"M": 20}}))
    assert rows == [] and "missing marginal" in caplog.text


def test_simstudy_tiny(tmp_path):
    raw = {"seed": 2, "out": str(tmp_path / "s"),
           "simulate": {"msv": {**SMALL_MSV, "horizon": 4000.0}, "sites": [[1, 1], [1.5, 1], [2.5, 2.5]],
                        "n_times": 40_000},
           "fit": {"n_iter": 120, "burn_in": 40, "thin": 2, "K": 3}, "gamma": {"M": 30},
           "simstudy": {"quantiles": [0.9], "metrics": ["ks"]}}
    assert main(["simstudy", "--config", write_config(tmp_path, raw), "--scale", "0.05"]) == 0
    fig = tmp_path / "s" / "fig3"
    dist = fig / "gamma_distance.csv"
    assert dist.read_text().splitlines()[0] == "i,i_prime,distance,threshold,metric,gamma_hat"
    assert len(dist.read_text().splitlines()) == 4
    assert (fig / "gamma_hist.csv").exists() and (fig / "component_weights.csv").exists()
