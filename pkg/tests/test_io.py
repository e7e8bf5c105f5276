from __future__ import annotations

import numpy as np
import pytest

from tailwait import __version__, io
from tailwait.errors import DataError
from tailwait.exceedance import WaitingTimes
from tailwait.mixture import GibbsDraws
from tailwait.sim import Panel


def _panel():
    rng = np.random.default_rng(0)
    return Panel([[0.0, 1.0], [2.5, 3.0], [1e-3, 7.0]], np.linspace(0.0, 3.0, 11), rng.exponential(size=(3, 11)) / 3)


def test_panel_round_trip(tmp_path):
    p = _panel()
    path = tmp_path / "panel.csv"
    io.write_panel(path, p, {"seed": 1})
    back = io.ingest_csv(path)
    np.testing.assert_array_equal(back.values, p.values)
    np.testing.assert_array_equal(back.times, p.times)
    np.testing.assert_array_equal(back.sites, p.sites)


def test_panel_file_format(tmp_path):
    path = tmp_path / "panel.csv"
    io.write_panel(path, _panel(), {"seed": 1})
    raw = path.read_bytes()
    assert b"\r" not in raw
    assert raw.splitlines()[0] == b"time,site_1,site_2,site_3"


def test_sidecar_carries_version_and_hash(tmp_path):
    path = tmp_path / "panel.csv"
    cfg = {"seed": 3, "simulate": {"n_sites": 2}}
    io.write_panel(path, _panel(), cfg)
    (rec,) = io.read_sidecar(path)
    assert rec["version"] == __version__
    assert rec["config_hash"] == io.config_hash(cfg)


def test_config_hash_is_order_independent():
    assert io.config_hash({"a": 1, "b": [1, 2]}) == io.config_hash({"b": [1, 2], "a": 1})
    assert io.config_hash({"a": 1}) != io.config_hash({"a": 2})


def test_missing_sidecar_places_sites_on_a_line(tmp_path):
    path = tmp_path / "data.csv"
    path.write_text("time,site_1,site_2\n0,1.0,2.0\n1,3.0,4.0\n")
    p = io.ingest_csv(path)
    np.testing.assert_array_equal(p.sites, [[1.0], [2.0]])
    np.testing.assert_array_equal(p.values, [[1.0, 3.0], [2.0, 4.0]])


def test_non_monotone_time_names_row(tmp_path):
    path = tmp_path / "data.csv"
    path.write_text("time,site_1\n0,1.0\n1,2.0\n1,3.0\n2,4.0\n")
    with pytest.raises(DataError, match="row 4"):
        io.ingest_csv(path)


def test_missing_value_names_row_and_column(tmp_path):
    path = tmp_path / "data.csv"
    path.write_text("time,site_1,site_2\n0,1.0,2.0\n1,,4.0\n")
    with pytest.raises(DataError, match="row 3, column 2"):
        io.ingest_csv(path)


def test_non_numeric_and_ragged_rows(tmp_path):
    path = tmp_path / "data.csv"
    path.write_text("time,site_1\n0,abc\n")
    with pytest.raises(DataError, match="non-numeric"):
        io.ingest_csv(path)
    path.write_text("time,site_1\n0,1.0,2.0\n")
    with pytest.raises(DataError, match="row 2"):
        io.ingest_csv(path)


def test_unreadable_file(tmp_path):
    with pytest.raises(DataError):
        io.ingest_csv(tmp_path / "nope.csv")


def test_waits_round_trip(tmp_path):
    marg = {0: WaitingTimes((0,), np.array([0.0, 2.0, 5.5]), 0.5), 2: WaitingTimes((2,), np.array([1.0]), 0.5)}
    io.write_marginal_waits(tmp_path / "m.csv", marg, {0: 1.2, 2: 0.3})
    back = io.read_marginal_waits(tmp_path / "m.csv")
    assert set(back) == {0, 2}
    np.testing.assert_array_equal(back[0].values, marg[0].values)
    assert back[2].censoring_interval == 0.5
    pairs = {(0, 2): WaitingTimes((0, 2), np.array([3.0, 0.0]), 0.5)}
    io.write_pair_waits(tmp_path / "p.csv", pairs)
    assert (tmp_path / "p.csv").read_text().splitlines()[0] == "pair,i,i_prime,kappa"
    back = io.read_pair_waits(tmp_path / "p.csv")
    np.testing.assert_array_equal(back[(0, 2)].values, [3.0, 0.0])


def test_draws_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    w = rng.dirichlet(np.ones(4), size=5)
    r = rng.exponential(size=(5, 3))
    d = GibbsDraws(w, r, np.arange(10, 15), censoring_interval=2.0, trace={"n_obs": 7})
    io.write_draws(tmp_path / "d.csv", d)
    header = (tmp_path / "d.csv").read_text().splitlines()[0]
    assert header == "iter,eta_0,eta_1,eta_2,eta_3,lambda_1,lambda_2,lambda_3"
    back = io.read_draws(tmp_path / "d.csv")
    np.testing.assert_array_equal(back.weights, w)
    np.testing.assert_array_equal(back.rates, r)
    np.testing.assert_array_equal(back.iterations, d.iterations)
    assert back.censoring_interval == 2.0 and back.trace == {"n_obs": 7}
