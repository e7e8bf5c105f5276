"""Command line driver: ``tailwait simulate|waits|fit|gamma|simstudy``.

Configs are YAML (JSON is valid YAML). Top-level keys: ``seed``, ``out`` and
one block per subcommand (``simulate``, ``waits``, ``fit``, ``gamma``,
``simstudy``). Every stage reads the previous stage's files from ``out`` so
stages can be rerun separately; ``simstudy`` chains all four.

Layout under ``out``::

    panel.csv
    waits/q<quantile>/marginal_waits.csv, pair_waits.csv
    draws/q<quantile>/site_<i>.csv, pair_<i>_<j>.csv, components.csv
    gamma/gamma.csv, gamma_detail.csv
    fig3/gamma_hist.csv, gamma_distance.csv, component_weights.csv   (simstudy)
"""
from __future__ import annotations

import argparse
import itertools
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import io
from ._rng import derive_seed, rng_for
from .attributes import from_mapping as attributes_from_mapping
from .errors import ConfigError, DataError, TailwaitError
from .exceedance import (ThresholdSpec, marginal_waits, pooled_pair_waits, preprocess, select_thresholds,
                         site_levels, transform_margins)
from .mixture import MixturePriors, effective_components, run_chain
from .sim import MsvConfig, simulate_panel
from .tail_dep import METRICS, d_star_and_pd, gamma_posterior

log = logging.getLogger("tailwait")

FIXED_SITES = ((5.0, 5.0), (5.0, 5.5), (1.0, 1.0), (8.0, 8.0), (3.0, 5.0))
TABLE1_MSV = {
    "beta": 1 / 600,
    "delta": 1 / 120,
    "u_min": 1.0,
    "box": [[0.0, 0.0], [10.0, 10.0]],
    "horizon": 438_000.0,
    "attributes": {"type": "table1"},
}
FULL_TIMES = 1_000_000
FULL_EXTRA_SITES = 20


@dataclass
class RunConfig:
    seed: int
    out: Path
    raw: dict = field(default_factory=dict)

    def block(self, name: str) -> dict:
        b = self.raw.get(name) or {}
        if not isinstance(b, dict):
            raise ConfigError(f"config block {name!r} must be a mapping")
        return b


def load_config(path: str | None, seed: int | None = None, out: str | None = None) -> RunConfig:
    raw: dict = {}
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                raw = yaml.safe_load(fh) or {}
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse config {path}: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigError("config must be a mapping at top level")
    if seed is not None:
        raw["seed"] = seed
    if "seed" not in raw:
        raise ConfigError("config needs a master 'seed' (no wall-clock default)")
    if out is not None:
        raw["out"] = out
    try:
        s = int(raw["seed"])
    except (TypeError, ValueError):
        raise ConfigError(f"seed must be an integer, got {raw['seed']!r}") from None
    return RunConfig(s, Path(raw.get("out", "tailwait_out")), raw)


def msv_config(block: dict, seed: int) -> MsvConfig:
    keys = ("beta", "delta", "u_min", "box", "horizon", "attributes", "kernel", "birth_window", "padding")
    unknown = set(block) - set(keys) - {"seed"}
    if unknown:
        raise ConfigError(f"unknown msv keys: {sorted(unknown)}")
    missing = [k for k in ("beta", "delta", "u_min", "box", "horizon", "attributes") if k not in block]
    if missing:
        raise ConfigError(f"msv block missing keys: {missing}")
    try:
        box = tuple(tuple(float(v) for v in corner) for corner in block["box"])
        return MsvConfig(
            beta=float(block["beta"]), delta=float(block["delta"]), u_min=float(block["u_min"]), box=box,
            horizon=float(block["horizon"]), attributes=attributes_from_mapping(block["attributes"]),
            kernel=str(block.get("kernel", "gaussian")), seed=int(block.get("seed", derive_seed(seed, "msv"))),
            birth_window=None if block.get("birth_window") is None else float(block["birth_window"]),
            padding=block.get("padding", "auto"),
        )
    except (TypeError, ValueError, KeyError) as exc:
        if isinstance(exc, TailwaitError):
            raise
        raise ConfigError(f"invalid msv block: {exc}") from None


def _sites(sim: dict, config: MsvConfig, seed: int) -> np.ndarray:
    if "sites" in sim:
        return np.asarray(sim["sites"], dtype=float).reshape(-1, config.dim)
    lo, hi = np.asarray(config.box[0]), np.asarray(config.box[1])
    fixed = np.asarray(FIXED_SITES, dtype=float)
    if config.dim != 2 or np.any(fixed < lo) or np.any(fixed > hi):
        fixed = np.zeros((0, config.dim))
    n_sites = int(sim.get("n_sites", len(fixed) + FULL_EXTRA_SITES))
    if n_sites < 1:
        raise ConfigError("n_sites must be at least 1")
    fixed = fixed[:n_sites]
    extra = rng_for(seed, "sites").uniform(lo, hi, size=(n_sites - len(fixed), config.dim))
    return np.vstack([fixed, extra])


def cmd_simulate(cfg: RunConfig, scale: float | None = None) -> Path:
    sim = dict(cfg.block("simulate"))
    msv = dict(sim.get("msv", TABLE1_MSV))
    scale = float(scale if scale is not None else sim.get("scale", 1.0))
    if not scale > 0:
        raise ConfigError("scale must be positive")
    msv["horizon"] = float(msv["horizon"]) * scale
    n_times = int(round(int(sim.get("n_times", FULL_TIMES)) * scale))
    if n_times < 1:
        raise ConfigError("scaled time grid is empty")
    config = msv_config(msv, cfg.seed)
    sites = _sites(sim, config, cfg.seed)
    times = np.linspace(0.0, config.horizon, n_times) if n_times > 1 else np.array([config.horizon])
    panel = simulate_panel(config, sites, times)
    path = cfg.out / "panel.csv"
    io.write_panel(path, panel, cfg.raw, {"msv": msv, "scale": scale})
    log.info("wrote %s (%d sites x %d times)", path, panel.n_sites, panel.times.size)
    return path


def _qdir(q: float) -> str:
    return f"q{q:g}"


def cmd_waits(cfg: RunConfig, fixed_quantiles: bool | None = None) -> dict[float, ThresholdSpec]:
    """Waiting times for each threshold.

    With ``select: true`` (default) the most extreme candidate quantile that
    gives every site ``min_count`` first exceedances is used; with
    ``select: false`` every listed quantile is processed.
    """
    wb = cfg.block("waits")
    panel = io.ingest_csv(Path(wb.get("panel", cfg.out / "panel.csv")))
    panel = preprocess(panel, wb.get("preprocess", "identity"))
    margins = wb.get("margins")
    if margins:
        panel = transform_margins(panel, margins)
    sign = "lower" if wb.get("tail", "upper") == "lower" else "upper"
    quantiles = [float(q) for q in wb.get("quantiles", [0.999, 0.99])]
    select = wb.get("select", True) if fixed_quantiles is None else not fixed_quantiles
    if select:
        # most extreme first: high quantiles for the upper tail, low ones for the lower
        order = sorted(quantiles, reverse=(sign == "upper"))
        specs = [select_thresholds(panel, order, int(wb.get("min_count", 100)), sign)]
    else:
        specs = [site_levels(panel, q, sign) for q in quantiles]
    vals = panel.values if sign == "upper" else -panel.values
    dt = float(np.median(np.diff(panel.times))) if panel.times.size > 1 else 1.0
    out = {}
    for spec in specs:
        d = cfg.out / "waits" / _qdir(spec.quantile)
        marg = {i: marginal_waits(vals[i], panel.times, spec.levels[i], dt) for i in range(panel.n_sites)}
        levels = {i: float(y) for i, y in enumerate(spec.levels)}
        meta = {"quantile": spec.quantile, "sign": sign, "sites": panel.sites}
        io.write_marginal_waits(d / "marginal_waits.csv", marg, levels, cfg.raw, meta)
        pairs = {}
        if panel.n_sites < 2:
            log.warning("single-site panel: pairwise waits skipped")
        for i, j in itertools.combinations(range(panel.n_sites), 2):
            try:
                pairs[(i, j)] = pooled_pair_waits(panel, spec, i, j)
            except DataError as exc:
                log.warning("pair (%d, %d) skipped: %s", i, j, exc)
        io.write_pair_waits(d / "pair_waits.csv", pairs, cfg.raw, {**meta, "levels": levels})
        out[spec.quantile] = spec
    return out


def _priors(fb: dict) -> MixturePriors:
    try:
        return MixturePriors(int(fb.get("K", 11)), fb.get("dirichlet_alpha"),
                             float(fb.get("gamma_a", 1.0)), float(fb.get("gamma_b", 1.0)))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid fit block: {exc}") from None


def cmd_fit(cfg: RunConfig) -> list[Path]:
    fb = cfg.block("fit")
    priors = _priors(fb)
    n_iter, burn_in, thin = int(fb.get("n_iter", 10_000)), int(fb.get("burn_in", 2_000)), int(fb.get("thin", 4))
    wdir = cfg.out / "waits"
    qdirs = sorted(p for p in wdir.glob("q*") if p.is_dir()) if wdir.exists() else []
    if not qdirs:
        raise DataError(f"no waiting-time files under {wdir}; run 'tailwait waits' first")
    written = []
    for qd in qdirs:
        ddir = cfg.out / "draws" / qd.name
        jobs = [(("site", i), wt) for i, wt in io.read_marginal_waits(qd / "marginal_waits.csv").items()]
        jobs += [(("pair", i, j), wt) for (i, j), wt in io.read_pair_waits(qd / "pair_waits.csv").items()]
        summary = []
        for key, wt in jobs:
            name = "site_%d" % key[1] if key[0] == "site" else "pair_%d_%d" % key[1:]
            if wt.count == 0:
                log.warning("%s/%s: no waiting times, skipped", qd.name, name)
                summary.append([name, 0, "skipped", "", ""])
                continue
            draws = run_chain(wt, priors, n_iter, burn_in, thin, seed=derive_seed(cfg.seed, "fit", qd.name, *key))
            path = ddir / f"{name}.csv"
            io.write_draws(path, draws, cfg.raw, {"quantile_dir": qd.name, "target": name, "n_obs": wt.count})
            written.append(path)
            ec = effective_components(draws)
            mode = max(ec, key=lambda k: (ec[k], -k))
            summary.append([name, wt.count, "ok", mode, ";".join(f"{k}:{v:.4f}" for k, v in sorted(ec.items()))])
        io.write_table(ddir / "components.csv", ["target", "n_obs", "status", "mode_components", "posterior"],
                       summary, cfg.raw)
    return written


def cmd_gamma(cfg: RunConfig, metric: str | None = None) -> list[list]:
    gb = cfg.block("gamma")
    metrics = [metric] if metric else list(gb.get("metrics", ["rkhs"]))
    for m in metrics:
        if m not in METRICS:
            raise ConfigError(f"unknown metric {m!r}; expected one of {METRICS}")
    M = int(gb.get("M", 500))
    scale = float(gb.get("scale", 1.0))
    ddir = cfg.out / "draws"
    qdirs = sorted(p for p in ddir.glob("q*") if p.is_dir()) if ddir.exists() else []
    if not qdirs:
        raise DataError(f"no draw files under {ddir}; run 'tailwait fit' first")
    rows, detail = [], []
    for qd in qdirs:
        q = float(qd.name[1:])
        levels = _levels(cfg.out / "waits" / qd.name / "pair_waits.csv")
        for pair_file in sorted(qd.glob("pair_*.csv"), key=_pair_key):
            i, j = _pair_key(pair_file)
            fi, fj = qd / f"site_{i}.csv", qd / f"site_{j}.csv"
            if not (fi.exists() and fj.exists()):
                log.warning("%s: missing marginal draws for pair (%d, %d), skipped", qd.name, i, j)
                continue
            di, dj, dp = io.read_draws(fi), io.read_draws(fj), io.read_draws(pair_file)
            if len({len(di), len(dj), len(dp)}) > 1:
                log.warning("pair (%d, %d): chains of unequal length truncated to %d", i, j,
                            min(len(di), len(dj), len(dp)))
            for m in metrics:
                g = gamma_posterior(di, dj, dp, M, m, derive_seed(cfg.seed, "gamma", qd.name, i, j, m), scale,
                                    (i, j), (levels.get(i, np.nan), levels.get(j, np.nan)))
                g = d_star_and_pd(dp, g, M, derive_seed(cfg.seed, "dstar", qd.name, i, j, m), scale)
                rows.append([i, j, q, m, g.point_estimate, g.p_d])
                detail.append([i, j, q, m, g.noise_floor, float(np.mean(g.d_star)),
                               float(np.quantile(g.samples, 0.05)), float(np.quantile(g.samples, 0.95))])
    io.write_table(cfg.out / "gamma" / "gamma.csv", ["i", "i_prime", "threshold", "metric", "gamma_hat", "p_d"],
                   rows, cfg.raw, {"M": M, "scale": scale})
    io.write_table(cfg.out / "gamma" / "gamma_detail.csv",
                   ["i", "i_prime", "threshold", "metric", "noise_floor", "d_star_mean", "gamma_q05", "gamma_q95"],
                   detail, cfg.raw, {"M": M, "scale": scale})
    return rows


def _pair_key(path: Path) -> tuple[int, int]:
    _, i, j = path.stem.split("_")
    return int(i), int(j)


def _levels(path: Path) -> dict[int, float]:
    for rec in io.read_sidecar(path):
        if "levels" in rec:
            return {int(k): float(v) for k, v in rec["levels"].items()}
    return {}


def cmd_simstudy(cfg: RunConfig, scale: float | None = None, metric: str | None = None) -> dict:
    """Simulation study at a reduced scale, then the distance-decay summary tables."""
    sb = cfg.block("simstudy")
    scale = float(scale if scale is not None else sb.get("scale", 0.05))
    raw = dict(cfg.raw)
    sim = dict(raw.get("simulate") or {})
    sim.setdefault("n_sites", int(sb.get("n_sites", 10)))
    raw["simulate"] = sim
    waits = dict(raw.get("waits") or {})
    waits.setdefault("quantiles", list(sb.get("quantiles", [0.99, 0.999])))
    waits["select"] = False
    raw["waits"] = waits
    gam = dict(raw.get("gamma") or {})
    gam.setdefault("metrics", list(sb.get("metrics", ["rkhs", "ks"])))
    raw["gamma"] = gam
    run = RunConfig(cfg.seed, cfg.out, raw)
    cmd_simulate(run, scale)
    cmd_waits(run)
    cmd_fit(run)
    rows = cmd_gamma(run, metric)
    _fig3(run, rows)
    return {"rows": rows}


def _fig3(cfg: RunConfig, rows: list[list]) -> None:
    panel_meta = next(r for r in io.read_sidecar(cfg.out / "panel.csv") if r.get("record") == "panel")
    sites = np.asarray(panel_meta["sites"], dtype=float)
    fig = cfg.out / "fig3"
    dist_rows = [[i, j, float(np.linalg.norm(sites[i] - sites[j])), q, m, g] for i, j, q, m, g, _ in rows]
    io.write_table(fig / "gamma_distance.csv", ["i", "i_prime", "distance", "threshold", "metric", "gamma_hat"],
                   dist_rows, cfg.raw)
    hist = []
    for q, m in sorted({(r[2], r[3]) for r in rows}):
        g = np.array([r[4] for r in rows if r[2] == q and r[3] == m])
        counts, edges = np.histogram(g, bins=20)
        hist += [[q, m, float(lo), float(hi), int(c)] for lo, hi, c in zip(edges[:-1], edges[1:], counts)]
    io.write_table(fig / "gamma_hist.csv", ["threshold", "metric", "bin_lo", "bin_hi", "count"], hist, cfg.raw)
    comp = []
    for qd in sorted((cfg.out / "draws").glob("q*")):
        sites_f = sorted(qd.glob("site_*.csv"), key=lambda f: int(f.stem.split("_")[1]))
        for f in sites_f + sorted(qd.glob("pair_*.csv"), key=_pair_key):
            d = io.read_draws(f)
            means = d.weights.mean(axis=0)
            kind = "site" if f.stem.startswith("site") else "pair"
            comp += [[float(qd.name[1:]), kind, f.stem, k, float(v)] for k, v in enumerate(means)]
    io.write_table(fig / "component_weights.csv", ["threshold", "kind", "target", "component", "posterior_mean"],
                   comp, cfg.raw)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tailwait", description="Waiting-time tail dependence for max-stable velocity processes.")
    p.add_argument("command", choices=["simulate", "waits", "fit", "gamma", "simstudy"])
    p.add_argument("--config", help="YAML or JSON config file")
    p.add_argument("--seed", type=int, help="master seed (overrides the config)")
    p.add_argument("--out", help="output directory (overrides the config)")
    p.add_argument("--metric", choices=list(METRICS), help="restrict gamma to one metric")
    p.add_argument("--scale", type=float, help="multiplies the horizon and time-grid size")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, args.seed, args.out)
        if args.command == "simulate":
            cmd_simulate(cfg, args.scale)
        elif args.command == "waits":
            cmd_waits(cfg)
        elif args.command == "fit":
            cmd_fit(cfg)
        elif args.command == "gamma":
            cmd_gamma(cfg, args.metric)
        else:
            cmd_simstudy(cfg, args.scale, args.metric)
    except TailwaitError as exc:
        print(f"tailwait: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"tailwait: error: {exc}", file=sys.stderr)
        return DataError.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
