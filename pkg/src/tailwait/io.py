"""CSV readers and writers plus JSON-lines metadata sidecars.

Every CSV ``name.csv`` gets a sidecar ``name.csv.meta.jsonl`` whose records
carry the library version and the hash of the config that produced it.
All files use ``,`` separators, ``.`` decimals and LF line endings.
"""
from __future__ import annotations

import csv
import hashlib
import json
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from . import __version__
from .errors import DataError
from .exceedance import WaitingTimes
from .mixture import GibbsDraws
from .sim import Panel


def fmt(x) -> str:
    """Shortest text that round-trips the float exactly."""
    return repr(float(x))


def config_hash(config: Mapping | None) -> str:
    text = json.dumps(_jsonable(config or {}), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def _jsonable(obj):
    if isinstance(obj, Mapping):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, Path):
        return str(obj)
    return obj


def sidecar_path(path) -> Path:
    return Path(str(path) + ".meta.jsonl")


def write_sidecar(path, records: Iterable[Mapping], config: Mapping | None = None) -> None:
    base = {"version": __version__, "config_hash": config_hash(config)}
    with open(sidecar_path(path), "w", newline="\n", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps({**base, **_jsonable(rec)}, sort_keys=True) + "\n")


def read_sidecar(path) -> list[dict]:
    p = sidecar_path(path)
    if not p.exists():
        return []
    with open(p, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def _write_rows(path, header: list[str], rows: Iterable[Iterable]) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _read_table(path) -> tuple[list[str], np.ndarray]:
    """Header and a float matrix; errors name the 1-based file row and column."""
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path} is empty") from None
        rows = []
        for r, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(f"{path}: row {r} has {len(row)} fields, header has {len(header)}")
            vals = []
            for c, cell in enumerate(row):
                text = cell.strip()
                if text == "":
                    raise DataError(f"{path}: missing value at row {r}, column {c + 1} ({header[c]})")
                try:
                    vals.append(float(text))
                except ValueError:
                    raise DataError(f"{path}: non-numeric value {cell!r} at row {r}, column {c + 1} ({header[c]})") from None
            rows.append(vals)
    data = np.array(rows, dtype=float).reshape(len(rows), len(header))
    return header, data


# panels

def write_panel(path, panel: Panel, config: Mapping | None = None, extra: Mapping | None = None) -> None:
    header = ["time"] + [f"site_{i + 1}" for i in range(panel.n_sites)]
    rows = ([fmt(t)] + [fmt(v) for v in panel.values[:, j]] for j, t in enumerate(panel.times))
    _write_rows(path, header, rows)
    rec = {"record": "panel", "sites": panel.sites, "n_times": int(panel.times.size), "config": config or {}}
    if extra:
        rec.update(extra)
    write_sidecar(path, [rec], config)


def ingest_csv(path, schema: str = "panel") -> Panel:
    """Read a ``time,site_1..site_n`` CSV into a :class:`Panel`.

    Site coordinates come from the sidecar when present; otherwise sites are
    placed at 1..n on a line.
    """
    if schema != "panel":
        raise DataError(f"unknown schema {schema!r}")
    header, data = _read_table(path)
    if not header or header[0].strip().lower() != "time":
        raise DataError(f"{path}: first column must be 'time'")
    if len(header) < 2:
        raise DataError(f"{path}: no site columns")
    times = data[:, 0]
    if np.any(~np.isfinite(data)):
        r, c = np.argwhere(~np.isfinite(data))[0]
        raise DataError(f"{path}: non-finite value at row {r + 2}, column {c + 1}")
    if times.size > 1:
        bad = np.flatnonzero(np.diff(times) <= 0)
        if bad.size:
            raise DataError(f"{path}: time column not strictly increasing at row {bad[0] + 3}")
    n = len(header) - 1
    sites = None
    for rec in read_sidecar(path):
        if rec.get("record") == "panel" and "sites" in rec:
            sites = np.asarray(rec["sites"], dtype=float)
    if sites is None or sites.shape[0] != n:
        sites = np.arange(1, n + 1, dtype=float)[:, None]
    return Panel(sites, times, data[:, 1:].T)


# waiting times

def write_marginal_waits(path, waits: Mapping[int, WaitingTimes], levels: Mapping[int, float] | None = None,
                         config: Mapping | None = None, meta: Mapping | None = None) -> None:
    rows = ([site, k, fmt(v)] for site, wt in sorted(waits.items()) for k, v in enumerate(wt.values))
    _write_rows(path, ["site", "i", "kappa"], rows)
    rec = {"record": "marginal_waits", "levels": {str(k): v for k, v in (levels or {}).items()},
           "censoring_interval": {str(s): w.censoring_interval for s, w in waits.items()}}
    rec.update(meta or {})
    write_sidecar(path, [rec], config)


def write_pair_waits(path, waits: Mapping[tuple[int, int], WaitingTimes], config: Mapping | None = None,
                     meta: Mapping | None = None) -> None:
    rows = ([f"{i}-{j}", i, j, fmt(v)] for (i, j), wt in sorted(waits.items()) for v in wt.values)
    _write_rows(path, ["pair", "i", "i_prime", "kappa"], rows)
    rec = {"record": "pair_waits",
           "censoring_interval": {f"{i}-{j}": w.censoring_interval for (i, j), w in waits.items()}}
    rec.update(meta or {})
    write_sidecar(path, [rec], config)


def read_marginal_waits(path) -> dict[int, WaitingTimes]:
    header, data = _read_table(path)
    if header != ["site", "i", "kappa"]:
        raise DataError(f"{path}: expected header site,i,kappa")
    dt = _sidecar_field(path, "censoring_interval")
    out = {}
    for s in np.unique(data[:, 0]).astype(int):
        vals = data[data[:, 0] == s, 2]
        out[int(s)] = WaitingTimes((int(s),), vals, float(dt.get(str(s), 1.0)))
    return out


def read_pair_waits(path) -> dict[tuple[int, int], WaitingTimes]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["pair", "i", "i_prime", "kappa"]:
            raise DataError(f"{path}: expected header pair,i,i_prime,kappa")
        groups: dict[tuple[int, int], list[float]] = {}
        for r, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 4:
                raise DataError(f"{path}: row {r} has {len(row)} fields, header has 4")
            try:
                key = (int(row[1]), int(row[2]))
                groups.setdefault(key, []).append(float(row[3]))
            except ValueError:
                raise DataError(f"{path}: non-numeric value at row {r}") from None
    dt = _sidecar_field(path, "censoring_interval")
    return {k: WaitingTimes(k, np.array(v), float(dt.get(f"{k[0]}-{k[1]}", 1.0))) for k, v in groups.items()}


def _sidecar_field(path, name) -> dict:
    for rec in read_sidecar(path):
        if name in rec:
            return rec[name]
    return {}


# draws

def write_draws(path, draws: GibbsDraws, config: Mapping | None = None, meta: Mapping | None = None) -> None:
    K = draws.K
    header = ["iter"] + [f"eta_{j}" for j in range(K)] + [f"lambda_{j}" for j in range(1, K)]
    rows = ([int(it)] + [fmt(x) for x in w] + [fmt(x) for x in r]
            for it, w, r in zip(draws.iterations, draws.weights, draws.rates))
    _write_rows(path, header, rows)
    rec = {"record": "draws", "K": K, "censoring_interval": draws.censoring_interval, "trace": draws.trace}
    rec.update(meta or {})
    write_sidecar(path, [rec], config)


def read_draws(path) -> GibbsDraws:
    header, data = _read_table(path)
    if not header or header[0] != "iter" or (len(header) - 1) % 2 != 1:
        raise DataError(f"{path}: not a draws file")
    K = (len(header) - 1 + 1) // 2
    if data.shape[0] == 0:
        raise DataError(f"{path}: no draws")
    rec = next((r for r in read_sidecar(path) if r.get("record") == "draws"), {})
    return GibbsDraws(data[:, 1:K + 1], data[:, K + 1:], data[:, 0].astype(int), None,
                      float(rec.get("censoring_interval", 1.0)), dict(rec.get("trace", {})))


# reports

def write_table(path, header: list[str], rows: Iterable[Iterable], config: Mapping | None = None,
                meta: Mapping | None = None) -> None:
    _write_rows(path, header, ([fmt(v) if isinstance(v, (float, np.floating)) else v for v in row] for row in rows))
    write_sidecar(path, [{"record": Path(path).stem, **(meta or {})}], config)
