"""Persistent formats: flat key-value configs, CSV/JSON reports, manifests.

All data files use fixed 17-significant-digit decimal formatting so binary64
values round-trip exactly and identical runs produce identical bytes. The
manifest is reviewer metadata (it carries wall-clock times) and is excluded
from the determinism claim; every other emitted file is deterministic for a
fixed config and package version.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import time
from pathlib import Path
from typing import Any, Optional

import numpy as np

from . import __version__
from .flow import FlowConfig, Trajectory
from .grids import MetricState, format_float, snapshot_from_csv, snapshot_meta, snapshot_to_csv


class ConfigError(ValueError):
    def __init__(self, message: str, key: Optional[str] = None, line: Optional[int] = None):
        loc = f" (key {key!r}" + (f", line {line}" if line else "") + ")" if key else ""
        super().__init__(message + loc)
        self.key = key
        self.line = line


# -- flat key-value config ---------------------------------------------------------


def parse_kv_text(text: str) -> tuple[dict[str, str], dict[str, int]]:
    """key = value lines; returns values and the line number of each key."""
    values: dict[str, str] = {}
    lines: dict[str, int] = {}
    for i, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {line!r}", line=i)
        key, _, value = line.partition("=")
        key = key.strip()
        if key in values:
            raise ConfigError("duplicate key", key=key, line=i)
        values[key] = value.strip()
        lines[key] = i
    return values, lines


_CONFIG_FIELDS = {f.name: f for f in dataclasses.fields(FlowConfig)}
_REQUIRED_KEYS = ("k", "family")


def flow_config_from_text(text: str) -> FlowConfig:
    """Parse and validate a flat key-value flow configuration."""
    values, lines = parse_kv_text(text)
    for key in _REQUIRED_KEYS:
        if key not in values:
            raise ConfigError("missing required key", key=key)
    kwargs: dict[str, Any] = {}
    for key, raw in values.items():
        f = _CONFIG_FIELDS.get(key)
        if f is None:
            raise ConfigError("unknown configuration key", key=key, line=lines[key])
        try:
            if f.type in ("int", int):
                kwargs[key] = int(raw)
            elif f.type in ("float", float):
                kwargs[key] = float(raw)
            elif f.type in ("bool", bool):
                kwargs[key] = raw.lower() in ("1", "true", "yes", "on")
            elif raw.lower() == "none":
                kwargs[key] = None
            else:
                kwargs[key] = raw
        except ValueError as exc:
            raise ConfigError(f"cannot parse value {raw!r}: {exc}", key=key,
                              line=lines[key]) from exc
    cfg = FlowConfig(**kwargs)
    try:
        cfg.validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return cfg


def flow_config_to_text(cfg: FlowConfig) -> str:
    out = []
    for f in dataclasses.fields(FlowConfig):
        v = getattr(cfg, f.name)
        if v is None:
            v = "none"
        elif isinstance(v, float):
            v = format_float(v)
        out.append(f"{f.name} = {v}")
    return "\n".join(out) + "\n"


# -- CSV helpers --------------------------------------------------------------------


def csv_table(columns: dict[str, np.ndarray]) -> str:
    names = list(columns)
    arrays = [np.asarray(columns[n], dtype=float) for n in names]
    n = arrays[0].size
    lines = [",".join(names)]
    for j in range(n):
        lines.append(",".join(format_float(a[j]) for a in arrays))
    return "\n".join(lines) + "\n"


def json_dumps(obj) -> str:
    return json.dumps(_jsonable(obj), sort_keys=True, indent=1) + "\n"


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, float) and (obj != obj):
        return None
    return obj


# -- trajectory persistence ------------------------------------------------------------


MONITOR_FILE = "monitors.csv"
MANIFEST_FILE = "manifest.json"
CONFIG_FILE = "config.txt"


def write_trajectory(traj: Trajectory, out_dir: Path) -> list[Path]:
    """Write monitors, snapshots, summary and config; returns the files."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    files: list[Path] = []

    cols = {name: np.asarray(vals, dtype=float) for name, vals in traj.monitors.items()}
    mon = out_dir / MONITOR_FILE
    mon.write_text(csv_table(cols))
    files.append(mon)

    for i, snap in enumerate(traj.snapshots):
        p = out_dir / f"snap_{i:05d}.csv"
        p.write_text(snapshot_to_csv(snap))
        m = p.with_suffix(".meta")
        m.write_text(snapshot_meta(snap))
        files += [p, m]

    summary = out_dir / "summary.json"
    summary.write_text(json_dumps({
        "k": traj.k,
        "stop_reason": traj.stop_reason,
        "t_sing": traj.t_sing,
        "t_sing_sigma": traj.t_sing_sigma,
        "class_i": traj.class_i,
        "margin_minima": traj.margin_minima,
        "boundary_contaminated": traj.boundary_contaminated,
        "regrid_times": traj.regrid_times,
        "n_snapshots": len(traj.snapshots),
    }))
    files.append(summary)

    cfgf = out_dir / CONFIG_FILE
    cfgf.write_text(flow_config_to_text(FlowConfig(**{
        k: v for k, v in traj.config.items() if k in _CONFIG_FIELDS})))
    files.append(cfgf)
    return files


def load_trajectory(out_dir: Path) -> Trajectory:
    """Rebuild a trajectory from a run directory."""
    out_dir = Path(out_dir)
    mon = out_dir / MONITOR_FILE
    if not mon.exists():
        raise FileNotFoundError(f"no {MONITOR_FILE} in {out_dir}")
    rows = mon.read_text().strip().splitlines()
    names = rows[0].split(",")
    data = np.array([[float(v) for v in r.split(",")] for r in rows[1:]])
    monitors = {name: list(data[:, j]) for j, name in enumerate(names)}

    snaps = []
    for p in sorted(out_dir.glob("snap_*.csv")):
        snaps.append(snapshot_from_csv(p.read_text(), p.with_suffix(".meta").read_text()))
    if not snaps:
        raise FileNotFoundError(f"no snapshots in {out_dir}")

    summary = json.loads((out_dir / "summary.json").read_text())
    cfg_text = (out_dir / CONFIG_FILE).read_text()
    cfg = flow_config_from_text(cfg_text)
    traj = Trajectory(k=summary["k"], config=dataclasses.asdict(cfg), snapshots=snaps,
                      monitors=monitors, stop_reason=summary["stop_reason"],
                      t_sing=summary["t_sing"], t_sing_sigma=summary["t_sing_sigma"],
                      class_i=summary["class_i"], margin_minima=summary["margin_minima"],
                      boundary_contaminated=summary["boundary_contaminated"],
                      regrid_times=list(summary.get("regrid_times", [])))
    return traj


# -- run manifest -----------------------------------------------------------------------


def sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out_dir: Path, config_text: str, files: list[Path],
                   started: float, finished: float) -> Path:
    out_dir = Path(out_dir)
    manifest = {
        "tool": "u2flow",
        "version": __version__,
        "config": config_text,
        "started_unix": started,
        "finished_unix": finished,
        "outputs": {
            f.name: {"sha256": sha256_file(f), "bytes": f.stat().st_size}
            for f in sorted(files, key=lambda p: p.name)
        },
    }
    path = out_dir / MANIFEST_FILE
    path.write_text(json_dumps(manifest))
    return path


def verify_manifest(out_dir: Path) -> dict:
    """Check every referenced output against its recorded digest."""
    out_dir = Path(out_dir)
    manifest = json.loads((out_dir / MANIFEST_FILE).read_text())
    bad = []
    for name, rec in manifest["outputs"].items():
        p = out_dir / name
        if not p.exists():
            bad.append({"file": name, "reason": "missing"})
        elif sha256_file(p) != rec["sha256"]:
            bad.append({"file": name, "reason": "digest mismatch"})
    return {"ok": not bad, "bad": bad, "n_files": len(manifest["outputs"])}


def now() -> float:
    return time.time()
