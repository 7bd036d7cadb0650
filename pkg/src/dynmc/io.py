"""CSV/JSON artifact readers and writers.

All floating-point output uses %.17g so written artifacts round-trip
bit-identically.
"""

from __future__ import annotations

import csv
import json
import os
import time

import numpy as np

from .exceptions import ConfigError

_F = "%.17g"


def _fmt(v) -> str:
    return _F % float(v)


# --- cell and face fields ----------------------------------------------


def write_cell_csv(path: str, field: np.ndarray) -> None:
    """Cell field as ``i,j,value`` rows (i fastest along x)."""
    nx, ny = field.shape
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["i", "j", "value"])
        for j in range(ny):
            for i in range(nx):
                w.writerow([i, j, _fmt(field[i, j])])


def read_cell_csv(path: str, nx: int | None = None,
                  ny: int | None = None) -> np.ndarray:
    rows = []
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r, None)
        if header is None or [h.strip() for h in header] != ["i", "j", "value"]:
            raise ConfigError(f"{path}: expected header i,j,value")
        for line in r:
            if not line:
                continue
            rows.append((int(line[0]), int(line[1]), float(line[2])))
    if not rows:
        raise ConfigError(f"{path}: no data rows")
    mi = max(t[0] for t in rows) + 1
    mj = max(t[1] for t in rows) + 1
    if nx is not None and (mi, mj) != (nx, ny):
        raise ConfigError(f"{path}: grid is {mi}x{mj}, expected {nx}x{ny}")
    out = np.full((mi, mj), np.nan)
    for i, j, v in rows:
        out[i, j] = v
    if np.isnan(out).any():
        raise ConfigError(f"{path}: missing cells")
    return out


def write_face_csv(path: str, vx: np.ndarray, vy: np.ndarray) -> None:
    """Face fluxes as ``orientation,i,j,flux`` (x faces then y faces)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["orientation", "i", "j", "flux"])
        for j in range(vx.shape[1]):
            for i in range(vx.shape[0]):
                w.writerow(["x", i, j, _fmt(vx[i, j])])
        for j in range(vy.shape[1]):
            for i in range(vy.shape[0]):
                w.writerow(["y", i, j, _fmt(vy[i, j])])


def read_face_csv(path: str):
    xs, ys = [], []
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r, None)
        if header is None or [h.strip() for h in header] != [
                "orientation", "i", "j", "flux"]:
            raise ConfigError(f"{path}: expected header orientation,i,j,flux")
        for line in r:
            if not line:
                continue
            (xs if line[0] == "x" else ys).append(
                (int(line[1]), int(line[2]), float(line[3])))
    def build(rows):
        mi = max(t[0] for t in rows) + 1
        mj = max(t[1] for t in rows) + 1
        out = np.zeros((mi, mj))
        for i, j, v in rows:
            out[i, j] = v
        return out
    if not xs or not ys:
        raise ConfigError(f"{path}: missing face orientation rows")
    return build(xs), build(ys)


# --- macroscopic series -------------------------------------------------


def write_averages_csv(path: str, states, n: int) -> None:
    """Coarse state series: ``time,kind,location,continuum,value`` rows.

    kind is P, C, or V; location is ``I:J`` for blocks and the edge key
    string ``orientation:index:row`` for edges.
    """
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time", "kind", "location", "continuum", "value"])
        for s in states:
            t = _fmt(s.t)
            Nx, Ny, _ = s.C.shape
            P = getattr(s, "P", None)
            p_grid = (isinstance(P, np.ndarray) and P.shape == s.C.shape)
            for I in range(Nx):
                for J in range(Ny):
                    for k in range(n):
                        if p_grid and np.isfinite(P[I, J, k]):
                            w.writerow([t, "P", f"{I}:{J}", k,
                                        _fmt(P[I, J, k])])
                        w.writerow([t, "C", f"{I}:{J}", k, _fmt(s.C[I, J, k])])
            if isinstance(P, dict):
                # mixed-model multipliers: one row per block or (block, k)
                for key in sorted(P):
                    (I, J), k = (key[0], -1) if len(key) == 1 else key
                    w.writerow([t, "P", f"{I}:{J}", k, _fmt(P[key])])
            for key in sorted(s.V):
                o, i, r = key
                for k in range(n):
                    w.writerow([t, "V", f"{o}:{i}:{r}", k, _fmt(s.V[key][k])])


class SeriesState:
    """Minimal coarse-state view reconstructed from an averages CSV."""

    def __init__(self, t, C, V, P):
        self.t = t
        self.C = C
        self.V = V
        self.P = P


def read_averages_csv(path: str) -> list:
    rows = []
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r, None)
        if header is None or [h.strip() for h in header] != [
                "time", "kind", "location", "continuum", "value"]:
            raise ConfigError(
                f"{path}: expected header time,kind,location,continuum,value")
        for line in r:
            if line:
                rows.append((float(line[0]), line[1], line[2],
                             int(line[3]), float(line[4])))
    if not rows:
        raise ConfigError(f"{path}: no data rows")
    times = sorted({t for t, *_ in rows})
    n = 1 + max(k for _t, kind, _loc, k, _v in rows if kind == "C")
    NI = 1 + max(int(loc.split(":")[0]) for _t, kind, loc, _k, _v in rows
                 if kind == "C")
    NJ = 1 + max(int(loc.split(":")[1]) for _t, kind, loc, _k, _v in rows
                 if kind == "C")
    out = []
    for t in times:
        C = np.zeros((NI, NJ, n))
        P = np.full((NI, NJ, n), np.nan)
        V = {}
        for tt, kind, loc, k, v in rows:
            if tt != t:
                continue
            if kind in ("C", "P"):
                I, J = (int(s) for s in loc.split(":"))
                if kind == "C":
                    C[I, J, k] = v
                elif 0 <= k < n:
                    P[I, J, k] = v
            elif kind == "V":
                o, i, r_ = loc.split(":")
                key = (o, int(i), int(r_))
                V.setdefault(key, np.zeros(n))[k] = v
            else:
                raise ConfigError(f"{path}: unknown kind {kind!r}")
        out.append(SeriesState(t, C, V, P))
    return out


def write_operator_csv(path: str, entries) -> None:
    """Effective-operator entries ``block,name,i,j,value``.

    ``entries`` yields (block_key, name, i, j, value); block_key is any
    string identifying the block (e.g. "3:0").
    """
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["block", "name", "i", "j", "value"])
        for block, name, i, j, v in entries:
            w.writerow([block, name, i, j, _fmt(v)])


def write_errors_csv(path: str, report) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["metric", "continuum", "value"])
        for name, k, v in report.rows():
            w.writerow([name, k, _fmt(v)])


# --- manifest -----------------------------------------------------------


def write_manifest(path: str, cfg, extra: dict | None = None) -> None:
    data = {
        "name": cfg.name,
        "config_hash": cfg.config_hash(),
        "seeds": {"ic": cfg.ic_seed, "mobility": cfg.lam_seed,
                  "particles": cfg.particle_seed},
        "written_at": time.strftime("%Y-%m-%dT%H:%M:%S"),
    }
    if extra:
        data.update(extra)
    with open(path, "w") as fh:
        json.dump(data, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_pgm(path: str, field: np.ndarray, vmin: float = 0.0,
              vmax: float = 1.0) -> None:
    """Quicklook grayscale image (plain PGM), y upward."""
    scaled = np.clip((field - vmin) / (vmax - vmin), 0.0, 1.0)
    img = (scaled.T[::-1, :] * 255).astype(int)
    with open(path, "w") as fh:
        fh.write(f"P2\n{img.shape[1]} {img.shape[0]}\n255\n")
        for row in img:
            fh.write(" ".join(str(v) for v in row) + "\n")


def ensure_dir(path: str) -> str:
    os.makedirs(path, exist_ok=True)
    return path
