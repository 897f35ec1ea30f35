"""Artifact emission: delimited text, JSON, and the packed binary dump.

Every file starts with (or contains) a schema tag and the short hash of the
run configuration.  JSON payloads additionally carry ``generated_at``; it is
the one documented non-deterministic field, everything else is byte-stable
for a fixed configuration and seed.
"""

from __future__ import annotations

import datetime
import json
import struct
from pathlib import Path

import numpy as np

BINARY_MAGIC = b"BCTLENS1"
SCHEMA_VERSION = 1


def _header_line(schema, cfg_hash):
    return f"# schema={schema}.v{SCHEMA_VERSION} config_hash={cfg_hash}\n"


def write_json(path, schema, payload, cfg_hash):
    doc = {
        "schema": f"{schema}.v{SCHEMA_VERSION}",
        "config_hash": cfg_hash,
        "generated_at": datetime.datetime.now(datetime.timezone.utc).isoformat(),
    }
    doc.update(payload)
    Path(path).write_text(json.dumps(doc, sort_keys=True, indent=1, default=_coerce) + "\n")
    return path


def _coerce(obj):
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj)}")


def ensemble_to_csv(path, ensemble, cfg_hash):
    """Long format: path, t, mode, value (one row per coefficient sample)."""
    nodes = ensemble.grid.nodes
    with open(path, "w") as fh:
        fh.write(_header_line("path_ensemble", cfg_hash))
        fh.write("path,t,mode,value\n")
        for i in range(ensemble.n_paths):
            for m, t in enumerate(nodes):
                for k in range(ensemble.n_modes):
                    fh.write(f"{i},{t:.12g},{k},{ensemble.states[i, m, k]:.17g}\n")
    return path


def ensemble_to_binary(path, ensemble):
    """Packed little-endian dump.

    Layout: 8-byte magic ``BCTLENS1``; three little-endian uint64 fields
    n_paths, n_steps, n_modes; then n_paths * (n_steps + 1) * n_modes
    float64 values in row-major [path][time][mode] order.
    """
    with open(path, "wb") as fh:
        fh.write(BINARY_MAGIC)
        fh.write(struct.pack("<QQQ", ensemble.n_paths, ensemble.grid.n_steps,
                             ensemble.n_modes))
        fh.write(np.ascontiguousarray(ensemble.states, dtype="<f8").tobytes())
    return path


def read_binary_ensemble(path):
    """Inverse of :func:`ensemble_to_binary`; returns (states, n_steps)."""
    raw = Path(path).read_bytes()
    if raw[:8] != BINARY_MAGIC:
        raise ValueError(f"{path}: bad magic {raw[:8]!r}")
    n_paths, n_steps, n_modes = struct.unpack("<QQQ", raw[8:32])
    states = np.frombuffer(raw[32:], dtype="<f8").reshape(n_paths, n_steps + 1, n_modes)
    return states, int(n_steps)


def riccati_to_csv(path, solution, cfg_hash):
    """Kernel entries: t, i, j, value."""
    nodes = solution.grid.nodes
    n = solution.n_modes
    with open(path, "w") as fh:
        fh.write(_header_line("riccati_kernel", cfg_hash))
        fh.write("t,i,j,value\n")
        for m, t in enumerate(nodes):
            for i in range(n):
                for j in range(n):
                    fh.write(f"{t:.12g},{i},{j},{solution.P[m, i, j]:.17g}\n")
    return path


def summary_to_csv(path, schema, columns, cfg_hash):
    """Aligned time-series columns: dict of name -> 1-d array."""
    names = list(columns)
    arrays = [np.asarray(columns[k], dtype=float) for k in names]
    length = len(arrays[0])
    with open(path, "w") as fh:
        fh.write(_header_line(schema, cfg_hash))
        fh.write(",".join(names) + "\n")
        for row in range(length):
            fh.write(",".join(f"{a[row]:.17g}" for a in arrays) + "\n")
    return path


def solution_summary_columns(solution, scenario=None):
    """Per-node summary statistics of a coupled solution."""
    from .riccati import weighted_regularity_profile

    X, p = solution.X, solution.p
    grid = solution.grid
    n_paths = X.shape[0]
    sq_x = np.sum(X * X, axis=2)
    sq_p = np.sum(p * p, axis=2)
    cols = {
        "t": grid.nodes,
        "mean_sq_norm_X": sq_x.mean(axis=0),
        "se_sq_norm_X": sq_x.std(axis=0, ddof=1) / np.sqrt(n_paths),
        "mean_sq_norm_p": sq_p.mean(axis=0),
        "se_sq_norm_p": sq_p.std(axis=0, ddof=1) / np.sqrt(n_paths),
    }
    if scenario is not None:
        profile = weighted_regularity_profile(scenario.model, p, grid)
        cols["weighted_p_profile"] = np.append(profile, 0.0)
    return cols


def solution_summary_payload(solution, scenario=None):
    """JSON-ready per-time summary statistics (mean, variance, weighted norms)."""
    cols = solution_summary_columns(solution, scenario)
    return {k: np.asarray(v).tolist() for k, v in cols.items()}


def affine_term_payload(term, model, grid):
    """JSON-ready per-time statistics of the backward affine term."""
    from .riccati import weighted_regularity_profile

    vals = term.values()
    if vals.ndim == 2:
        mean = vals
        var = np.zeros_like(vals)
        profile_src = vals[None, :, :]
    else:
        mean = vals.mean(axis=0)
        var = vals.var(axis=0, ddof=1)
        profile_src = vals
    profile = weighted_regularity_profile(model, profile_src, grid)
    return {
        "mode": term.mode,
        "t": grid.nodes.tolist(),
        "mean_sq_norm_r": np.sum(mean * mean, axis=1).tolist(),
        "mean_variance_r": var.mean(axis=1).tolist(),
        "weighted_r_profile": np.append(profile, 0.0).tolist(),
        "ridge_used": term.ridge_used,
    }
