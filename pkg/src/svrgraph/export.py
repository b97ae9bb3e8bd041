"""Graph, table and image exporters (JSON, DOT, CSV, PGM)."""

from __future__ import annotations

import csv
import json
import re
from importlib.metadata import PackageNotFoundError, version
from pathlib import Path

import numpy as np

from .spectra import SvrGraph, threshold_edges


def tool_version() -> str:
    try:
        return version("svrgraph")
    except PackageNotFoundError:
        return "unknown"


def graph_export(graph: SvrGraph, p: float, params: dict | None = None) -> dict:
    """JSON-ready dict: nodes, thresholded edges and the metadata needed to regenerate them."""
    nodes = [
        {"layer": n.layer, "rank": n.rank, "sigma": n.sigma, "color": n.color, "tie_flag": graph.tie_flags[n.layer]}
        for layer in graph.neurons
        for n in layer
    ]
    edges, thresholds, nulls = [], [], []
    for i, adj in enumerate(graph.adjacencies):
        null = adj.null_model
        thresholds.append(null.threshold(p))
        nulls.append(null.to_dict())
        for row, col, w in threshold_edges(adj, p):
            edges.append({"from": [i, col], "to": [i + 1, row], "weight": w})
    meta = {
        "p": p,
        "thresholds": thresholds,
        "null_models": nulls,
        "tie_flags": list(graph.tie_flags),
        "index_base": "ranks 0-based; internal dims 1-based counts",
        "tool_version": tool_version(),
        "manifest": graph.spec.to_dict(),
    }
    if "boundaries" in graph.meta:
        meta["boundaries"] = {str(k): v for k, v in graph.meta["boundaries"].items()}
    meta.update(params or {})
    return {"nodes": nodes, "edges": edges, "meta": meta}


def to_dot(export: dict) -> str:
    """Lossy DOT view: x = layer, y = sigma rank, edge gray level = weight."""
    lines = ["digraph svr {", "  node [shape=circle, width=0.2, label=\"\"];"]
    for n in export["nodes"]:
        shade = int(round(255 * (1.0 - float(n["color"]))))
        lines.append(
            f'  "{n["layer"]}_{n["rank"]}" [pos="{n["layer"] * 2},{-n["rank"] * 0.3:.2f}!", '
            f'style=filled, fillcolor="#{shade:02x}{shade:02x}ff", tooltip="sigma={n["sigma"]:.6g}"];'
        )
    wmax = max((e["weight"] for e in export["edges"]), default=1.0) or 1.0
    for e in export["edges"]:
        g = int(round(200 * (1.0 - e["weight"] / wmax)))
        lines.append(
            f'  "{e["from"][0]}_{e["from"][1]}" -> "{e["to"][0]}_{e["to"][1]}" '
            f'[color="#{g:02x}{g:02x}{g:02x}", weight={e["weight"]:.6g}];'
        )
    lines.append("}")
    return "\n".join(lines) + "\n"


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, default=_json_default))


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def write_csv(path, header, rows, comments: dict | None = None) -> None:
    """CSV with optional leading ``# key: value`` comment lines holding parameters."""
    with open(path, "w", newline="") as fh:
        for k, v in (comments or {}).items():
            fh.write(f"# {k}: {json.dumps(v, default=_json_default)}\n")
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="") as fh:
        lines = [line for line in fh if not line.startswith("#")]
    rows = list(csv.reader(lines))
    return rows[0], rows[1:]


def write_matrix_csv(path, M, comments: dict | None = None) -> None:
    M = np.atleast_2d(np.asarray(M, dtype=np.float64))
    write_csv(path, [f"c{j}" for j in range(M.shape[1])], ([repr(float(v)) for v in row] for row in M), comments)


def write_pgm(path, image, bits: int = 8, params: dict | None = None) -> dict:
    """Binary PGM after per-image min-max scaling; the scaling goes to ``<path>.json``."""
    if bits not in (8, 16):
        raise ValueError("bits must be 8 or 16")
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError("PGM export needs a 2-D array")
    lo, hi = float(img.min()), float(img.max())
    maxval = 255 if bits == 8 else 65535
    scaled = np.zeros_like(img) if hi == lo else (img - lo) / (hi - lo)
    q = np.rint(scaled * maxval).astype(">u2" if bits == 16 else np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{img.shape[1]} {img.shape[0]}\n{maxval}\n".encode("ascii"))
        fh.write(q.tobytes())
    sidecar = {"min": lo, "max": hi, "bits": bits, "shape": list(img.shape), **(params or {})}
    write_json(str(path) + ".json", sidecar)
    return sidecar


def read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    m = re.match(rb"P5\s+(\d+)\s+(\d+)\s+(\d+)\s", raw)
    if m is None:
        raise ValueError("not a binary PGM")
    w, h, maxval = (int(g) for g in m.groups())
    data = raw[m.end() :]
    dt = np.uint8 if maxval < 256 else np.dtype(">u2")
    return np.frombuffer(data, dtype=dt, count=w * h).reshape(h, w)
