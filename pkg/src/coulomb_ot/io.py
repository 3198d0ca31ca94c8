"""File formats: measure JSON, plan CSV, potentials and report JSON."""

from __future__ import annotations

import csv
import io
import json
import math

import numpy as np

from .measures import DensitySpec, DiscreteMeasure, Grid, discretize, discretize_quantiles


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def dumps(obj) -> str:
    """Deterministic JSON: sorted keys, non-finite floats as null."""
    return json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n"


def write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps(obj))


def measure_to_dict(m: DiscreteMeasure) -> dict:
    out = {
        "dim": m.dim,
        "points": m.points.tolist(),
        "weights": m.weights.tolist(),
        "cell_volume": m.cell_volume.tolist(),
        "spec": m.spec or {},
    }
    if m.grid is not None:
        out["grid"] = {
            "shape": list(m.grid.shape),
            "origin": m.grid.origin.tolist(),
            "spacing": m.grid.spacing.tolist(),
            "index": m.grid.index.tolist(),
        }
    return out


def measure_from_dict(d: dict) -> DiscreteMeasure:
    pts = np.asarray(d["points"], float).reshape(len(d["weights"]), int(d["dim"]))
    grid = None
    if d.get("grid"):
        g = d["grid"]
        grid = Grid(tuple(g["shape"]), np.asarray(g["origin"], float),
                    np.asarray(g["spacing"], float), np.asarray(g["index"], np.int64))
    return DiscreteMeasure(pts, d["weights"], d["cell_volume"], grid, d.get("spec"))


def load_measure(path) -> DiscreteMeasure:
    with open(path, encoding="utf-8") as fh:
        return measure_from_dict(json.load(fh))


def save_measure(path, m: DiscreteMeasure):
    write_json(path, measure_to_dict(m))


def plan_csv(plan) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["i", "j", "mass"])
    for i, j, m in zip(plan.rows.tolist(), plan.cols.tolist(), plan.mass.tolist()):
        w.writerow([i, j, repr(m)])
    return buf.getvalue()


def write_plan_csv(path, plan):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(plan_csv(plan))


def read_plan_csv(path):
    """Return ``(rows, cols, mass)`` arrays from a plan CSV."""
    with open(path, encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        rows, cols, mass = [], [], []
        for rec in reader:
            rows.append(int(rec["i"]))
            cols.append(int(rec["j"]))
            mass.append(float(rec["mass"]))
    return np.array(rows, np.int64), np.array(cols, np.int64), np.array(mass)


def _gaussian(r):
    return np.exp(-0.5 * np.asarray(r) ** 2)


_PROFILES = {
    "gaussian": _gaussian,
    "flat": lambda r: np.ones_like(np.asarray(r, float)),
}


def parse_spec(text: str) -> DiscreteMeasure:
    """Build a measure from a colon-separated recipe.

    Recognised forms::

        uniform:L=1:n=200            uniform on [0, L], n cells
        box:L=1x1:n=32               uniform on a box, n cells per axis
        radial:profile=gaussian:d=2:R=3:n=48
        linear:beta=1:n=400          density 1 + beta x on [-1/2, 1/2]
        random:seed=0:alpha=1:n=128  random Hölder density on [0, 1]

    Adding ``:quantile=1`` to a one-dimensional recipe places equal-mass atoms.
    """
    kind, *parts = text.split(":")
    opts = {}
    for p in parts:
        if "=" not in p:
            raise ValueError(f"bad spec fragment {p!r} in {text!r}")
        k, v = p.split("=", 1)
        opts[k] = v
    n = int(opts.pop("n", 100))
    quantile = opts.pop("quantile", "0") not in ("0", "false", "")
    if kind == "uniform":
        spec = DensitySpec.uniform_interval(float(opts.pop("L", 1.0)))
    elif kind == "box":
        spec = DensitySpec.uniform_box([float(v) for v in opts.pop("L", "1x1").split("x")])
    elif kind == "radial":
        name = opts.pop("profile", "gaussian")
        if name not in _PROFILES:
            raise ValueError(f"unknown radial profile {name!r}")
        prof = _PROFILES[name]
        spec = DensitySpec.radial_profile(prof, int(opts.pop("d", 2)), float(opts.pop("R", 3.0)))
        spec.params["profile"] = name
    elif kind == "linear":
        beta = float(opts.pop("beta", 1.0))
        if not abs(beta) < 2:
            raise ValueError("linear density needs |beta| < 2 to stay positive")
        spec = DensitySpec.custom_grid(lambda x: 1.0 + beta * x[:, 0], [-0.5], [0.5],
                                       bounds=(1 - abs(beta) / 2, 1 + abs(beta) / 2), name="linear")
        spec.params["beta"] = beta
    elif kind == "random":
        from .measures import random_holder_spec

        rng = np.random.default_rng(int(opts.pop("seed", 0)))
        spec = random_holder_spec(rng, float(opts.pop("alpha", 1.0)))
    else:
        raise ValueError(f"unknown spec kind {kind!r}")
    if opts:
        raise ValueError(f"unused spec options {sorted(opts)} in {text!r}")
    if quantile:
        return discretize_quantiles(spec, n)
    return discretize(spec, n)
