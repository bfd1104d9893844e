"""CSV/JSON readers and writers for datasets, draws, truths and reports.

Floats are written with ``repr`` so every file reads back bit-for-bit.
"""

from __future__ import annotations

import csv
import json
import os
from typing import List

import numpy as np

from .errors import ConfigError, ShapeMismatch
from .model import DrawSet, SpatialDataset


def _fmt(x) -> str:
    return repr(float(x))


def _parse(cell: str) -> float:
    return float("nan") if cell.strip() == "" else float(cell)


def dataset_full(data: SpatialDataset):
    """Recombine observed and missing parts in site order: ``(y_with_nan, X, sites)``."""
    sites = np.concatenate([data.obs_sites, data.miss_sites])
    y = np.concatenate([data.y_obs, np.full(data.n_miss, np.nan)])
    X = np.vstack([data.X_obs, data.X_miss])
    order = np.argsort(sites, kind="stable")
    return y[order], X[order], sites[order]


def write_dataset_csv(path, data: SpatialDataset) -> None:
    """Columns ``site, y, x1..xp``; ``y`` is empty at missing sites."""
    y, X, sites = dataset_full(data)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["site", "y"] + [f"x{j + 1}" for j in range(X.shape[1])])
        for s, yi, row in zip(sites, y, X):
            w.writerow([_fmt(s), "" if np.isnan(yi) else _fmt(yi)] + [_fmt(v) for v in row])


def read_dataset_csv(path) -> SpatialDataset:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ShapeMismatch(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    if header[:2] != ["site", "y"] or len(header) < 3:
        raise ShapeMismatch(f"{path}: expected header 'site,y,x1..xp', got {header}")
    body = [r for r in rows[1:] if r]
    if any(len(r) != len(header) for r in body):
        raise ShapeMismatch(f"{path}: ragged rows")
    arr = np.array([[_parse(c) for c in r] for r in body], dtype=float).reshape(len(body), len(header))
    return SpatialDataset.from_full(arr[:, 1], arr[:, 2:], arr[:, 0])


def write_draws_csv(path, draws: DrawSet) -> None:
    """One row per draw: ``draw, sigma2, tau2, gamma, delta_*, beta_*, ymiss_*``."""
    p = draws.delta.shape[1]
    nm = draws.y_miss.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["draw", "sigma2", "tau2", "gamma"]
                   + [f"delta_{j + 1}" for j in range(p)]
                   + [f"beta_{j + 1}" for j in range(p)]
                   + [f"ymiss_{j + 1}" for j in range(nm)])
        for b in range(len(draws)):
            gam = draws.gamma[b]
            w.writerow([b + 1, _fmt(draws.sigma2[b]), _fmt(draws.tau2[b]),
                        "" if gam is None else _fmt(gam)]
                       + [_fmt(v) for v in draws.delta[b]]
                       + [_fmt(v) for v in draws.beta[b]]
                       + [_fmt(v) for v in draws.y_miss[b]])


def read_draws_csv(path, g_path=None) -> DrawSet:
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    header = rows[0]
    idx = {name: i for i, name in enumerate(header)}
    cols = lambda prefix: [i for i, h in enumerate(header) if h.startswith(prefix)]
    body = rows[1:]
    num = lambda ix: np.array([[_parse(r[i]) for i in ix] for r in body], dtype=float).reshape(len(body), len(ix))
    gammas = [None if r[idx["gamma"]] == "" else float(r[idx["gamma"]]) for r in body]
    g = read_g_csv(g_path) if g_path else np.zeros((len(body), 0))
    return DrawSet(
        delta=num(cols("delta_")), beta=num(cols("beta_")), g=g,
        sigma2=num([idx["sigma2"]])[:, 0], tau2=num([idx["tau2"]])[:, 0],
        gamma=gammas, y_miss=num(cols("ymiss_")),
    )


def write_g_csv(path, g_draws: np.ndarray) -> None:
    G = np.atleast_2d(g_draws)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["draw"] + [f"g_{j + 1}" for j in range(G.shape[1])])
        for b, row in enumerate(G):
            w.writerow([b + 1] + [_fmt(v) for v in row])


def read_g_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    return np.array([[float(c) for c in r[1:]] for r in rows[1:]], dtype=float)


def _jsonable(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (np.floating, np.integer, np.bool_)):
        return v.item()
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    return v


def write_json(path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(_jsonable(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_json(path) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc


def truth_dict(truth) -> dict:
    return {
        "beta_true": truth.beta_true, "delta_true": truth.delta_true,
        "sigma2_true": truth.sigma2_true, "mask": truth.missing_mask.astype(int),
        "g_true": truth.g_true, "y_full": truth.y_full,
        "zeta": truth.zeta, "mu0": truth.mu0, "omega": truth.omega, "extras": truth.extras,
    }


def write_truth_json(path, truth) -> None:
    write_json(path, truth_dict(truth))


def read_truth_json(path):
    from .simulate import SimTruth

    d = read_json(path)
    return SimTruth(
        beta_true=np.asarray(d["beta_true"], float), delta_true=np.asarray(d["delta_true"], float),
        g_true=np.asarray(d["g_true"], float), sigma2_true=float(d["sigma2_true"]),
        y_full=np.asarray(d["y_full"], float), missing_mask=np.asarray(d["mask"], bool),
        zeta=float(d["zeta"]), mu0=float(d["mu0"]), omega=float(d["omega"]),
        extras=d.get("extras", {}),
    )


def write_report(out_dir, report, prefix: str = "report") -> List[str]:
    """Write ``<prefix>.csv``, ``<prefix>.txt`` and per-replicate ``<prefix>_replicates.csv``."""
    os.makedirs(out_dir, exist_ok=True)
    paths = [os.path.join(out_dir, f"{prefix}.csv"), os.path.join(out_dir, f"{prefix}.txt"),
             os.path.join(out_dir, f"{prefix}_replicates.csv")]
    with open(paths[0], "w") as fh:
        fh.write(report.to_csv())
    with open(paths[1], "w") as fh:
        fh.write(report.to_text())
    rows = report.replicate_rows()
    with open(paths[2], "w", newline="") as fh:
        if rows:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
            w.writeheader()
            w.writerows(rows)
    return paths


def read_report_csv(path) -> dict:
    """``{method: {column: value or None}}``."""
    with open(path, newline="") as fh:
        rd = csv.DictReader(fh)
        out = {}
        for row in rd:
            m = row.pop("method")
            out[m] = {k: (None if v == "" else float(v)) for k, v in row.items()}
    return out


def summarize_draws(draws: DrawSet, level: float = 0.95) -> dict:
    tail = (1.0 - level) / 2.0

    def block(a):
        a = np.asarray(a, float)
        if a.ndim == 1:
            a = a[:, None]
        if a.shape[1] == 0:
            return {"mean": [], "sd": [], "lower": [], "upper": []}
        sd = a.std(axis=0, ddof=1) if a.shape[0] > 1 else np.zeros(a.shape[1])
        return {"mean": a.mean(axis=0), "sd": sd,
                "lower": np.quantile(a, tail, axis=0), "upper": np.quantile(a, 1 - tail, axis=0)}

    return {"delta": block(draws.delta), "beta": block(draws.beta), "sigma2": block(draws.sigma2),
            "tau2": block(draws.tau2), "y_miss": block(draws.y_miss), "n_draws": len(draws),
            "level": level}


__all__ = [
    "dataset_full", "read_dataset_csv", "read_draws_csv", "read_g_csv", "read_json",
    "read_report_csv", "read_truth_json", "summarize_draws", "write_dataset_csv",
    "write_draws_csv", "write_g_csv", "write_json", "write_report", "write_truth_json",
]
