"""Quantiles, scaling fits and order-independent aggregation of run records."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateFit, EmptyInput, MixedConfig


def nearest_rank(values, q: float) -> float:
    """Nearest-rank quantile: the ceil(q*N)-th smallest value (q=0 gives the min)."""
    x = np.sort(np.asarray(values, dtype=np.float64).ravel())
    if x.size == 0:
        raise EmptyInput("quantile of empty input")
    if not 0.0 <= q <= 1.0:
        raise ValueError("q must lie in [0, 1]")
    rank = max(1, int(math.ceil(q * x.size - 1e-12)))
    return float(x[rank - 1])


def quantiles(values) -> dict:
    return {
        "min": nearest_rank(values, 0.0),
        "median": nearest_rank(values, 0.5),
        "p99": nearest_rank(values, 0.99),
        "max": nearest_rank(values, 1.0),
    }


def stretch_stats(paths) -> dict:
    """Stretch (cost / straight-line distance) and hop quantiles over routed paths.

    Paths need `cost`, `hops` and `direct` (straight-line distance) attributes;
    zero-distance pairs are dropped.
    """
    kept = [p for p in paths if p.direct > 0]
    if not kept:
        raise EmptyInput("no paths with positive endpoint distance")
    stretch = np.array([p.cost / p.direct for p in kept])
    hops = np.array([p.hops for p in kept], dtype=np.float64)
    return {"count": len(kept), "stretch": quantiles(stretch), "hops": quantiles(hops)}


def fit_power_law(xs):
    """Least-squares fit of log2(value) = beta*log2(n) + log2(c); returns (beta, c)."""
    pts = [(float(n), float(v)) for n, v in xs]
    if len(pts) < 3:
        raise DegenerateFit(f"need at least 3 points, got {len(pts)}")
    if len({n for n, _ in pts}) < 2:
        raise DegenerateFit("need at least 2 distinct sizes")
    if any(n <= 0 or v <= 0 for n, v in pts):
        raise DegenerateFit("sizes and values must be positive")
    lx = np.log2([n for n, _ in pts])
    ly = np.log2([v for _, v in pts])
    mx, my = lx.mean(), ly.mean()
    beta = float(((lx - mx) * (ly - my)).sum() / ((lx - mx) ** 2).sum())
    return beta, float(2.0 ** (my - beta * mx))


def fit_scaling(xs) -> float:
    """Exponent beta with value ~ n^beta."""
    return fit_power_law(xs)[0]


# -- aggregation --------------------------------------------------------

ADDITIVE = ("count", "missing", "sum", "min", "max")


def _canon(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


@dataclass
class MetricsReport:
    config: dict
    groups: dict = field(default_factory=dict)
    scaling: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"config": self.config, "groups": self.groups, "scaling": self.scaling}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1) + "\n"

    def flat_rows(self):
        """One row per (kind, n, metric) for external plotting."""
        rows = []
        for gkey in sorted(self.groups):
            g = self.groups[gkey]
            for m in sorted(g["metrics"]):
                rows.append({"group": gkey, "kind": g["kind"], "n": g["n"], "metric": m,
                             **g["metrics"][m]})
        return rows


def _group_key(rec) -> str:
    return f"{rec.get('kind', 'run')}|{rec.get('protocol', '')}|{rec.get('n')}"


def _numeric_items(metrics: dict, prefix=""):
    for k in sorted(metrics):
        v = metrics[k]
        name = f"{prefix}{k}"
        if isinstance(v, dict):
            yield from _numeric_items(v, name + ".")
        elif v is None or isinstance(v, bool) or isinstance(v, (int, float)):
            yield name, v


def summarize_run(records) -> MetricsReport:
    """Aggregate raw records deterministically (input order does not matter)."""
    records = sorted(records, key=_canon)
    if not records:
        raise EmptyInput("no records")
    cfg = records[0].get("config", {})
    for r in records[1:]:
        if _canon(r.get("config", {})) != _canon(cfg):
            raise MixedConfig("records were produced under different configurations")
    groups = {}
    for r in records:
        key = _group_key(r)
        g = groups.setdefault(key, {"kind": r.get("kind", "run"), "protocol": r.get("protocol", ""),
                                    "n": r.get("n"), "sources": [], "metrics": {}, "_vals": {}})
        g["sources"].append([r.get("n"), r.get("seed"), r.get("trial")])
        for name, v in _numeric_items(r.get("metrics", {})):
            g["_vals"].setdefault(name, []).append(v)
    for g in groups.values():
        vals = g.pop("_vals")
        g["sources"].sort(key=_canon)
        for name, vs in vals.items():
            present = [float(v) for v in vs if v is not None]
            # booleans aggregate as 0/1 counts
            ent = {"count": len(present), "missing": len(vs) - len(present)}
            if present:
                arr = np.asarray(present)
                ent.update(sum=float(arr.sum()), min=float(arr.min()), max=float(arr.max()),
                           mean=float(arr.mean()), median=nearest_rank(arr, 0.5),
                           p99=nearest_rank(arr, 0.99))
            else:
                ent.update(sum=None, min=None, max=None, mean=None, median=None, p99=None)
            g["metrics"][name] = ent
    report = MetricsReport(config=cfg, groups=dict(sorted(groups.items())))
    report.scaling = _scaling(report.groups)
    return report


def _scaling(groups) -> dict:
    by = {}
    for g in groups.values():
        for name, ent in g["metrics"].items():
            if ent["mean"] is not None and ent["mean"] > 0 and g["n"]:
                by.setdefault(f"{g['kind']}|{g['protocol']}|{name}", []).append((g["n"], ent["mean"]))
    out = {}
    for key in sorted(by):
        pts = sorted(by[key])
        try:
            beta, c = fit_power_law(pts)
        except DegenerateFit:
            continue
        out[key] = {"beta": beta, "const": c, "points": [list(p) for p in pts]}
    return out


def merge_reports(a: MetricsReport, b: MetricsReport) -> dict:
    """Combine the additive fields (count, missing, sum, min, max) of two reports."""
    if _canon(a.config) != _canon(b.config):
        raise MixedConfig("cannot merge reports with different configurations")
    out = {}
    for key in sorted(set(a.groups) | set(b.groups)):
        ga, gb = a.groups.get(key), b.groups.get(key)
        if ga is None or gb is None:
            src = ga or gb
            out[key] = {m: {f: e[f] for f in ADDITIVE} for m, e in src["metrics"].items()}
            continue
        ms = {}
        for m in sorted(set(ga["metrics"]) | set(gb["metrics"])):
            ea, eb = ga["metrics"].get(m), gb["metrics"].get(m)
            if ea is None or eb is None:
                e = ea or eb
                ms[m] = {f: e[f] for f in ADDITIVE}
                continue
            ms[m] = {
                "count": ea["count"] + eb["count"],
                "missing": ea["missing"] + eb["missing"],
                "sum": _opt(lambda x, y: x + y, ea["sum"], eb["sum"]),
                "min": _opt(min, ea["min"], eb["min"]),
                "max": _opt(max, ea["max"], eb["max"]),
            }
        out[key] = ms
    return out


def additive_view(report: MetricsReport) -> dict:
    return {k: {m: {f: e[f] for f in ADDITIVE} for m, e in g["metrics"].items()}
            for k, g in report.groups.items()}


def _opt(fn, x, y):
    if x is None:
        return y
    if y is None:
        return x
    return fn(x, y)
