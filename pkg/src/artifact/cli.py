"""Command-line harness: generate, weave, route, broadcast, baseline, verify, sweep.

Every flag can also be set through an environment variable ARTIFACT_<FLAG>
(dashes become underscores), e.g. ARTIFACT_SEED=7 or ARTIFACT_N="1024 4096".
Explicit flags win over the environment.

Exit codes: 0 ok, 1 a verify criterion failed, 2 invalid configuration,
3 I/O or graph-format failure.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys
import tempfile
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import experiments as E
from . import graphs, metrics, protocols, weaver
from .errors import GraphFormatError, InfeasibleDegree, NonIntegerRatio, RoutingStuck, Unreached
from .rng import generator, trial_seed

ENV_PREFIX = "ARTIFACT_"


class ConfigError(ValueError):
    pass


# -- io -----------------------------------------------------------------

def dumps(rec) -> str:
    return json.dumps(rec, sort_keys=True, separators=(",", ":"), default=_json_default)


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.bool_):
        return bool(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not serialisable: {type(o)!r}")


def write_atomic(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-", text=True)
    with os.fdopen(fd, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


def write_records(path: Path, records):
    recs = sorted(records, key=lambda r: (r.get("n", 0), r.get("trial", 0), dumps(r)))
    write_atomic(path, "".join(dumps(r) + "\n" for r in recs))


def read_records(path: Path):
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


# -- argument parsing ----------------------------------------------------

def _weaver_flags(p):
    g = p.add_argument_group("weaver overrides")
    g.add_argument("--r", type=float, default=0.25)
    g.add_argument("--a", type=float)
    g.add_argument("--c-w", type=float)
    g.add_argument("--b", type=float)
    g.add_argument("--c-f", type=float)
    g.add_argument("--c-fb", type=float)
    g.add_argument("--final-rule", choices=("box", "log2sq"))
    g.add_argument("--c-min", type=float)
    g.add_argument("--c-delta", type=float)
    g.add_argument("--kappa", type=int)
    g.add_argument("--walk-len", type=int)
    g.add_argument("--mode", choices=weaver.MODES, default="fast")


def _common(p, n_many=False):
    if n_many:
        p.add_argument("--n", type=int, nargs="+", default=[1024])
    else:
        p.add_argument("--n", type=int, default=1024)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trials", type=int, default=1)
    p.add_argument("--out", default="out")


def _family(p):
    p.add_argument("--family", choices=("regular", "gnp", "rgg"), default="regular")
    p.add_argument("--d", type=int, default=8)
    p.add_argument("--p", type=float)
    p.add_argument("--rho", type=float)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="artifact", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("generate", help="write input graphs, one file per (n, trial)")
    _common(p, n_many=True)
    _family(p)

    p = sub.add_parser("weave", help="run the construction on input graph files")
    p.add_argument("--graph", nargs="*", default=None, help="input files (default: OUT/g0_*.txt)")
    p.add_argument("--out", default="out")
    p.add_argument("--seed", type=int, default=None, help="protocol seed (default: the graph's seed)")
    p.add_argument("--trace", action="store_true", help="rounds mode: write per-round traces")
    _weaver_flags(p)

    p = sub.add_parser("route", help="greedy routing over sampled pairs")
    p.add_argument("--graph", nargs="*", default=None, help="woven files (default: OUT/gstar_*.txt)")
    p.add_argument("--pairs", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="out")
    p.add_argument("--r", type=float, default=0.25)

    p = sub.add_parser("broadcast", help="broadcast from sampled sources")
    p.add_argument("--graph", nargs="*", default=None)
    p.add_argument("--protocol", choices=("compasscast", "geometric"), default="compasscast")
    p.add_argument("--sources", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="out")
    p.add_argument("--r", type=float, default=0.25)

    p = sub.add_parser("baseline", help="flooding, stretch and MST on input graphs")
    p.add_argument("--graph", nargs="*", default=None, help="input files (default: OUT/g0_*.txt)")
    p.add_argument("--sources", type=int, default=1)
    p.add_argument("--samples", type=int, default=E.THRESHOLDS["stretch_samples"])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="out")

    p = sub.add_parser("verify", help="run an acceptance suite and print thresholds vs measured")
    p.add_argument("suite", choices=tuple(E.SUITES) + ("all",))
    _common(p, n_many=True)
    p.add_argument("--d", type=int, default=8)
    p.add_argument("--pairs", type=int, default=None)
    _weaver_flags(p)

    p = sub.add_parser("sweep", help="full measurement sweep over sizes and trials")
    _common(p, n_many=True)
    p.add_argument("--d", type=int, default=8)
    p.add_argument("--pairs", type=int, default=None)
    _weaver_flags(p)
    return ap


def apply_env(ap: argparse.ArgumentParser, argv, environ):
    """Turn ARTIFACT_* variables into defaults for the chosen subcommand."""
    sub = next(a for a in ap._actions if isinstance(a, argparse._SubParsersAction))
    cmd = next((a for a in argv if a in sub.choices), None)
    if cmd is None:
        return
    sp = sub.choices[cmd]
    defaults = {}
    for act in sp._actions:
        if not act.option_strings:
            continue
        key = ENV_PREFIX + act.dest.upper()
        if key not in environ:
            continue
        raw = environ[key]
        conv = act.type or (lambda s: s)
        try:
            if act.nargs in ("+", "*"):
                val = [conv(x) for x in raw.split()]
            elif isinstance(act, argparse._StoreTrueAction):
                val = raw.lower() in ("1", "true", "yes")
            else:
                val = conv(raw)
        except ValueError as e:
            raise ConfigError(f"{key}={raw!r}: {e}") from None
        if act.choices is not None and val not in act.choices:
            raise ConfigError(f"{key}={raw!r} not in {list(act.choices)}")
        defaults[act.dest] = val
    sp.set_defaults(**defaults)


def weaver_config(args, seed: int) -> weaver.WeaverConfig:
    kw = {f.name: getattr(args, f.name) for f in fields(weaver.WeaverConfig)
          if f.name != "seed" and getattr(args, f.name, None) is not None}
    try:
        return weaver.WeaverConfig(seed=seed, **kw)
    except (ValueError, NonIntegerRatio) as e:
        raise ConfigError(str(e)) from None


# -- commands -------------------------------------------------------------

def _graph_name(prefix, n, t):
    return f"{prefix}_n{n}_t{t}.txt"


def _inputs(args, prefix):
    if args.graph:
        return [Path(p) for p in args.graph]
    found = sorted(Path(args.out).glob(f"{prefix}_*.txt"))
    if not found:
        raise FileNotFoundError(f"no {prefix}_*.txt files in {args.out}")
    return found


def _trial_of(path: Path) -> int:
    stem = path.stem
    for part in stem.split("_"):
        if part.startswith("t") and part[1:].isdigit():
            return int(part[1:])
    return 0


def cmd_generate(args):
    ns = args.n
    for n in ns:
        if n < 1:
            raise ConfigError("--n must be >= 1")
    if args.family == "regular":
        for n in ns:
            if args.d < 3 or args.d >= n or (n * args.d) % 2:
                raise ConfigError(str(InfeasibleDegree(f"no simple {args.d}-regular graph on {n} nodes")))
    elif args.family == "gnp" and (args.p is None or not 0 <= args.p <= 1):
        raise ConfigError("--p in [0, 1] is required for gnp")
    elif args.family == "rgg" and (args.rho is None or args.rho <= 0):
        raise ConfigError("--rho > 0 is required for rgg")
    out = Path(args.out)
    recs = []
    for n in ns:
        for t in range(args.trials):
            seed = trial_seed(args.seed, n, t)
            if args.family == "regular":
                g = graphs.gen_random_regular(n, args.d, seed)
            elif args.family == "gnp":
                g = graphs.gen_gnp(n, args.p, seed)
            else:
                g = graphs.gen_rgg(n, args.rho, seed)
            name = _graph_name("g0", n, t)
            write_atomic(out / name, g.to_text())
            deg = g.degree()
            recs.append({"kind": "generate", "n": n, "seed": seed, "trial": t, "file": name,
                         "config": {"family": args.family, "d": args.d, "p": args.p, "rho": args.rho,
                                    "master": args.seed},
                         "metrics": {"edges": g.num_edges, "max_degree": int(deg.max()) if n else 0,
                                     "min_degree": int(deg.min()) if n else 0,
                                     "connected": graphs.is_connected(g)}})
    write_records(out / "generate.jsonl", recs)
    return 0


def cmd_weave(args):
    files = _inputs(args, "g0")
    weaver_config(args, 0)  # validate before writing anything
    out = Path(args.out)
    recs = []
    for f in files:
        g0 = graphs.EmbeddedGraph.load(f)
        seed = g0.seed if args.seed is None else args.seed
        cfg = weaver_config(args, seed)
        t = _trial_of(f)
        traces = {} if args.trace and cfg.mode == "rounds" else None
        g_star, stats = weaver.run_weaver(g0, cfg, traces)
        for ph, text in sorted((traces or {}).items()):
            write_atomic(out / f"trace_n{g0.n}_t{t}_phase{ph}.txt", text)
        name = f.name.replace("g0_", "gstar_", 1) if f.name.startswith("g0_") else "gstar_" + f.name
        write_atomic(out / name, g_star.to_text())
        ell = weaver.effective_phases(g0.n, cfg)
        L = math.log2(g0.n) if g0.n > 1 else 1.0
        for s in stats:
            recs.append({"kind": "phase", "n": g0.n, "seed": seed, "trial": t, "file": name,
                         "config": cfg.to_dict(), "metrics": s.summary()})
        recs.append({"kind": "weave", "n": g0.n, "seed": seed, "trial": t, "file": name,
                     "config": cfg.to_dict(),
                     "metrics": {"ell": ell, "edges": g_star.num_edges,
                                 "max_degree": int(g_star.degree().max()),
                                 "degree_C": float(g_star.degree().max()) / L ** 2,
                                 "rounds": weaver.total_rounds(stats),
                                 "rounds_C": (weaver.total_rounds(stats) / L ** 3
                                              if weaver.total_rounds(stats) is not None else None)}})
    write_records(out / "weave.jsonl", recs)
    return 0


def cmd_route(args):
    if args.pairs < 0:
        raise ConfigError("--pairs must be >= 0")
    files = _inputs(args, "gstar")
    recs = []
    for f in files:
        g = graphs.EmbeddedGraph.load(f)
        t = _trial_of(f)
        rng = generator("pairs", "cli-route", args.seed, g.n, t)
        src = rng.integers(g.n, size=args.pairs)
        dst = rng.integers(g.n, size=args.pairs)
        for k, (a, b) in enumerate(zip(src.tolist(), dst.tolist())):
            rec = {"kind": "route", "n": g.n, "seed": args.seed, "trial": t, "pair": k, "file": f.name,
                   "config": {"seed": args.seed, "pairs": args.pairs}}
            try:
                p = protocols.greedy_route(g, a, b)
                rec["metrics"] = {**p.to_dict(), "stuck": False}
            except RoutingStuck as e:
                rec["metrics"] = {"src": a, "dst": b, "stuck": True, "hops": None, "cost": None,
                                  "stretch": None, "reached_at": e.path[-1] if e.path else None}
            recs.append(rec)
    write_records(Path(args.out) / "route.jsonl", recs)
    return 0


def cmd_broadcast(args):
    if args.sources < 1:
        raise ConfigError("--sources must be >= 1")
    files = _inputs(args, "gstar")
    recs = []
    for f in files:
        g = graphs.EmbeddedGraph.load(f)
        t = _trial_of(f)
        ell = g.max_phase() if g.n > 1 else 0
        rng = generator("source", "cli", args.seed, g.n, t)
        srcs = rng.choice(g.n, size=min(args.sources, g.n), replace=False) if g.n else []
        for s in (int(x) for x in srcs):
            if args.protocol == "geometric":
                st = protocols.geometric_flooding(g, s, ell, strict=False)
            else:
                st = protocols.compasscast(g, s, args.r, ell)
            m = st.to_dict()
            m["prop_norm"] = st.propagation_cost / E.norm_cost(g.n) if g.n > 1 else None
            recs.append({"kind": "broadcast", "protocol": args.protocol, "n": g.n, "seed": args.seed,
                         "trial": t, "file": f.name, "config": {"seed": args.seed, "r": args.r},
                         "metrics": m, "gaps": st.gaps})
    write_records(Path(args.out) / "broadcast.jsonl", recs)
    return 0


def cmd_baseline(args):
    files = _inputs(args, "g0")
    recs = []
    for f in files:
        g = graphs.EmbeddedGraph.load(f)
        t = _trial_of(f)
        rng = generator("source", "cli-baseline", args.seed, g.n, t)
        for s in rng.choice(g.n, size=min(args.sources, g.n), replace=False).tolist():
            st = protocols.flood_baseline(g, int(s), strict=False)
            m = st.to_dict()
            m["ratio"] = st.propagation_cost / g.num_edges if g.num_edges else None
            m["once_ratio"] = st.extra["edge_weight_total"] / g.num_edges if g.num_edges else None
            recs.append({"kind": "baseline-flood", "n": g.n, "seed": args.seed, "trial": t,
                         "file": f.name, "config": {"seed": args.seed}, "metrics": m})
        if g.n >= 2:
            bs = graphs.baseline_stretch(g, args.samples, args.seed)
            recs.append({"kind": "baseline-stretch", "n": g.n, "seed": args.seed, "trial": t,
                         "file": f.name, "config": {"seed": args.seed},
                         "metrics": {k: bs[k] for k in ("max", "mean", "median", "p99")}})
            recs.append({"kind": "baseline-mst", "n": g.n, "seed": args.seed, "trial": t,
                         "file": f.name, "config": {"seed": args.seed},
                         "metrics": {"mst": graphs.mst_weight(g.coords)}})
    write_records(Path(args.out) / "baseline.jsonl", recs)
    return 0


def _trial_records(args, parts):
    cfg = weaver_config(args, args.seed)
    for n in args.n:
        if n < 2 or args.d < 3 or args.d >= n or (n * args.d) % 2:
            raise ConfigError(f"no simple {args.d}-regular graph on {n} nodes")
    if args.trials < 1:
        raise ConfigError("--trials must be >= 1")
    recs = []
    for n in args.n:
        for t in range(args.trials):
            spec = E.TrialSpec(n, args.seed, t, args.d, cfg)
            recs.append(E.run_trial(spec, parts, args.pairs))
    return recs


def cmd_verify(args):
    names = list(E.SUITES) if args.suite == "all" else [args.suite]
    parts = tuple(sorted({E.SUITES[s][0] for s in names}))
    recs = _trial_records(args, parts)
    groups = E.by_n(recs)
    checks = []
    for s in names:
        for fn in E.SUITES[s][1]:
            if E.degenerate_filter(s, fn, groups):
                checks.extend(fn(groups))
    if not checks:
        print("no applicable checks")
        return 0
    for c in checks:
        print(c.line())
    ok = all(c.passed for c in checks)
    print(f"{'PASS' if ok else 'FAIL'}  {sum(c.passed for c in checks)}/{len(checks)} criteria")
    return 0 if ok else 1


def cmd_sweep(args):
    parts = ("weaver", "routing", "broadcast", "baselines")
    recs = _trial_records(args, parts)
    out = Path(args.out)
    write_records(out / "records.jsonl", recs)
    report = metrics.summarize_run(recs)
    write_atomic(out / "report.json", report.to_json())
    write_atomic(out / "table.jsonl", "".join(dumps(r) + "\n" for r in report.flat_rows()))
    return 0


COMMANDS = {"generate": cmd_generate, "weave": cmd_weave, "route": cmd_route, "broadcast": cmd_broadcast,
            "baseline": cmd_baseline, "verify": cmd_verify, "sweep": cmd_sweep}


def main(argv=None, environ=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    environ = os.environ if environ is None else environ
    ap = build_parser()
    try:
        apply_env(ap, argv, environ)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if e.code is not None else 0
    try:
        return COMMANDS[args.cmd](args)
    except (ConfigError, InfeasibleDegree, NonIntegerRatio) as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 2
    except (OSError, GraphFormatError) as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 3
    except Unreached as e:  # pragma: no cover - commands run non-strict
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
