"""Command-line entry point.

Exit codes: 0 on success, 2 when an acceptance check fails, 1 on error.
``--config`` names a JSON object whose keys override the subcommand's
options (dashes or underscores); for ``experiment`` it holds the
experiment's parameters.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys

import numpy as np

from .measure import Ball, load_point_csv, save_point_csv

EXIT_OK, EXIT_ERROR, EXIT_FAIL = 0, 1, 2


def _floats(text):
    return [float(v) for v in text.split(",") if v.strip()]


def _ints(text):
    return [int(v) for v in text.split(",") if v.strip()]


def _out(path):
    if path in (None, "-"):
        return sys.stdout, False
    return open(path, "w", newline=""), True


def _rows(path, header, rows):
    fh, close = _out(path)
    try:
        fh.write(",".join(header) + "\n")
        for r in rows:
            fh.write(",".join(v if isinstance(v, str) else f"{float(v):.17g}" for v in r) + "\n")
    finally:
        if close:
            fh.close()


def _load(args):
    mu = load_point_csv(args.input, args.n)
    if getattr(args, "floor", None):
        from .measure import build_measure
        mu = build_measure(mu.points, mu.weights, mu.n, floor=args.floor)
    return mu


# --- subcommands -------------------------------------------------------------

def cmd_transform(args):
    from .kernels import transform_field
    from .measure import build_measure
    mu = _load(args)
    targets = mu if args.targets is None else load_point_csv(args.targets, args.n)
    method = "treecode" if args.method in ("tree", "treecode") else "naive"
    res = transform_field(mu, targets, args.eps, method=method, variant=args.variant)
    mags = np.linalg.norm(res.vectors, axis=1)
    header = ["target"] + [f"v{i + 1}" for i in range(mu.d)] + ["norm"]
    _rows(args.output, header, ([str(i)] + list(v) + [m] for i, (v, m) in enumerate(zip(res.vectors, mags))))
    return EXIT_OK


def cmd_beta(args):
    from .geometry import beta_number, dyadic_lattice
    mu = _load(args)
    lat = dyadic_lattice(mu, _ints(args.levels))
    p = math.inf if args.p == "inf" else int(args.p)
    rows = []
    for Q in lat:
        if Q.atoms3.size == 0:
            continue
        rows.append([str(Q.level), " ".join(map(str, Q.index)), Q.side, Q.mass3, beta_number(mu, Q, p).value])
    _rows(args.output, ["level", "index", "side", "mass3", f"beta{args.p}"], rows)
    return EXIT_OK


def cmd_alpha(args):
    from .geometry import alpha_number, dyadic_lattice
    mu = _load(args)
    lat = dyadic_lattice(mu, [args.level])
    rows = []
    for Q in lat:
        if Q.atoms.size == 0:
            continue
        res = alpha_number(mu, Q, refinements=args.refinements)
        rows.append([str(Q.level), " ".join(map(str, Q.index)), Q.side, res.alpha, res.gap, res.c, res.status])
    _rows(args.output, ["level", "index", "side", "alpha", "gap", "c", "status"], rows)
    return EXIT_OK


def cmd_graph_gen(args):
    from .generators import gen_cantor_four_corner, gen_perturbed_graph
    from .graphs import GraphMeasureSpec, make_graph_function
    if args.cantor:
        mu = gen_cantor_four_corner(args.cantor)
    else:
        modes = json.loads(args.modes) if isinstance(args.modes, str) else (args.modes or [])
        lo, hi = _floats(args.box)
        A = make_graph_function(modes, n=args.n, d=args.d, box=(lo, hi), h=args.h, window=args.window,
                                max_lip=args.max_lip)
        mu = gen_perturbed_graph(A, GraphMeasureSpec(mu0=args.mu0), noise=args.noise, seed=args.seed)
    if args.output in (None, "-"):
        sys.stdout.write(",".join([f"x{i + 1}" for i in range(mu.d)] + ["w"]) + "\n")
        for p, w in zip(mu.points, mu.weights):
            sys.stdout.write(",".join(f"{v:.17g}" for v in list(p) + [w]) + "\n")
    else:
        save_point_csv(args.output, mu)
    return EXIT_OK


def cmd_fourier_check(args):
    from .experiments import run_experiment
    params = {"a": args.a, "freq": args.freq, "h": 2.0 ** -args.log2h, "direct": not args.no_direct}
    res = run_experiment({"name": "fourier-check", "params": params, "output": args.output, "seed": args.seed})
    s = res["summary"]
    print(json.dumps({k: float(v) for k, v in s.items()}, indent=1))
    return EXIT_OK if res["pass"] else EXIT_FAIL


def cmd_corona(args):
    from .corona import StoppingParams, corona_report, LABELS
    from .geometry import AffinePlane
    mu = _load(args)
    ball = _floats(args.ball)
    if len(ball) != mu.d + 1:
        raise ValueError(f"--ball needs {mu.d} centre coordinates and a radius")
    B0 = Ball(np.array(ball[:-1]), ball[-1])
    F = mu.ball_indices(B0.center, 10 * B0.radius)
    D0 = AffinePlane.coordinate(mu.n, mu.d) if args.reference == "coordinate" else None
    params = StoppingParams(delta0=args.delta0, eps=args.eps, alpha=args.alpha, B0=B0, F=F, t_min=args.t_min, D0=D0)
    st = corona_report(mu, F, B0, params, seed=args.seed)
    out = args.output or "."
    os.makedirs(out, exist_ok=True)
    names = {v: k for k, v in LABELS.items()}
    dvals = st.graph.d_F[np.searchsorted(F, st.region.atoms)]
    _rows(os.path.join(out, "labels.csv"), ["atom", "label", "h", "d"],
          ([str(a), names[int(l)], hv, dv] for a, l, hv, dv in
           zip(st.partition.atoms, st.partition.labels, st.region.h, dvals)))
    A = st.graph.A
    header = [f"p{i + 1}" for i in range(mu.n)] + [f"A{i + 1}" for i in range(A.m)] + ["D", "g"]
    _rows(os.path.join(out, "graph.csv"), header,
          (list(p) + list(a) + [D, g] for p, a, D, g in zip(A.grid, A.values, st.graph.grid_D, st.g)))
    from .experiments import _jsonable
    with open(os.path.join(out, "report.json"), "w") as fh:
        json.dump(_jsonable(st.report), fh, indent=1, sort_keys=True)
    print(json.dumps({"coverage": st.report["coverage"], "pass": st.report["pass"]}))
    return EXIT_OK if st.report["pass"] else EXIT_FAIL


def cmd_pv_oscillation(args):
    from .kernels import oscillation_profile, sup_oscillation
    mu = _load(args)
    k = max(2, int(round(args.per_octave * math.log2(args.upper / args.lower))) + 1)
    grid = np.geomspace(args.lower, args.upper, k)
    prof = oscillation_profile(mu, mu.points, grid)
    osc = sup_oscillation(prof)
    _rows(args.output, ["atom", "sup_oscillation"], ([str(i), v] for i, v in enumerate(osc)))
    return EXIT_OK


def cmd_experiment(args):
    from .experiments import run_experiment
    res = run_experiment({"name": args.name, "params": args.params or {}, "output": args.output or ".",
                          "seed": args.seed})
    print(json.dumps({"experiment": args.name, "pass": res["pass"]}))
    return EXIT_OK if res["pass"] else EXIT_FAIL


# --- parser -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rieszrect", description=__doc__.splitlines()[0])
    parser.add_argument("--config", help="JSON file of option overrides")
    parser.add_argument("--seed", type=int, default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    def cloud(p):
        p.add_argument("--input", required=True, help="CSV with header x1,...,xd,w")
        p.add_argument("--n", type=int, default=1, help="intrinsic dimension")
        p.add_argument("--floor", type=float, default=None, help="truncation floor of the sample")
        p.add_argument("--output", default=None)

    p = sub.add_parser("transform")
    cloud(p)
    p.add_argument("--variant", choices=["trunc", "smooth", "cutoff"], default="smooth")
    p.add_argument("--eps", type=float, required=True)
    p.add_argument("--method", choices=["naive", "tree", "treecode"], default="naive")
    p.add_argument("--targets", default=None)
    p.set_defaults(func=cmd_transform)

    p = sub.add_parser("beta")
    cloud(p)
    p.add_argument("--levels", default="2,3")
    p.add_argument("--p", choices=["1", "2", "inf"], default="2")
    p.set_defaults(func=cmd_beta)

    p = sub.add_parser("alpha")
    cloud(p)
    p.add_argument("--level", type=int, default=2)
    p.add_argument("--refinements", type=int, default=0)
    p.set_defaults(func=cmd_alpha)

    p = sub.add_parser("graph-gen")
    p.add_argument("--modes", default="[]", help='JSON list like [{"freq":[2],"amp":[0.01]}]')
    p.add_argument("--n", type=int, default=1)
    p.add_argument("--d", type=int, default=2)
    p.add_argument("--box", default="0,1")
    p.add_argument("--h", type=float, default=2 ** -8)
    p.add_argument("--window", type=float, default=0.0)
    p.add_argument("--max-lip", type=float, default=None)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--mu0", action="store_true")
    p.add_argument("--cantor", type=int, default=0, help="emit the four-corner Cantor set of this generation")
    p.add_argument("--output", default=None)
    p.set_defaults(func=cmd_graph_gen)

    p = sub.add_parser("fourier-check")
    p.add_argument("--a", type=float, default=0.01)
    p.add_argument("--freq", type=float, default=1.0)
    p.add_argument("--log2h", type=int, default=12)
    p.add_argument("--no-direct", action="store_true")
    p.add_argument("--output", default=None)
    p.set_defaults(func=cmd_fourier_check)

    p = sub.add_parser("corona")
    cloud(p)
    p.add_argument("--ball", required=True, help="c1,...,cd,r")
    p.add_argument("--delta0", type=float, default=0.25)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--eps", type=float, default=1e-4)
    p.add_argument("--t-min", type=float, default=None)
    p.add_argument("--reference", choices=["fit", "coordinate"], default="fit")
    p.set_defaults(func=cmd_corona)

    p = sub.add_parser("pv-oscillation")
    cloud(p)
    p.add_argument("--lower", type=float, required=True)
    p.add_argument("--upper", type=float, required=True)
    p.add_argument("--per-octave", type=int, default=1)
    p.set_defaults(func=cmd_pv_oscillation)

    p = sub.add_parser("experiment")
    p.add_argument("name")
    p.add_argument("--output", default=None)
    p.set_defaults(func=cmd_experiment, params=None)
    return parser


def _apply_config(args, path):
    with open(path) as fh:
        doc = json.load(fh)
    if not isinstance(doc, dict):
        raise ValueError("config must be a JSON object")
    if args.command == "experiment":
        args.params = doc.get("params", doc)
        return
    for key, val in doc.items():
        attr = key.replace("-", "_")
        if not hasattr(args, attr):
            raise ValueError(f"unknown config key {key!r} for {args.command}")
        setattr(args, attr, val)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.config:
            _apply_config(args, args.config)
        np.random.seed(args.seed)
        return args.func(args)
    except Exception as exc:  # report and signal failure to the shell
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
