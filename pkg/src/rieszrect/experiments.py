"""Named experiments: each returns a result record and can write its artefacts.

Artefacts are a CSV table, a JSON report, gnuplot-style two-column plot
files and a manifest with the config hash, the package version and the
tolerances used.  Floats are written with 17 significant digits so a fixed
seed reproduces the files byte for byte.
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
import os
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import __version__
from .corona import StoppingParams, corona_report
from .fourier import comparability_report, exact_band_product, spectral_profile, triple_integral
from .generators import gen_cantor_four_corner, gen_perturbed_graph
from .geometry import alpha_number, beta_number, dyadic_lattice
from .graphs import GraphMeasureSpec, make_graph_function, sample_graph_measure
from .kernels import band_gram, direct_sum, oscillation_profile, sup_oscillation
from .measure import Ball, build_measure

EXPERIMENTS = ("graph-comparability", "fourier-check", "pv-contrast", "corona-pipeline", "band-decay",
               "beta-alpha-tables")


@dataclass
class ExperimentConfig:
    name: str
    params: dict = field(default_factory=dict)
    output: str | None = None
    seed: int = 0
    input: str | None = None

    def __post_init__(self):
        if self.name not in EXPERIMENTS:
            raise ValueError(f"unknown experiment {self.name!r}; choose from {', '.join(EXPERIMENTS)}")

    def digest(self) -> str:
        doc = json.dumps({"name": self.name, "params": self.params, "seed": self.seed, "input": self.input},
                         sort_keys=True, default=str)
        return hashlib.sha256(doc.encode()).hexdigest()


# --- infinite-graph completion (n = 1, d = 2) ----------------------------

def flat_exterior_field(x, lo: float, hi: float, eps: float) -> np.ndarray:
    """Smoothed transform at x of arclength measure on the axis outside [lo, hi].

    The tangential part is the symmetric limit of the two half-line
    integrals, which is how the transform of the whole line is defined.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    u0, x1 = x[:, 0], x[:, 1]
    c2 = x1 ** 2 + eps ** 2
    c = np.sqrt(c2)
    tang = 0.5 * np.log(((u0 - hi) ** 2 + c2) / ((u0 - lo) ** 2 + c2))
    trans = x1 / c * (np.pi - np.arctan((u0 - lo) / c) + np.arctan((u0 - hi) / c))
    return np.stack([tang, trans], axis=1)


def completed_transform(mu, A, eps: float) -> np.ndarray:
    """Smoothed transform on the atoms of the graph extended flat beyond the grid box."""
    v = direct_sum(mu, mu.points, eps, "smooth")
    if A.n != 1 or A.d != 2:
        return v
    return v + flat_exterior_field(mu.points, float(A.lo[0]), float(A.hi[0]), eps)


# --- graph comparability family ---------------------------------------------

SINGLE = [{"freq": [2.0], "amp": [1.0]}]
THREE = [{"freq": [1.0], "amp": [1.0]}, {"freq": [2.0], "amp": [0.5], "phase": 0.3},
         {"freq": [4.0], "amp": [0.25], "phase": 1.1}]


def scaled_graph(modes, lip: float, h: float, margin: float = 1.0, window: float = 0.25):
    """Windowed graph over support [0, 1] in the box [-margin, 1 + margin] with ||grad A||_inf = lip."""
    kw = dict(n=1, d=2, box=(-margin, 1 + margin), h=h, support=(0.0, 1.0), window=window)
    unit = make_graph_function(modes, **kw)
    s = lip / unit.lip_inf()
    scaled = [dict(m, amp=[a * s for a in m["amp"]]) for m in modes]
    return make_graph_function(scaled, **kw)


def _rnorms(mu, A, eps):
    v = completed_transform(mu, A, eps)
    w = mu.weights
    full = math.sqrt(float(np.sum(w * np.sum(v * v, axis=1))))
    perp = math.sqrt(float(np.sum(w * v[:, 1] ** 2)))
    return full, perp


def graph_comparability(lips=(0.02, 0.05, 0.1), h: float = 2 ** -12, eps_factor: float = 4.0,
                            density_amp: float = 0.5) -> dict:
    """||R^perp mu||_2 / ||grad A||_2 over single- and three-mode graphs, the doubling test and
    the upper-bound constant for ||R mu||_2 / (||grad A||_2 + ||g - 1||_2)."""
    eps = eps_factor * h
    rows = []
    for fam, modes in (("single", SINGLE), ("three", THREE)):
        for lip in lips:
            for dens in (False, True):
                A = scaled_graph(modes, lip, h)
                spec = None
                if dens:
                    # density 1 + c grad-A-sized bump, so ||g - 1||_2 is comparable to ||grad A||_2
                    amp = density_amp * lip
                    dfun = lambda p, a=amp: 1 + a * np.sin(2 * np.pi * p[:, 0]) * (np.abs(p[:, 0] - 0.5) < 0.5)
                    spec = GraphMeasureSpec(density=dfun)
                mu = sample_graph_measure(A, spec)
                full, perp = _rnorms(mu, A, eps)
                row = {"family": fam, "lip": lip, "density": dens, "grad_l2": A.grad_l2(),
                       "g_minus_1_l2": mu.meta["g_minus_1_l2"], "r_full": full, "r_perp": perp,
                       "ratio_perp": perp / A.grad_l2(),
                       "upper_ratio": full / (A.grad_l2() + mu.meta["g_minus_1_l2"])}
                if not dens:
                    A2 = scaled_graph(modes, 2 * lip, h)
                    mu2 = sample_graph_measure(A2)
                    row["r_perp_doubled"] = _rnorms(mu2, A2, eps)[1]
                    row["doubling"] = row["r_perp_doubled"] / perp
                rows.append(row)
    plain = [r for r in rows if not r["density"]]
    ratios = np.array([r["ratio_perp"] for r in plain])
    return {"eps": eps, "rows": rows,
            "summary": {"c": float(ratios.min()), "C": float(ratios.max()), "spread": float(ratios.max() / ratios.min()),
                        "doubling_max_dev": float(max(abs(r["doubling"] - 2) / 2 for r in plain)),
                        "upper_constant": float(max(r["upper_ratio"] for r in rows))}}


# --- fourier ------------------------------------------------------------------

def fourier_check(a: float = 0.01, freq: float = 1.0, h: float = 2 ** -12, js=range(4, 9), ks=range(2, 7),
                  direct: bool = True) -> dict:
    A = make_graph_function([{"freq": [freq], "amp": [a]}], n=1, d=2, box=(0.0, 1.0), h=h)
    pairs = [(j, k) for j in js for k in ks if j >= k]
    rep = comparability_report(A, pairs)
    if direct:
        for row in rep["rows"]:
            est = triple_integral(A, row["j"], row["k"])
            row["direct"], row["direct_err"] = est.value, est.error
            row["rel_dev"] = abs(est.value - row["lhs"]) / abs(row["lhs"]) if row["lhs"] else 0.0
        rep["summary"]["max_rel_dev"] = max(r["rel_dev"] for r in rep["rows"])
        rep["summary"]["min_lhs_lower"] = min(r["direct"] + 2 * r["direct_err"] for r in rep["rows"])
    return rep


# --- PV contrast ----------------------------------------------------------------

def pv_contrast(generation: int = 6, lower: float = 4.0 ** -5, upper: float = 4.0 ** -1, slope: float = 0.05,
                h: float | None = None) -> dict:
    """Median sup-oscillation on dyadic windows for Cantor and a graph of equal mass and extent."""
    cantor = gen_cantor_four_corner(generation)
    h = h or 2.0 ** -12
    A = make_graph_function([{"freq": [1.0], "amp": [slope / (2 * np.pi)]}], n=1, d=2, box=(0.0, 1.0), h=h,
                            offset=[0.5])
    graph = sample_graph_measure(A)
    graph = graph.with_weights(graph.weights / graph.mass)
    k_lo, k_hi = int(round(math.log2(lower))), int(round(math.log2(upper)))
    eps = 2.0 ** np.arange(k_lo, k_hi + 1)
    uppers = eps[::-1][::2]
    out = {"eps": eps.tolist(), "uppers": uppers.tolist()}
    for name, mu in (("cantor", cantor), ("graph", graph)):
        prof = oscillation_profile(mu, mu.points, eps)
        out[name] = [float(np.median(sup_oscillation(prof, upper=u, lower=lower))) for u in uppers]
    out["contrast"] = out["cantor"][0] / out["graph"][0]
    g = out["graph"]
    out["graph_monotone"] = bool(all(g[i + 1] <= 1.1 * g[i] for i in range(len(g) - 1)))
    return out


# --- band decay ---------------------------------------------------------------

def band_decay(slope: float = 0.05, freq: float = 2.0, jlo: int = 0, jhi: int = 8, h: float = 2 ** -14,
               margin: float = 0.25) -> dict:
    """Gram matrix of the orthogonal band fields on a slope-`slope` single-mode graph."""
    A = scaled_graph([{"freq": [freq], "amp": [1.0]}], slope, h, margin=margin, window=0.125)
    mu = sample_graph_measure(A)
    G = band_gram(mu, jlo, jhi)
    diag = np.diag(G)
    j0 = int(np.argmax(diag)) + jlo
    decay = {}
    for sep in range(0, jhi - jlo + 1):
        vals = [abs(G[j - jlo, j + sep - jlo]) / diag[j - jlo]
                for j in range(jlo, jhi - sep + 1)]
        decay[sep] = float(max(vals))
    pair = []
    for k in (j0 - 8, j0 + 8):
        if jlo <= k <= jhi:
            pair.append(abs(G[j0 - jlo, k - jlo]) / G[j0 - jlo, j0 - jlo])
    return {"gram": G.tolist(), "j0": j0, "decay": decay,
            "ratio8": float(max(pair)) if pair else float("nan"), "range": [jlo, jhi]}


# --- corona pipeline --------------------------------------------------------

def noisy_line(slope: float = 0.05, half_length: float = 20.0, count: int = 10000, noise: float = 1e-3,
               seed: int = 0):
    h = 2 * half_length / count
    A = make_graph_function([], n=1, d=2, box=(-half_length, half_length), h=h, linear=[[slope]])
    return gen_perturbed_graph(A, noise=noise, seed=seed)


def flat_disc(radius: float = 9.0, h: float = 0.125):
    m = int(round(2 * radius / h))
    ax = -radius + h * (np.arange(m) + 0.5)
    X, Y = np.meshgrid(ax, ax, indexing="ij")
    keep = X ** 2 + Y ** 2 <= radius ** 2
    pts = np.c_[X[keep], Y[keep], np.zeros(keep.sum())]
    return build_measure(pts, np.full(pts.shape[0], h * h), 2, floor=2 * h)


def corona_pipeline(kind: str = "noisy-line", delta0: float = 0.9, alpha: float = 0.3, eps: float = 0.025,
                    t_min: float = 0.125, seed: int = 0, reference: str = "coordinate", **kw) -> dict:
    from .geometry import AffinePlane
    if kind == "noisy-line":
        mu = noisy_line(seed=seed, **kw)
    elif kind == "flat-disc":
        mu = flat_disc(**kw)
    else:
        raise ValueError(f"unknown corona input {kind!r}")
    x0 = mu.points[np.argmin(np.linalg.norm(mu.points, axis=1))]
    B0 = Ball(x0, 1.0)
    F = mu.ball_indices(x0, 10.0)
    D0 = AffinePlane.coordinate(mu.n, mu.d) if reference == "coordinate" else None
    params = StoppingParams(delta0=delta0, eps=eps, alpha=alpha, B0=B0, F=F, t_min=t_min, D0=D0)
    state = corona_report(mu, F, B0, params, seed=seed)
    return {"report": state.report, "state": state}


# --- beta / alpha tables -------------------------------------------------------

def beta_alpha_tables(levels=(2, 3), with_alpha: bool = True, amp: float = 0.02, freq: float = 2.0,
                      h: float = 2 ** -9, alpha_level: int = 2, refinements: int = 1) -> dict:
    A = make_graph_function([{"freq": [freq], "amp": [amp]}], n=1, d=2, box=(0.0, 1.0), h=h)
    mu = sample_graph_measure(A)
    lat = dyadic_lattice(mu, levels)
    rows = []
    for Q in lat:
        if Q.atoms.size == 0:
            continue
        b1 = beta_number(mu, Q, 1).value
        b2 = beta_number(mu, Q, 2).value
        cs = b2 * math.sqrt(Q.mass3 / Q.side ** mu.n)
        row = {"level": Q.level, "index": list(map(int, Q.index)), "side": Q.side, "mass3": Q.mass3,
               "beta1": b1, "beta2": b2, "cs_bound": cs, "cs_ok": bool(b1 <= cs * (1 + 1e-12))}
        if with_alpha and Q.level == alpha_level:
            res = alpha_number(mu, Q, refinements=refinements)
            row["alpha"] = res.alpha
            row["alpha_gap"] = res.gap
            row["alpha_history"] = [v for _, v in res.history]
            row["alpha_monotone"] = bool(all(b <= a + 1e-15 for a, b in zip(row["alpha_history"], row["alpha_history"][1:])))
        rows.append(row)
    return {"rows": rows, "all_cs_ok": bool(all(r["cs_ok"] for r in rows))}


# --- orchestration ----------------------------------------------------------

RUNNERS = {
    "graph-comparability": graph_comparability,
    "fourier-check": fourier_check,
    "pv-contrast": pv_contrast,
    "corona-pipeline": corona_pipeline,
    "band-decay": band_decay,
    "beta-alpha-tables": beta_alpha_tables,
}

TOLERANCES = {
    "graph-comparability": {"spread": 10.0, "doubling": 0.1},
    "fourier-check": {"spread": 64.0, "rel_dev": 0.05},
    "pv-contrast": {"contrast": 5.0, "monotone_slack": 0.1},
    "corona-pipeline": {"lip_over_alpha": 5.0, "coverage": 0.9, "F1": 0.05, "F3": 0.05},
    "band-decay": {"ratio8": 0.1},
    "beta-alpha-tables": {"cs_rel": 1e-12},
}


def acceptance(name: str, result: dict) -> bool:
    tol = TOLERANCES[name]
    if name == "graph-comparability":
        s = result["summary"]
        return s["spread"] <= tol["spread"] and s["doubling_max_dev"] <= tol["doubling"]
    if name == "fourier-check":
        s = result["summary"]
        ok = s["spread"] <= tol["spread"]
        if "max_rel_dev" in s:
            ok = ok and s["max_rel_dev"] <= tol["rel_dev"] and s["min_lhs_lower"] >= 0
        return ok
    if name == "pv-contrast":
        return result["contrast"] >= tol["contrast"] and result["graph_monotone"]
    if name == "corona-pipeline":
        r = result["report"]
        return (r["lip_over_alpha"] <= tol["lip_over_alpha"] and r["coverage"] >= tol["coverage"]
                and r["fractions"]["F1"] <= tol["F1"] and r["counts"]["F2"] == 0 and r["fractions"]["F3"] <= tol["F3"])
    if name == "band-decay":
        return result["ratio8"] <= tol["ratio8"]
    return result["all_cs_ok"]


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    return str(v)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items() if k != "state"}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    return obj


def write_csv(path, rows):
    keys = []
    for r in rows:
        for k in r:
            if k not in keys:
                keys.append(k)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(keys)
        for r in rows:
            w.writerow([_fmt(r.get(k, "")) for k in keys])


def write_plot(path, xs, ys):
    with open(path, "w") as fh:
        for x, y in zip(xs, ys):
            fh.write(f"{float(x):.17g} {float(y):.17g}\n")


def _plots(name, result):
    if name == "pv-contrast":
        return {"cantor": (result["uppers"], result["cantor"]), "graph": (result["uppers"], result["graph"])}
    if name == "band-decay":
        d = result["decay"]
        return {"decay": (list(d.keys()), list(d.values()))}
    if name == "graph-comparability":
        rows = [r for r in result["rows"] if not r["density"]]
        return {"ratio": ([r["grad_l2"] for r in rows], [r["r_perp"] for r in rows])}
    if name == "fourier-check":
        rows = result["rows"]
        return {"ratio": ([r["j"] - r["k"] for r in rows], [r["ratio"] for r in rows])}
    if name == "beta-alpha-tables":
        rows = result["rows"]
        return {"beta": ([r["beta2"] for r in rows], [r["beta1"] for r in rows])}
    if name == "corona-pipeline":
        st = result["state"]
        return {"graph": (st.graph.A.grid[:, 0], st.graph.A.values[:, 0]), "density": (st.graph.A.grid[:, 0], st.g)}
    return {}


def _table(name, result):
    if name in ("graph-comparability", "fourier-check", "beta-alpha-tables"):
        return result["rows"]
    if name == "pv-contrast":
        return [{"upper": u, "cantor": c, "graph": g} for u, c, g in zip(result["uppers"], result["cantor"], result["graph"])]
    if name == "band-decay":
        return [{"separation": k, "ratio": v} for k, v in result["decay"].items()]
    if name == "corona-pipeline":
        st = result["state"]
        return [{"atom": int(a), "label": int(l), "h": float(hv)}
                for a, l, hv in zip(st.partition.atoms, st.partition.labels, st.region.h)]
    return []


def run_experiment(config: ExperimentConfig | dict) -> dict:
    """Run one experiment; write artefacts when ``config.output`` is set.  Returns the result with a pass flag."""
    if isinstance(config, dict):
        config = ExperimentConfig(**config)
    params = dict(config.params)
    if config.name == "corona-pipeline":
        params.setdefault("seed", config.seed)
    t0 = time.perf_counter()
    try:
        result = RUNNERS[config.name](**params)
    except TypeError as exc:
        raise ValueError(f"{config.name}: bad parameters: {exc}") from exc
    except Exception as exc:
        raise RuntimeError(f"{config.name} failed: {exc}") from exc
    elapsed = time.perf_counter() - t0
    result["pass"] = acceptance(config.name, result)
    if config.output:
        os.makedirs(config.output, exist_ok=True)
        stem = os.path.join(config.output, config.name)
        write_csv(stem + ".csv", [_jsonable(r) for r in _table(config.name, result)])
        with open(stem + ".json", "w") as fh:
            json.dump(_jsonable(result), fh, indent=1, sort_keys=True)
        for key, (xs, ys) in _plots(config.name, result).items():
            write_plot(f"{stem}.{key}.dat", xs, ys)
        manifest = {"experiment": config.name, "config": _jsonable(asdict(config)), "config_hash": config.digest(),
                    "version": __version__, "tolerances": TOLERANCES[config.name], "pass": result["pass"],
                    "seconds": elapsed}
        with open(stem + ".manifest.json", "w") as fh:
            json.dump(manifest, fh, indent=1, sort_keys=True)
    return result
