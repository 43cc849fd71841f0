"""The ``lab`` command: run one configured experiment and write CSVs plus a manifest.

    lab <experiment> --config FILE [--seed S] [--threads K] [--out DIR] [--echo]

Exit codes: 0 success, 1 config error, 2 numerical failure, 3 invariant
violation.
"""

import argparse
import csv
import json
import math
import platform
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from . import fourier, orbits, randrep, spherical
from .config import EXPERIMENTS, ConfigError, parse_text, validate_config
from .errors import InvalidGroup, InvalidModel, InvariantViolation, LabError, NumericalError
from .geometry import ConstantCurvature, FuchsianGroup, Perturbed, default_group

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_INVARIANT = 0, 1, 2, 3


def build_model(spec):
    """Model from the [model] table; invalid groups or bumps are config errors."""
    try:
        if spec["group_file"]:
            group = FuchsianGroup.from_file(spec["group_file"])
        else:
            group = default_group()
        if spec["kind"] == "constant":
            return ConstantCurvature(spec["kappa"], group)
        return Perturbed(group, spec["epsilon"], spec["bump_radius"])
    except (InvalidGroup, InvalidModel, OSError) as exc:
        raise ConfigError("model", str(exc)) from None


def derived_seeds(seed, count):
    """Independent 63-bit seeds derived from the experiment seed."""
    state = np.random.SeedSequence(seed).generate_state(count, dtype=np.uint64)
    return [int(s) >> 1 for s in state]


def _pmap(fn, items, threads):
    if threads <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(threads) as ex:
        return list(ex.map(fn, items))


def _write_rows(path, header, rows, config_hash):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header + ["config_hash"])
        for r in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in r] + [config_hash])


# ---------------------------------------------------------------------------
# experiments; each returns (files written, summary dict)


def _closed_window(cfg, model, p):
    """Periodic orbits whose hyperbolic class length is near [T, T + 1]."""
    scale = model.kappa if model.isotropic else 1.0
    lo = (p["T"] - p["length_margin"]) * scale
    hi = (p["T"] + 1.0 + p["length_margin"]) * scale
    classes = orbits.enumerate_geodesics(model.group, hi, cap=p["class_cap"])
    sub = [c for c in classes if c.length >= lo]
    return orbits.close_all(model, sub, tol=p["closure_tol"])


def _check_orbits(model, orbs):
    for o in orbs:
        if o.poincare is None:
            continue
        if model.isotropic:
            ref = 4.0 * math.sinh(0.5 * o.unstable_exponent) ** 2
            det = abs(np.linalg.det(np.eye(2) - o.poincare))
            if abs(det / ref - 1.0) > 1e-6:
                raise InvariantViolation(f"det identity fails on {o.word}")
        elif abs(o.poincare_det - 1.0) > 1e-8:
            raise InvariantViolation(f"det P != 1 on {o.word}")


def run_pressure(cfg, model, out):
    p = cfg.params
    orbs = _closed_window(cfg, model, p)
    _check_orbits(model, orbs)
    curve = orbits.pressure_curve(orbs, p["qs"], p["T"], p["n_sub"], p["weighted"],
                                  p["window_correction"])
    files = ["pressure.csv"]
    orbits.write_pressure_csv(out / "pressure.csv", curve, cfg.hash)
    if p["write_orbits"]:
        orbits.write_orbits_csv(out / "orbits.csv", orbs, cfg.hash)
        files.append("orbits.csv")
    summary = {"beta_hat": curve.beta.tolist(), "stderr": curve.stderr.tolist(),
               "gamma0_hat": curve.gamma0_hat, "n_orbits": curve.orbit_count}
    return files, summary, curve


APPENDIX_HEADER = ["quantity", "q", "value", "stderr", "reference"]


def run_appendix_a(cfg, model, out):
    files, summary, curve = run_pressure(cfg, model, out)
    rep = orbits.appendix_a_report(curve)
    rows = [("second_difference", q, v, s, 0.0) for q, v, s in rep.convexity]
    rows += [("strict_margin", q, v, s, 0.0) for q, v, s in rep.strict_margins]
    rows += [("derivative", q, v, float("nan"), ref) for q, v, ref in rep.derivatives]
    _write_rows(out / "appendixA.csv", APPENDIX_HEADER, rows, cfg.hash)
    summary.update(convexity_margin=rep.convexity_margin,
                   convexity_stderr=rep.convexity_stderr,
                   strict_margins=[list(m) for m in rep.strict_margins])
    return files + ["appendixA.csv"], summary


def run_spherical(cfg, model, out):
    p = cfg.params
    grid = spherical.GridSpec(h=p["grid_h"], n_directions=p["n_directions"])
    seeds = derived_seeds(cfg.seed, len(p["ts"]))
    rows = []
    for t, seed in zip(p["ts"], seeds):
        est = spherical.sm_norm_power(model, t, R=p["R"] or None, grid=grid,
                                      tol=p["power_tol"], max_iter=p["max_iter"])
        if est.norm > 1.02:
            raise InvariantViolation(f"norm estimate {est.norm:.6f} at t={t} exceeds 1")
        exact = spherical.exact_norm_hyperbolic(2, model.kappa * t) if model.isotropic else None
        lo = se = None
        if p["lower_bound"] and t > 1.0:
            lb = spherical.sm_norm_lower(model, 0j, t, p["mc_samples"], seed=seed)
            lo, se = lb.value, lb.stderr
        rows.append({"t": t, "norm_power": est.norm, "norm_exact": exact, "lower_bound": lo,
                     "lower_stderr": se, "R": est.R, "grid_h": est.h})
    spherical.write_spherical_csv(out / "spherical.csv", rows, cfg.hash)
    ts = [r["t"] for r in rows]
    summary = {"norms": [r["norm_power"] for r in rows]}
    if len(ts) >= 2:
        summary["log_slope"] = spherical.log_slope(ts, summary["norms"])
    return ["spherical.csv"], summary


def run_filtered(cfg, model, out):
    p = cfg.params
    if not model.isotropic:
        raise ConfigError("model.kind", "the filtered experiment needs constant curvature")
    rows = []
    for t in p["ts"]:
        r = fourier.filtered_norm(model, fourier.default_profile, p["h"], t, s_max=p["s_max"],
                                  n_s=p["n_s"], C=p["C"])
        rows.append({"h": p["h"], "t": t, "norm_hat": r.norm, "bound_value": r.bound_value,
                     "ratio": r.norm / r.bound_value, "N_modes": r.N_modes,
                     "grid_h": 2.0 * math.pi / r.fft_size})
    fourier.write_filtered_csv(out / "filtered.csv", rows, cfg.hash)
    ratios = [r["ratio"] for r in rows]
    return ["filtered.csv"], {"ratios": ratios, "spread": max(ratios) / min(ratios)}


def run_strongconv(cfg, model, out):
    p = cfg.params
    free = p["group"] == "free"
    rank = p["rank"] if free else 2 * p["genus"]
    w = randrep.GroupAlgebraElement.adjacency(rank)
    if free:
        ball = randrep.regular_norm_ball(w, "free", R=p["ball_R"], rank=rank)
    else:
        ball = randrep.regular_norm_ball(w, "surface", R=p["ball_R"], group=model.group)
    seeds = derived_seeds(cfg.seed, p["trials"])

    def one(seed):
        return randrep.strongconv_trials(p["n"], [seed], w, p["word"], ball.value, p["ball_R"],
                                         eps=p["eps"], kind=p["group"], rank=rank,
                                         genus=p["genus"])[0]

    trials = _pmap(one, seeds, cfg.threads)
    randrep.write_strongconv_csv(out / "strongconv.csv", trials, cfg.hash)
    acc = float(np.mean([t.accepted for t in trials]))
    return ["strongconv.csv"], {"regular_norm_ball": ball.value, "increment": ball.increment,
                                "acceptance_fraction": acc,
                                "max_new_top": float(max(t.new_top for t in trials))}


def run_schreier(cfg, model, out):
    p = cfg.params
    seeds = derived_seeds(cfg.seed, len(p["ns"]))

    def one(args):
        n, seed = args
        hom = randrep.sample_hom_free(n, p["rank"], seed)
        return n, seed, randrep.schreier_diagnostics(hom, p["max_radius"])

    rows = _pmap(one, list(zip(p["ns"], seeds)), cfg.threads)
    randrep.write_schreier_csv(out / "schreier.csv", rows, cfg.hash)
    return ["schreier.csv"], {"diameter_over_log_n": [r.diameter / math.log(n) for n, _, r in rows],
                              "treelike_R2": [r.fractions.get(2, 0.0) for _, _, r in rows]}


GROMOV_HEADER = ["check", "param", "value", "reference"]


def run_gromov(cfg, model, out):
    p = cfg.params
    rng = np.random.default_rng(cfg.seed)
    rows = []
    worst_col = 0.0
    for _ in range(10):
        x, z = spherical._random_points(rng, 2, 0.5 * p["max_dist"])
        d = float(spherical._distances(model, x, z))
        y = spherical._geodesic_point(model, x, z, rng.random() * d)
        worst_col = max(worst_col, spherical.gromov_delta(model, x, y, z))
    rows.append(("collinear_delta", 0.0, worst_col, 0.0))
    worst = 0.0
    for _ in range(p["n_triangles"]):
        worst = max(worst, spherical.gromov_delta(model, *spherical._random_points(
            rng, 3, p["max_dist"])))
    # insize of an ideal triangle of curvature -1; curvature <= -k^2 scales it by 1/k
    ref = math.log(3.0) / model.kappa_min
    rows.append(("max_delta", p["max_dist"], worst, ref))
    x0, v = 0.1j, 0.3
    rates = []
    for r in p["divergence_r"]:
        wdir = spherical.direction_pair_at_separation(model, x0, v, r, p["eta"])
        fit = spherical.geodesic_divergence(model, x0, v, wdir, r, p["eta"])
        rates.append(fit.rate)
        rows.append(("divergence_rate", r, fit.rate, model.kappa_min))
    _write_rows(out / "gromov.csv", GROMOV_HEADER, rows, cfg.hash)
    return ["gromov.csv"], {"collinear_delta": worst_col, "max_delta": worst,
                            "divergence_rates": rates}


CONSISTENCY_HEADER = ["q", "orbit_window", "annulus", "poincare", "max_gap", "within_tolerance"]


def run_consistency(cfg, model, out):
    p = cfg.params
    qs = p["qs"]
    pp = dict(length_margin=0.3, closure_tol=1e-9, class_cap=2_000_000, T=p["T"])
    curve = orbits.pressure_curve(_closed_window(cfg, model, pp), qs, p["T"])
    step = 0.05
    s_grid = np.arange(step, p["radius"] + 1e-9, step)
    prof = spherical._radial_profiles(model, p["n_dir"], s_grid, cfg.seed)
    weights = {}
    rows = []
    ok = True
    for i, q in enumerate(qs):
        a = spherical.annulus_pressure(model, q, p["radius"], _profiles=prof).value
        if q not in weights:
            weights[q] = spherical._orbit_weights(model, model.group, p["radius"], q)
        e = spherical.poincare_critical_exponent(model, model.group, q, p["radius"],
                                                 _weights=weights[q]).value
        vals = [float(curve.beta[i]), a, e]
        gap = max(vals) - min(vals)
        ok &= gap <= p["tolerance"]
        rows.append((q, *vals, gap, int(gap <= p["tolerance"])))
    _write_rows(out / "consistency.csv", CONSISTENCY_HEADER, rows, cfg.hash)
    if p["enforce"] and not ok:
        raise InvariantViolation("estimators disagree beyond the configured tolerance")
    return ["consistency.csv"], {"max_gap": max(r[4] for r in rows)}


RUNNERS = {
    "pressure": lambda c, m, o: run_pressure(c, m, o)[:2],
    "appendixA": run_appendix_a,
    "spherical": run_spherical,
    "filtered": run_filtered,
    "strongconv": run_strongconv,
    "schreier": run_schreier,
    "gromov": run_gromov,
    "consistency": run_consistency,
}


def _versions():
    import numba
    import scipy

    return {"anosovlab": __version__, "python": platform.python_version(),
            "numpy": np.__version__, "scipy": scipy.__version__, "numba": numba.__version__}


def run_experiment(cfg):
    """Run a validated config; returns the manifest dict (also written to disk)."""
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    model = build_model(cfg.model)
    files, summary = RUNNERS[cfg.experiment](cfg, model, out)
    manifest = {
        "experiment": cfg.experiment,
        "config_hash": cfg.hash,
        "seed": cfg.seed,
        "threads": cfg.threads,
        "versions": _versions(),
        "wall_time_s": time.perf_counter() - t0,
        "files": files,
        "summary": summary,
        "config": cfg.as_dict(),
    }
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True, default=float)
        fh.write("\n")
    return manifest


def _parser():
    ap = argparse.ArgumentParser(prog="lab", description=__doc__.splitlines()[0])
    ap.add_argument("experiment", choices=EXPERIMENTS)
    ap.add_argument("--config", required=True, help="TOML or JSON config file")
    ap.add_argument("--seed", type=int, help="overrides the config seed and LAB_SEED")
    ap.add_argument("--threads", type=int, help="worker threads; 1 is bit-reproducible")
    ap.add_argument("--out", help="output directory")
    ap.add_argument("--echo", action="store_true",
                    help="print the defaulted config and exit")
    return ap


def main(argv=None):
    args = _parser().parse_args(argv)
    try:
        try:
            text = Path(args.config).read_text()
        except OSError as exc:
            raise ConfigError(args.config, f"cannot read: {exc.strerror}") from None
        data = parse_text(text)
        for key, val in (("seed", args.seed), ("threads", args.threads), ("output_dir", args.out)):
            if val is not None:
                data[key] = val
        cfg = validate_config(data, args.experiment)
        if args.echo:
            sys.stdout.write(cfg.echo())
            return EXIT_OK
        manifest = run_experiment(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InvariantViolation as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except (NumericalError, LabError, ArithmeticError) as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(json.dumps({"config_hash": manifest["config_hash"], "files": manifest["files"],
                      "wall_time_s": round(manifest["wall_time_s"], 3)}))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
