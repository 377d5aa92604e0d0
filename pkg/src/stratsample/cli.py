"""Command-line front end: run chains, run the BD oracle, analyze traces.

Subcommands: sample, bd, analyze (fractions | reweight | volume), check,
bench.  Outputs are a CSV trace plus a JSON summary; both are deterministic
for a fixed seed.  Output paths default into $STRATSAMPLE_OUTDIR (or the
working directory).
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time

import numpy as np

from . import analysis, backend, bd
from .models import (
    BUILTIN_MODELS,
    ellipsoid_interior_volume,
    make_model,
    triangle_probability,
)
from .projection import NewtonSettings
from .proposals import SamplerParams
from .sampler import run_chain, run_chains
from .traces import ChainTrace


def _outdir():
    return os.environ.get("STRATSAMPLE_OUTDIR", ".")


def _outpath(arg, default_name):
    return arg if arg else os.path.join(_outdir(), default_name)


class _Cleanup:
    """Remove partial output files when a command fails midway."""

    def __init__(self):
        self.paths = []

    def track(self, path):
        self.paths.append(path)
        return path

    def discard_all(self):
        for p in self.paths:
            try:
                os.remove(p)
            except OSError:
                pass


def _model_from_args(args):
    kw = {}
    if args.model in ("trimer", "polymer6", "polymer-wall"):
        kw["kappa"] = args.kappa
    if args.model == "polymer6" and args.kappa_aa is not None:
        kw.update(kappa_aa=args.kappa_aa, kappa_ab=args.kappa_ab,
                  kappa_bb=args.kappa_bb)
    if args.model == "polymer-wall":
        kw.update(n_spheres=args.n_spheres, k_bend=args.k_bend)
    if args.model in ("ellipsoid", "ellipsoid-interior"):
        kw["semiaxes"] = [float(v) for v in args.semiaxes.split(",")]
        if args.model == "ellipsoid":
            if args.c_weights:
                kw["c_weights"] = [float(v) for v in args.c_weights.split(",")]
                kw["c_exponent"] = None
            else:
                kw["c_exponent"] = args.c_exp
    return make_model(args.model, **kw)


def _params_from_args(args, model):
    base = model.default_params
    newton = NewtonSettings(tol=args.newton_tol, max_iter=args.newton_max_iter)
    # When lambda_gain is not given but the quantities it defaults from are
    # overridden, fall back to the sigma_bdy * lambda_lose relation instead
    # of the model's tuned value.
    if args.lambda_gain is not None:
        lam_gain = args.lambda_gain
    elif args.lambda_lose is not None or args.sigma_bdy is not None:
        lam_gain = None
    else:
        lam_gain = base.lambda_gain
    return SamplerParams(
        sigma=args.sigma if args.sigma is not None else base.sigma,
        sigma_bdy=args.sigma_bdy if args.sigma_bdy is not None else base.sigma_bdy,
        sigma_tan=args.sigma_tan if args.sigma_tan is not None else base.sigma_tan,
        lambda_lose=(args.lambda_lose if args.lambda_lose is not None
                     else base.lambda_lose),
        lambda_gain=lam_gain,
        newton=newton,
    )


def _add_model_args(p):
    p.add_argument("--model", required=True, choices=sorted(BUILTIN_MODELS))
    p.add_argument("--kappa", type=float, default=2.0,
                   help="sticky parameter (trimer, polymer6, polymer-wall)")
    p.add_argument("--kappa-aa", type=float, default=None)
    p.add_argument("--kappa-ab", type=float, default=None)
    p.add_argument("--kappa-bb", type=float, default=None)
    p.add_argument("--n-spheres", type=int, default=10)
    p.add_argument("--k-bend", type=float, default=0.0)
    p.add_argument("--semiaxes", default="2,2,2,2,3,3,3,1,1,1")
    p.add_argument("--c-exp", type=float, default=0.94)
    p.add_argument("--c-weights", default=None)


def _add_sampler_args(p):
    p.add_argument("--steps", type=int, required=True)
    p.add_argument("--thin", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--chains", type=int, default=1)
    p.add_argument("--backend", default="auto",
                   choices=["auto", "python", "compiled"])
    p.add_argument("--sigma", type=float, default=None)
    p.add_argument("--sigma-bdy", type=float, default=None)
    p.add_argument("--sigma-tan", type=float, default=None)
    p.add_argument("--lambda-lose", type=float, default=None)
    p.add_argument("--lambda-gain", type=float, default=None)
    p.add_argument("--newton-tol", type=float, default=1e-10)
    p.add_argument("--newton-max-iter", type=int, default=50)
    p.add_argument("--out-trace", default=None)
    p.add_argument("--out-summary", default=None)


def cmd_sample(args):
    cleanup = _Cleanup()
    try:
        model = _model_from_args(args)
        params = _params_from_args(args, model)
        trace_path = _outpath(args.out_trace, f"{args.model}.trace.csv")
        summary_path = _outpath(args.out_summary, f"{args.model}.summary.json")
        if args.chains == 1:
            traces = [run_chain(model, args.steps, thin=args.thin, params=params,
                                seed=args.seed, backend=args.backend)]
        else:
            traces = run_chains(model, args.steps, args.chains, thin=args.thin,
                                params=params, seed=args.seed,
                                backend=args.backend)
        summaries = []
        for i, tr in enumerate(traces):
            path = trace_path if args.chains == 1 else \
                trace_path.replace(".csv", f".chain{i}.csv")
            tr.to_csv(cleanup.track(path))
            s = tr.summary_dict()
            s["trace_path"] = path
            summaries.append(s)
        doc = summaries[0] if args.chains == 1 else {"chains": summaries}
        with open(cleanup.track(summary_path), "w") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)
            fh.write("\n")
        print(summary_path)
        return 0
    except Exception as exc:
        cleanup.discard_all()
        print(f"error: {exc}", file=sys.stderr)
        return 1


def cmd_bd(args):
    cleanup = _Cleanup()
    try:
        if args.e_depth is not None:
            E = args.e_depth
        else:
            E = bd.morse_depth_for_kappa(args.kappa, rho=args.rho)
        params = bd.PotentialParams(E=E, rho=args.rho)
        trace_path = _outpath(args.out_trace, "bd.trace.csv")
        summary_path = _outpath(args.out_summary, "bd.summary.json")
        tr = bd.run_bd(params, total_time=args.time, dt=args.dt,
                       record_every=args.record_dt, seed=args.seed,
                       burn_in=args.burn_in, backend=args.backend)
        tr.to_csv(cleanup.track(trace_path))
        s = tr.summary_dict()
        s["trace_path"] = trace_path
        s["bond_probabilities"] = {
            str(k): [v.value, v.std_error]
            for k, v in analysis.bond_count_probabilities(tr).items()}
        with open(cleanup.track(summary_path), "w") as fh:
            json.dump(s, fh, indent=2, sort_keys=True)
            fh.write("\n")
        print(summary_path)
        return 0
    except Exception as exc:
        cleanup.discard_all()
        print(f"error: {exc}", file=sys.stderr)
        return 1


def _parse_grid(spec):
    """lo:hi:n (log-spaced) -> array of values."""
    lo, hi, n = spec.split(":")
    return np.exp(np.linspace(math.log(float(lo)), math.log(float(hi)), int(n)))


def _parse_anchor(spec):
    """'level:K:VOL' or 'id:ID:VOL' -> (manifold id string, volume)."""
    kind, ident, vol = spec.split(":")
    if kind == "level":
        return str(int(ident) - 1), float(vol)
    if kind == "id":
        return ident, float(vol)
    raise ValueError(f"bad anchor {spec!r} (want level:K:VOL or id:ID:VOL)")


def _parse_target(spec):
    kind, ident = spec.split(":")
    return str(int(ident) - 1) if kind == "level" else ident


def _estimate_json(e):
    return {"value": e.value, "std_error": e.std_error, "n_bins": e.n_bins}


def cmd_analyze(args):
    cleanup = _Cleanup()
    try:
        trace = ChainTrace.from_csv(args.trace)
        out = {"trace": args.trace, "mode": args.what, "n_records": len(trace)}
        if args.what == "fractions":
            out["fractions"] = trace.record_fractions()
            errs = analysis.manifold_fraction_errors(trace, args.bins)
            out["fraction_errors"] = {k: _estimate_json(v) for k, v in errs.items()}
            if args.histogram:
                edges = None
                hists = {}
                col = trace.observable(args.histogram)
                man = np.asarray(trace.manifold, dtype=object)
                lo = args.hist_range[0] if args.hist_range else float(col.min())
                hi = args.hist_range[1] if args.hist_range else float(col.max())
                for mid in sorted(set(trace.manifold)):
                    h, edges = np.histogram(col[man == mid], bins=args.hist_bins,
                                            range=(lo, hi))
                    hists[mid] = h.tolist()
                out["histogram"] = {"observable": args.histogram,
                                    "edges": edges.tolist(), "counts": hists}
        elif args.what == "reweight":
            out.update(_analyze_reweight(args, trace))
        elif args.what == "volume":
            cw = _weights_fn(args.weights)
            anchor_id, anchor_vol = _parse_anchor(args.anchor)
            target_id = _parse_target(args.target)
            est = analysis.volume_estimate(trace, cw, target_id, anchor_id,
                                           anchor_vol, n_bins=args.bins)
            out["volume"] = _estimate_json(est)
            out["anchor"] = {"id": anchor_id, "volume": anchor_vol}
            out["target"] = target_id
        doc = json.dumps(out, indent=2, sort_keys=True)
        if args.out:
            with open(cleanup.track(args.out), "w") as fh:
                fh.write(doc + "\n")
        print(doc)
        return 0
    except Exception as exc:
        cleanup.discard_all()
        print(f"error: {exc}", file=sys.stderr)
        return 1


def _weights_fn(spec):
    """Per-manifold c weights: 'one' or 'exp:RATE' keyed by level = id+1."""
    if spec == "one":
        return lambda mid: 1.0
    kind, rate = spec.split(":")
    if kind != "exp":
        raise ValueError(f"bad weights {spec!r} (want one or exp:RATE)")
    r = float(rate)
    return lambda mid: math.exp(r * (int(mid) + 1))


def _analyze_reweight(args, trace):
    out = {}
    k0 = args.kappa0
    if k0 is None:
        raise ValueError("--kappa0 (the sampled sticky parameter) is required")
    targets = []
    if args.kappa_grid:
        targets = list(_parse_grid(args.kappa_grid))
    elif args.kappa is not None:
        targets = [args.kappa]
    if "n_aa" in trace.observable_names:
        if args.kappa_aa_grid and args.kappa_ab_grid:
            aa = _parse_grid(args.kappa_aa_grid)
            ab = _parse_grid(args.kappa_ab_grid)
            kbb = args.kappa_bb if args.kappa_bb is not None else k0
            grid = []
            for ka in aa:
                row = []
                for kb in ab:
                    w = analysis.polymer6_weights(trace, k0, kappa_aa=ka,
                                                  kappa_ab=kb, kappa_bb=kbb)
                    y = analysis.cluster_yields(trace, w)
                    row.append({"kappa_aa": ka, "kappa_ab": kb,
                                "p_rigid": _estimate_json(y["p_rigid"]),
                                "octahedron": y["octahedron"],
                                "polytetrahedron": y["polytetrahedron"]})
                grid.append(row)
            out["yield_map"] = {"kappa_bb": kbb, "grid": grid}
        curves = {}
        for kt in targets:
            w = analysis.polymer6_weights(trace, k0, kappa=kt)
            pm = analysis.bond_count_probabilities(trace, w, args.bins)
            curves[f"{kt:.6g}"] = {str(m): _estimate_json(e)
                                   for m, e in pm.items()}
        if curves:
            out["bond_probabilities"] = curves
        if not targets and not out:
            pm = analysis.bond_count_probabilities(trace, None, args.bins)
            out["bond_probabilities"] = {f"{k0:.6g}": {
                str(m): _estimate_json(e) for m, e in pm.items()}}
    elif "frac_wall" in trace.observable_names:
        curves = {}
        for kt in (targets or [k0]):
            w = analysis.wall_weights(trace, k0, kt)
            est = analysis.reweight_series(trace, w, ("frac_wall", "r_end"),
                                           args.bins)
            curves[f"{kt:.6g}"] = {name: _estimate_json(e)
                                   for name, e in est.items()}
        out["wall_statistics"] = curves
    else:
        raise ValueError("trace has no reweightable observables "
                         "(need polymer6 or polymer-wall columns)")
    return out


def cmd_check(args):
    """Gradient, tangent-basis, neighbour-symmetry, and flat-case self tests."""
    from . import checks

    failures = checks.run_all(verbose=True)
    return 1 if failures else 0


def cmd_bench(args):
    from . import bench

    model = _model_from_args(args)
    res = bench.compare_backends(model, n_steps=args.steps, thin=args.thin,
                                 seed=args.seed)
    for name, stats in res.items():
        print(f"{name:>9}: {stats['seconds']:8.3f} s  "
              f"{stats['microseconds_per_step']:9.2f} us/step")
    if "compiled" in res and "python" in res:
        print(f"{'speedup':>9}: {res['python']['seconds'] / res['compiled']['seconds']:8.1f} x")
    return 0


def build_parser():
    p = argparse.ArgumentParser(
        prog="stratsample",
        description="Monte Carlo sampling on constraint stratifications")
    sub = p.add_subparsers(dest="command", required=True)

    ps = sub.add_parser("sample", help="run a sampling chain on a built-in model")
    _add_model_args(ps)
    _add_sampler_args(ps)
    ps.set_defaults(fn=cmd_sample)

    pb = sub.add_parser("bd", help="Brownian-dynamics oracle (6-sphere polymer)")
    pb.add_argument("--kappa", type=float, default=2.885,
                    help="target sticky parameter; E is calibrated to match")
    pb.add_argument("--e-depth", type=float, default=None,
                    help="Morse well depth (overrides --kappa)")
    pb.add_argument("--rho", type=float, default=60.0)
    pb.add_argument("--time", type=float, default=100.0)
    pb.add_argument("--dt", type=float, default=1e-6)
    pb.add_argument("--record-dt", type=float, default=0.05)
    pb.add_argument("--burn-in", type=float, default=0.1)
    pb.add_argument("--seed", type=int, default=0)
    pb.add_argument("--backend", default="auto",
                    choices=["auto", "python", "compiled"])
    pb.add_argument("--out-trace", default=None)
    pb.add_argument("--out-summary", default=None)
    pb.set_defaults(fn=cmd_bd)

    pa = sub.add_parser("analyze", help="statistics from a trace file")
    pa.add_argument("what", choices=["fractions", "reweight", "volume"])
    pa.add_argument("--trace", required=True)
    pa.add_argument("--bins", type=int, default=8)
    pa.add_argument("--out", default=None)
    pa.add_argument("--histogram", default=None,
                    help="observable to histogram per manifold (fractions mode)")
    pa.add_argument("--hist-bins", type=int, default=40)
    pa.add_argument("--hist-range", type=float, nargs=2, default=None)
    pa.add_argument("--kappa0", type=float, default=None,
                    help="sticky parameter the trace was sampled at")
    pa.add_argument("--kappa", type=float, default=None)
    pa.add_argument("--kappa-grid", default=None, help="lo:hi:n (log spaced)")
    pa.add_argument("--kappa-aa-grid", default=None)
    pa.add_argument("--kappa-ab-grid", default=None)
    pa.add_argument("--kappa-bb", type=float, default=None)
    pa.add_argument("--weights", default="one", help="one | exp:RATE")
    pa.add_argument("--anchor", default=None, help="level:K:VOL | id:ID:VOL")
    pa.add_argument("--target", default="level:1")
    pa.set_defaults(fn=cmd_analyze)

    pc = sub.add_parser("check", help="run the invariant/gradient self tests")
    pc.set_defaults(fn=cmd_check)

    pn = sub.add_parser("bench", help="compare python and compiled backends")
    _add_model_args(pn)
    pn.add_argument("--steps", type=int, default=20000)
    pn.add_argument("--thin", type=int, default=10)
    pn.add_argument("--seed", type=int, default=0)
    pn.set_defaults(fn=cmd_bench)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
