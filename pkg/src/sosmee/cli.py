"""Batch command-line front end.

Every JSON artifact carries a ``meta`` block (package version, command, seed,
relaxation order, solver residuals, wall time and the fully resolved
options). Option values come from command-line flags first, then from the
``--config`` JSON file (flat, or with one section per command), then from the
built-in defaults. ``SOSMEE_EPS`` sets the default solver tolerance.

Exit codes: 0 success, 2 unreadable input or bad arguments, 3 infeasible
set, 4 solver or sampling failure, 5 violated modelling assumption.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .certify import certify
from .grcc import ChebyshevResult, ShapeMatrix, grcc
from .mee import DegenerateSetError, Ellipsoid, ProjectionSpec, mee_sos
from .problems import (
    PoseData,
    TrajectoryData,
    hard_to_learn_system,
    pendulum_trajectory,
    pose_sme,
    random_linear_system,
    synthetic_pose,
    sysid_sme,
)
from .prune import prune_constraints
from .relax import AssumptionError, InfeasibleError, RelaxationError, SemialgebraicSet
from .sample import SampleBatch, SamplingError, estimate_shape, hit_and_run, rejection_sample
from .sdpcore import Settings
from .so3 import rotation_ball

log = logging.getLogger("sosmee")

EXIT_OK = 0
EXIT_PARSE = 2
EXIT_INFEASIBLE = 3
EXIT_SOLVER = 4
EXIT_ASSUMPTION = 5

#: keys whose values change from run to run (dropped by :func:`canonical`)
VOLATILE_KEYS = ("wall_time", "times")

SAMPLING_COMMANDS = ("sample", "pipeline")


class InputError(Exception):
    """Unreadable or malformed input; maps to the parse exit code."""


@dataclass
class RunConfig:
    command: str
    options: dict = field(default_factory=dict)

    @property
    def seed(self):
        return self.options.get("seed")

    @property
    def kappa(self):
        return self.options.get("kappa")

    def __getattr__(self, name):
        try:
            return self.__dict__["options"][name]
        except KeyError:
            raise AttributeError(name) from None


# ---------------------------------------------------------------------------
# io helpers
# ---------------------------------------------------------------------------

def _clean(obj):
    """JSON-safe copy: arrays to lists, non-finite floats to None."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def dumps(obj) -> str:
    return json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n"


def canonical(obj):
    """The artifact without run-dependent timing entries."""
    if isinstance(obj, dict):
        return {k: canonical(v) for k, v in obj.items() if k not in VOLATILE_KEYS}
    if isinstance(obj, list):
        return [canonical(v) for v in obj]
    return obj


def write_json(path, obj) -> None:
    Path(path).write_text(dumps(obj))


def read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as err:
        raise InputError(f"cannot read JSON from {path}: {err}") from err


def load_set(path) -> SemialgebraicSet:
    data = read_json(path)
    try:
        return SemialgebraicSet.from_json(data.get("set", data))
    except (KeyError, TypeError, ValueError) as err:
        raise InputError(f"{path} is not a set description: {err}") from err


def load_ellipsoid(path) -> Ellipsoid:
    data = read_json(path)
    try:
        if data.get("E") is None and "eta" in data:
            return ChebyshevResult.from_json(data).ellipsoid()
        return Ellipsoid.from_json(data)
    except (KeyError, TypeError, ValueError) as err:
        raise InputError(f"{path} is not an ellipsoid: {err}") from err


def load_ball(path) -> ChebyshevResult:
    data = read_json(path)
    try:
        if "eta" in data:
            return ChebyshevResult.from_json(data)
        ell = Ellipsoid.from_json(data)
    except (KeyError, TypeError, ValueError) as err:
        raise InputError(f"{path} is not a ball or ellipsoid: {err}") from err
    return ChebyshevResult(ell.mu, 1.0, ell.E, ell.kappa or 1)


def load_samples(path) -> SampleBatch:
    try:
        return SampleBatch.from_csv(path)
    except (OSError, ValueError, IndexError) as err:
        raise InputError(f"cannot read samples from {path}: {err}") from err


def _parse_proj(text):
    if text in (None, "", "all"):
        return None
    try:
        return tuple(int(t) for t in str(text).split(","))
    except ValueError as err:
        raise InputError(f"bad projection {text!r}: expected comma-separated zero-based indices") from err


def _parse_kappas(text) -> list[int]:
    try:
        return [int(t) for t in str(text).split(",")]
    except ValueError as err:
        raise InputError(f"bad relaxation order {text!r}") from err


def _settings(cfg: RunConfig) -> Settings:
    over = {}
    if cfg.options.get("eps") is not None:
        over["eps"] = float(cfg.options["eps"])
    if cfg.options.get("backend") is not None:
        over["backend"] = cfg.options["backend"]
    return Settings.from_env(**over)


def _meta(cfg: RunConfig, t0: float, kappa=None, residuals=None, **extra) -> dict:
    st = _settings(cfg)
    out = {
        "version": __version__,
        "command": cfg.command,
        "seed": cfg.options.get("seed"),
        "kappa": kappa,
        "residuals": residuals or {},
        "wall_time": time.perf_counter() - t0,
        "solver": {"eps": st.eps, "backend": st.backend},
        "config": {k: v for k, v in sorted(cfg.options.items()) if not k.startswith("_")},
    }
    out.update(extra)
    return out


def _check_paths(cfg: RunConfig, inputs, outputs) -> None:
    for key in inputs:
        p = cfg.options.get(key)
        if p is not None and p not in ("identity", "auto") and not Path(p).exists():
            raise InputError(f"--{key.replace('_', '-')}: {p} does not exist")
    for key in outputs:
        p = cfg.options.get(key)
        if p is not None:
            parent = Path(p).resolve().parent
            if not parent.is_dir():
                raise InputError(f"--{key.replace('_', '-')}: directory {parent} does not exist")


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_sysid_build(cfg: RunConfig) -> int:
    t0 = time.perf_counter()
    _check_paths(cfg, ["data"], ["out", "data_out"])
    truth = None
    if cfg.data:
        try:
            data = TrajectoryData.from_csv(cfg.data)
        except (OSError, ValueError, KeyError, IndexError) as err:
            raise InputError(f"cannot read trajectory {cfg.data}: {err}") from err
    else:
        if cfg.seed is None:
            raise InputError("--seed is required to generate data")
        rng = np.random.default_rng(cfg.seed)
        if cfg.generate == "pendulum":
            data, truth = pendulum_trajectory(cfg.N, rng, noise=cfg.beta, u_scale=cfg.u_scale,
                                              disturbance=cfg.disturbance)
        elif cfg.generate == "random-linear":
            data, truth = random_linear_system(cfg.nx, cfg.N, cfg.beta, rng)
        elif cfg.generate == "hard-to-learn":
            data, truth = hard_to_learn_system(cfg.theta2, cfg.N, rng, noise=cfg.beta)
        else:
            raise InputError("give --data or --generate")
    if cfg.data_out:
        data.to_csv(cfg.data_out)
    sset = sysid_sme(data)
    out = sset.to_json()
    out["meta"] = _meta(cfg, t0)
    if truth is not None:
        out["meta"]["truth"] = np.asarray(truth).tolist()
    write_json(cfg.out, out)
    print(f"{len(sset.inequalities)} constraints in R^{sset.n} -> {cfg.out}")
    return EXIT_OK


def cmd_pose_build(cfg: RunConfig) -> int:
    t0 = time.perf_counter()
    _check_paths(cfg, ["data"], ["out", "data_out"])
    truth = None
    if cfg.data:
        try:
            data = PoseData.load(cfg.data)
        except (OSError, ValueError, KeyError, TypeError, json.JSONDecodeError) as err:
            raise InputError(f"cannot read pose data {cfg.data}: {err}") from err
    else:
        if cfg.seed is None:
            raise InputError("--seed is required to generate data")
        data, q, t = synthetic_pose(np.random.default_rng(cfg.seed), cfg.points, cfg.beta, t_bound=cfg.t_bound)
        truth = {"q": q.tolist(), "t": t.tolist()}
    if data.t_bound is None:
        data.t_bound = cfg.t_bound
    if cfg.data_out:
        Path(cfg.data_out).write_text(dumps(data.to_json()))
    sset = pose_sme(data)
    out = sset.to_json()
    out["meta"] = _meta(cfg, t0)
    if truth is not None:
        out["meta"]["truth"] = truth
    write_json(cfg.out, out)
    print(f"pose set with {len(data.points)} correspondences -> {cfg.out}")
    return EXIT_OK


def cmd_prune(cfg: RunConfig) -> int:
    t0 = time.perf_counter()
    _check_paths(cfg, ["input"], ["out", "report"])
    sset = load_set(cfg.input)
    pruned, rep = prune_constraints(sset, cfg.order, cfg.eps_prune, _settings(cfg))
    out = pruned.to_json()
    meta = _meta(cfg, t0, kappa=cfg.order, kept=len(rep.kept), original=rep.n_constraints)
    out["meta"] = meta
    write_json(cfg.out, out)
    if cfg.report:
        r = rep.to_json()
        r["meta"] = meta
        write_json(cfg.report, r)
    print(f"kept {len(rep.kept)} of {rep.n_constraints} constraints ({100 * rep.kept_fraction:.1f}%)")
    return EXIT_OK


def _draw(cfg: RunConfig, sset: SemialgebraicSet, ball: ChebyshevResult | None, proj) -> SampleBatch:
    if cfg.method == "rejection":
        if ball is None:
            raise InputError("rejection sampling needs --ball")
        return rejection_sample(sset, proj, ball, cfg.n, cfg.seed)
    batch = hit_and_run(sset, cfg.n, cfg.burn_in, cfg.seed)
    if proj is not None:
        batch.points = ProjectionSpec.coerce(proj, sset.n).apply(batch.points)
    return batch


def cmd_sample(cfg: RunConfig) -> int:
    t0 = time.perf_counter()
    _check_paths(cfg, ["set", "ball"], ["out"])
    sset = load_set(cfg.set)
    ball = load_ball(cfg.ball) if cfg.ball else None
    try:
        batch = _draw(cfg, sset, ball, _parse_proj(cfg.proj))
    except ValueError as err:
        raise AssumptionError(str(err)) from err
    batch.to_csv(cfg.out)
    write_json(str(cfg.out) + ".meta.json", {"meta": _meta(cfg, t0, sampling=batch.meta())})
    rate = "" if batch.acceptance_rate is None else f", acceptance rate {batch.acceptance_rate:.4g}"
    print(f"{batch.n} samples -> {cfg.out}{rate}")
    return EXIT_OK


def cmd_enclose(cfg: RunConfig) -> int:
    t0 = time.perf_counter()
    _check_paths(cfg, ["set"], ["out"])
    sset = load_set(cfg.set)
    kappa = cfg.kappa or sset.min_order()
    res = mee_sos(sset, _parse_proj(cfg.proj), kappa, _settings(cfg), method=cfg.method)
    out = res.ellipsoid.to_json()
    out["volume"] = res.ellipsoid.volume()
    out["semi_axes"] = res.ellipsoid.semi_axes().tolist()
    out["meta"] = _meta(cfg, t0, kappa, res.residuals)
    write_json(cfg.out, out)
    print(f"enclosing ellipsoid (kappa={kappa}) volume {out['volume']:.6g} -> {cfg.out}")
    return EXIT_OK


def _shape(cfg: RunConfig, sset: SemialgebraicSet, proj, settings: Settings):
    """Q from ``--Q``: identity, a samples CSV, a JSON with ``Q``, or auto."""
    spec = cfg.Q
    if spec == "identity":
        return None, {}
    if spec != "auto":
        if str(spec).endswith(".csv"):
            return estimate_shape(load_samples(spec)), {"source": spec}
        data = read_json(spec)
        return ShapeMatrix.from_json(data.get("shape", data)), {"source": spec}
    if cfg.seed is None:
        raise InputError("--seed is required when Q is estimated from samples")
    low = grcc(sset, None, None, sset.min_order(), settings)
    batch = _sample_with_fallback(sset, low, cfg.n_samples, cfg.seed)
    pts = ProjectionSpec.coerce(proj, sset.n).apply(batch.points)
    shape = estimate_shape(SampleBatch(pts, batch.seed, batch.method, batch.acceptance_rate))
    return shape, {"source": "auto", "sampling": batch.meta()}


def _sample_with_fallback(sset, ball, n, seed) -> SampleBatch:
    try:
        return rejection_sample(sset, None, ball, n, seed, max_trials=2_000_000)
    except SamplingError as err:
        log.warning("rejection sampling failed (%s); trying hit-and-run", err)
        return hit_and_run(sset, n, seed=seed)


def cmd_chebyshev(cfg: RunConfig) -> int:
    t0 = time.perf_counter()
    _check_paths(cfg, ["set", "Q"], ["out", "sweep_csv"])
    sset = load_set(cfg.set)
    proj = _parse_proj(cfg.proj)
    settings = _settings(cfg)
    kappas = _parse_kappas(cfg.kappa) if cfg.kappa is not None else [sset.min_order()]
    shape, shape_info = _shape(cfg, sset, proj, settings)
    results = [grcc(sset, proj, shape, k, settings) for k in kappas]
    res = results[-1]
    out = res.to_json()
    out["radius"] = res.radius
    out["volume"] = res.volume()
    if shape is not None:
        out["shape"] = shape.to_json()
    out["meta"] = _meta(cfg, t0, res.kappa, res.residuals, shape=shape_info)
    write_json(cfg.out, out)
    if cfg.sweep_csv:
        with open(cfg.sweep_csv, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["kappa", "eta", "radius", "volume"])
            for r in results:
                w.writerow([r.kappa, repr(r.eta), repr(r.radius), repr(r.volume())])
    print(f"GRCC kappa={res.kappa}: eta {res.eta:.6g}, volume {out['volume']:.6g} -> {cfg.out}")
    return EXIT_OK


def cmd_rotball(cfg: RunConfig) -> int:
    t0 = time.perf_counter()
    _check_paths(cfg, ["set"], ["out"])
    sset = load_set(cfg.set)
    q_index = _parse_proj(cfg.q_index) or (0, 1, 2, 3)
    res = rotation_ball(sset, None, cfg.kappa, q_index, _settings(cfg))
    if res.assumption_ok is False and not cfg.allow_wide:
        raise AssumptionError("the rotations are not certified to lie within pi/2 of the reference; "
                              "pass --allow-wide to keep the result")
    out = res.to_json()
    out["meta"] = _meta(cfg, t0, cfg.kappa, res.info.get("residuals"))
    write_json(cfg.out, out)
    print(f"geodesic ball radius {res.radius:.6g} rad -> {cfg.out}")
    return EXIT_OK


def cmd_certify(cfg: RunConfig) -> int:
    t0 = time.perf_counter()
    _check_paths(cfg, ["set", "ellipsoid"], ["out"])
    sset = load_set(cfg.set)
    ell = load_ellipsoid(cfg.ellipsoid)
    cert = certify(sset, ell, _parse_proj(cfg.proj), cfg.order, _settings(cfg), assume_convex=cfg.assume_convex)
    out = cert.to_json()
    out["meta"] = _meta(cfg, t0, cert.order)
    write_json(cfg.out, out)
    print(f"certificate: {cert.outcome} ({len(cert.contact_points)} contact points) -> {cfg.out}")
    return EXIT_OK


def cmd_pipeline(cfg: RunConfig) -> int:
    """Prune, lowest-order ball, samples, shape, GRCC at the requested order."""
    t0 = time.perf_counter()
    _check_paths(cfg, ["set"], [])
    outdir = Path(cfg.out_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    sset = load_set(cfg.set)
    settings = _settings(cfg)
    pruned, rep = prune_constraints(sset, 1, cfg.eps_prune, settings)
    r = rep.to_json()
    r["meta"] = _meta(cfg, t0, 1)
    write_json(outdir / "prune_report.json", r)
    p = pruned.to_json()
    p["meta"] = _meta(cfg, t0, 1)
    write_json(outdir / "pruned.json", p)
    low = grcc(pruned, None, None, pruned.min_order(), settings)
    b = low.to_json()
    b["meta"] = _meta(cfg, t0, low.kappa, low.residuals)
    write_json(outdir / "ball.json", b)
    batch = _sample_with_fallback(pruned, low, cfg.n_samples, cfg.seed)
    batch.to_csv(outdir / "samples.csv")
    proj = _parse_proj(cfg.proj)
    pts = ProjectionSpec.coerce(proj, pruned.n).apply(batch.points)
    shape = estimate_shape(SampleBatch(pts, batch.seed, batch.method, batch.acceptance_rate))
    final = grcc(pruned, proj, shape, cfg.kappa, settings)
    ball = grcc(pruned, proj, None, cfg.kappa, settings)
    f = final.to_json()
    f["shape"] = shape.to_json()
    f["volume"] = final.volume()
    f["meta"] = _meta(cfg, t0, final.kappa, final.residuals)
    write_json(outdir / "grcc.json", f)
    report = {
        "constraints": rep.n_constraints,
        "kept": len(rep.kept),
        "kept_fraction": rep.kept_fraction,
        "sampling": batch.meta(),
        "ellipsoid_volume": final.volume(),
        "ball_radius": ball.radius,
        "ball_volume": ball.volume(),
        "kappa": cfg.kappa,
        "meta": _meta(cfg, t0, cfg.kappa, final.residuals),
    }
    write_json(outdir / "report.json", report)
    print(f"kept {report['kept']} of {report['constraints']} constraints; "
          f"kappa={cfg.kappa} ellipsoid volume {report['ellipsoid_volume']:.4g}, "
          f"ball volume {report['ball_volume']:.4g} -> {outdir}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--eps", type=float, default=None,
                   help="solver tolerance (default: $SOSMEE_EPS or 1e-7)")
    p.add_argument("--backend", choices=["auto", "clarabel", "admm"], default=None,
                   help="conic solver backend (default: auto)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sosmee", description="Set-membership estimation with moment-SOS relaxations.")
    parser.add_argument("--config", help="JSON file of option defaults (flat or per command)")
    parser.add_argument("--log-level", default="WARNING", help="logging level (default: WARNING)")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sysid-build", help="build a system-identification set from a trajectory")
    p.add_argument("--data", help="trajectory CSV (columns step, x.., u.., phi_i_j.., beta)")
    p.add_argument("--generate", choices=["pendulum", "random-linear", "hard-to-learn"],
                   help="generate a synthetic trajectory instead of reading one")
    p.add_argument("--N", type=int, default=1000, help="trajectory length for --generate (default 1000)")
    p.add_argument("--beta", type=float, default=0.1, help="noise bound for --generate (default 0.1)")
    p.add_argument("--nx", type=int, default=2, help="state dimension for random-linear (default 2)")
    p.add_argument("--theta2", type=float, default=1.0, help="theta2 for hard-to-learn (default 1)")
    p.add_argument("--u-scale", type=float, default=10.0, help="pendulum input amplitude (default 10)")
    p.add_argument("--disturbance", choices=["continuous", "discrete"], default="continuous",
                   help="pendulum disturbance model (default continuous)")
    p.add_argument("--seed", type=int, help="RNG seed for --generate")
    p.add_argument("--data-out", help="also write the generated trajectory CSV here")
    p.add_argument("--out", required=True, help="output set JSON")
    p.set_defaults(func=cmd_sysid_build)

    p = sub.add_parser("pose-build", help="build a camera-pose set from correspondences")
    p.add_argument("--data", help='pose JSON {"points": [{"Y", "y", "beta"}], "t_bound"}')
    p.add_argument("--points", type=int, default=6, help="correspondences for synthetic data (default 6)")
    p.add_argument("--beta", type=float, default=0.02, help="noise bound for synthetic data (default 0.02)")
    p.add_argument("--t-bound", type=float, default=3.0, help="translation norm bound (default 3)")
    p.add_argument("--seed", type=int, help="RNG seed for synthetic data")
    p.add_argument("--data-out", help="also write the pose data JSON here")
    p.add_argument("--out", required=True, help="output set JSON")
    p.set_defaults(func=cmd_pose_build)

    p = sub.add_parser("prune", help="drop redundant inequality constraints")
    p.add_argument("--in", dest="input", required=True, help="input set JSON")
    p.add_argument("--out", required=True, help="pruned set JSON")
    p.add_argument("--report", help="prune report JSON")
    p.add_argument("--order", type=int, default=1, help="relaxation order of the bounds (default 1)")
    p.add_argument("--eps-prune", type=float, default=0.0, help="drop threshold on the bound (default 0)")
    _common(p)
    p.set_defaults(func=cmd_prune)

    p = sub.add_parser("sample", help="sample the set")
    p.add_argument("--set", required=True, help="set JSON")
    p.add_argument("--method", choices=["rejection", "hit-and-run"], default="rejection",
                   help="sampler (default rejection)")
    p.add_argument("--ball", help="enclosing ball or ellipsoid JSON (rejection)")
    p.add_argument("--n", type=int, default=5000, help="number of samples (default 5000)")
    p.add_argument("--burn-in", type=int, default=1000, help="hit-and-run burn-in (default 1000)")
    p.add_argument("--proj", help="zero-based coordinates to keep, comma separated (default all)")
    p.add_argument("--seed", type=int, help="RNG seed (required)")
    p.add_argument("--out", required=True, help="samples CSV; metadata goes to <out>.meta.json")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("enclose", help="minimum enclosing ellipsoid by the SOS program")
    p.add_argument("--set", required=True, help="set JSON")
    p.add_argument("--kappa", type=int, help="relaxation order (default lowest)")
    p.add_argument("--proj", help="zero-based coordinates, comma separated (default all)")
    p.add_argument("--method", choices=["conic", "linearized"], default="conic",
                   help="log-det method (default conic)")
    p.add_argument("--out", required=True, help="ellipsoid JSON")
    _common(p)
    p.set_defaults(func=cmd_enclose)

    p = sub.add_parser("chebyshev", help="generalised relaxed Chebyshev centre")
    p.add_argument("--set", required=True, help="set JSON")
    p.add_argument("--kappa", help="relaxation order, or a comma list for a sweep (default lowest)")
    p.add_argument("--proj", help="zero-based coordinates, comma separated (default all)")
    p.add_argument("--Q", default="auto",
                   help="'identity', 'auto' (estimate from samples), a samples CSV or a JSON with Q (default auto)")
    p.add_argument("--n-samples", type=int, default=5000, help="samples for --Q auto (default 5000)")
    p.add_argument("--seed", type=int, help="RNG seed (required for --Q auto)")
    p.add_argument("--sweep-csv", help="write kappa, eta, radius, volume rows here")
    p.add_argument("--out", required=True, help="result JSON")
    _common(p)
    p.set_defaults(func=cmd_chebyshev)

    p = sub.add_parser("rotball", help="minimum enclosing geodesic ball of the rotations")
    p.add_argument("--set", required=True, help="set JSON containing the unit-quaternion equality")
    p.add_argument("--kappa", type=int, default=2, help="relaxation order (default 2)")
    p.add_argument("--q-index", default="0,1,2,3", help="zero-based quaternion coordinates (default 0,1,2,3)")
    p.add_argument("--allow-wide", action="store_true", help="keep the result when the branch check fails")
    p.add_argument("--out", required=True, help="result JSON")
    _common(p)
    p.set_defaults(func=cmd_rotball)

    p = sub.add_parser("certify", help="John certificate for an enclosing ellipsoid")
    p.add_argument("--set", required=True, help="set JSON (convex)")
    p.add_argument("--ellipsoid", required=True, help="ellipsoid JSON from enclose or chebyshev")
    p.add_argument("--order", type=int, help="relaxation order (default: increase until conclusive)")
    p.add_argument("--proj", help="zero-based coordinates of the ellipsoid, comma separated")
    p.add_argument("--assume-convex", action="store_true", help="skip the convexity heuristic")
    p.add_argument("--out", required=True, help="certificate JSON")
    _common(p)
    p.set_defaults(func=cmd_certify)

    p = sub.add_parser("pipeline", help="prune, ball, sample, estimate Q, GRCC")
    p.add_argument("--set", required=True, help="set JSON")
    p.add_argument("--kappa", type=int, default=2, help="final relaxation order (default 2)")
    p.add_argument("--proj", help="zero-based coordinates, comma separated (default all)")
    p.add_argument("--n-samples", type=int, default=5000, help="samples for Q (default 5000)")
    p.add_argument("--eps-prune", type=float, default=0.0, help="drop threshold on the bound (default 0)")
    p.add_argument("--seed", type=int, help="RNG seed (required)")
    p.add_argument("--out-dir", required=True, help="directory for all artifacts")
    _common(p)
    p.set_defaults(func=cmd_pipeline)
    return parser


def _config_defaults(path, command: str) -> dict:
    data = read_json(path)
    if not isinstance(data, dict):
        raise InputError(f"{path}: config must be a JSON object")
    flat = {k: v for k, v in data.items() if not isinstance(v, dict)}
    flat.update(data.get(command, {}) or {})
    return {k.replace("-", "_"): v for k, v in flat.items()}


def parse_config(argv) -> RunConfig:
    parser = build_parser()
    ns = parser.parse_args(argv)
    if ns.config:
        # flags beat the config file, which beats the built-in defaults
        extra = _config_defaults(ns.config, ns.command)
        sub = parser._subparsers._group_actions[0].choices[ns.command]
        known = {a.dest for a in sub._actions}
        unknown = set(extra) - known
        if unknown:
            raise InputError(f"unknown options in {ns.config}: {sorted(unknown)}")
        sub.set_defaults(**extra)
        ns = parser.parse_args(argv)
    opts = {k: v for k, v in vars(ns).items() if k not in ("func", "command", "log_level", "config")}
    cfg = RunConfig(ns.command, opts)
    cfg.options["_func"] = ns.func
    cfg.options["_log_level"] = ns.log_level
    if ns.command in SAMPLING_COMMANDS and cfg.seed is None:
        raise InputError(f"{ns.command} needs --seed")
    return cfg


def run(cfg: RunConfig) -> int:
    func = cfg.options.pop("_func")
    try:
        return func(cfg)
    except InputError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_PARSE
    except InfeasibleError as err:
        print(f"infeasible: {err}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (AssumptionError, DegenerateSetError) as err:
        print(f"assumption violated: {err}", file=sys.stderr)
        return EXIT_ASSUMPTION
    except (RelaxationError, SamplingError) as err:
        print(f"solver failure: {err}", file=sys.stderr)
        return EXIT_SOLVER
    except ValueError as err:
        print(f"assumption violated: {err}", file=sys.stderr)
        return EXIT_ASSUMPTION


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        cfg = parse_config(argv)
    except SystemExit as exc:  # argparse: help, version or usage error
        return int(exc.code or 0)
    except InputError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_PARSE
    level = cfg.options.pop("_log_level")
    logging.basicConfig(level=getattr(logging, str(level).upper(), logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
