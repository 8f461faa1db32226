"""Configuration parsing, experiment orchestration, and artifact emission.

Configs are JSON, vectors and tables are CSV with 17-significant-digit
decimals, and every artifact embeds the hash of the config that produced it,
so identical configs yield byte-identical outputs.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import hashlib
import json
import os
import sys
from dataclasses import dataclass

import numpy as np

from . import carleman, control, observability, semigroup
from .errors import (
    CapacityError,
    DegenHeatError,
    ParseError,
    SolverError,
    ValidationError,
)
from .grid_operator import Field, ProblemSpec, assemble_operator, build_grid

SUBCOMMANDS = ("spectrum", "evolve", "observe", "constants", "synthesize", "sweep")

WORKER_ENV = "DEGENHEAT_WORKERS"
SWEEP_CAP = 10_000
_TRAJECTORY_MAX_ROWS = 201

_CONSTANT_OUTPUTS = ("l", "M_l", "C0", "C1", "C2", "rho", "C", "beta", "log10K")
_SWEEP_OUTPUTS = _CONSTANT_OUTPUTS + ("lambda1",)


@dataclass(frozen=True)
class Numerics:
    n: int
    dt: float
    cg_tol: float
    scheme: str


@dataclass(frozen=True)
class CarlemanSettings:
    s: float
    h_w: float


@dataclass(frozen=True)
class RunConfig:
    problem: ProblemSpec
    numerics: Numerics
    carleman: CarlemanSettings
    seeds: tuple[int, ...]
    outputs: str


@dataclass(frozen=True)
class SweepSpec:
    base: RunConfig
    axes: tuple[tuple[str, tuple[float, ...]], ...]
    outputs: tuple[str, ...]


def _fmt(v: float) -> str:
    return f"{v:.17g}"


def _require_number(obj: dict, key: str, field: str) -> float:
    if key not in obj:
        raise ValidationError(field, "missing required value")
    v = obj[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ValidationError(field, f"expected a number, got {type(v).__name__}")
    return float(v)


def _check_keys(obj: dict, allowed: set[str], where: str) -> None:
    for key in obj:
        if key not in allowed:
            raise ValidationError(f"{where}.{key}" if where else key, "unknown key")


def _parse_problem(obj) -> ProblemSpec:
    if not isinstance(obj, dict):
        raise ValidationError("problem", "must be an object")
    _check_keys(obj, {"alpha", "beta0", "beta1", "kappa", "tau", "T", "eps"}, "problem")
    alpha = _require_number(obj, "alpha", "alpha")
    beta0 = _require_number(obj, "beta0", "beta0")
    beta1 = _require_number(obj, "beta1", "beta1")
    kappa = _require_number(obj, "kappa", "kappa")
    tau = _require_number(obj, "tau", "tau")
    T = _require_number(obj, "T", "T")
    eps = _require_number(obj, "eps", "eps")
    if not 0.0 < alpha < 1.0:
        raise ValidationError("alpha", f"must lie in (0, 1), got {alpha}")
    if beta1 == 0.0:
        raise ValidationError("beta1", "must be nonzero")
    if beta0 * beta1 < 0.0:
        raise ValidationError("beta0", "beta0*beta1 must be >= 0")
    if T <= 0.0:
        raise ValidationError("T", f"must be positive, got {T}")
    if not 0.0 < kappa < 1.0:
        raise ValidationError("kappa", f"must lie in (0, 1), got {kappa}")
    if not 0.0 < tau < T:
        raise ValidationError("tau", f"must lie in (0, T), got {tau}")
    if eps <= 0.0:
        raise ValidationError("eps", f"must be positive, got {eps}")
    return ProblemSpec(alpha=alpha, beta0=beta0, beta1=beta1, kappa=kappa, tau=tau, T=T, eps=eps)


def _parse_run_config(doc: dict) -> RunConfig:
    if not isinstance(doc, dict):
        raise ValidationError("config", "top level must be an object")
    _check_keys(doc, {"problem", "numerics", "carleman", "seeds", "outputs"}, "")
    if "problem" not in doc:
        raise ValidationError("problem", "missing required section")
    problem = _parse_problem(doc["problem"])

    num = doc.get("numerics", {})
    if not isinstance(num, dict):
        raise ValidationError("numerics", "must be an object")
    _check_keys(num, {"n", "dt", "cg_tol", "scheme"}, "numerics")
    n = num.get("n", 400)
    if isinstance(n, bool) or not isinstance(n, int):
        raise ValidationError("numerics.n", "must be an integer")
    if n < 4:
        raise ValidationError("numerics.n", f"must be >= 4, got {n}")
    dt = float(num["dt"]) if "dt" in num else problem.T / 2000.0
    if dt <= 0.0:
        raise ValidationError("numerics.dt", f"must be positive, got {dt}")
    cg_tol = float(num.get("cg_tol", 1e-10))
    if cg_tol <= 0.0:
        raise ValidationError("numerics.cg_tol", "must be positive")
    scheme = num.get("scheme", "crank_nicolson")
    if scheme not in semigroup.SCHEMES:
        raise ValidationError("numerics.scheme", f"must be one of {semigroup.SCHEMES}")

    car = doc.get("carleman", {})
    if not isinstance(car, dict):
        raise ValidationError("carleman", "must be an object")
    _check_keys(car, {"s", "h_w"}, "carleman")
    s = float(car.get("s", 0.5))
    h_w = float(car.get("h_w", 0.5))
    if not 0.0 < s < 1.0:
        raise ValidationError("carleman.s", f"must lie in (0, 1), got {s}")
    if not 0.0 < h_w <= 1.0:
        raise ValidationError("carleman.h_w", f"must lie in (0, 1], got {h_w}")

    seeds = doc.get("seeds", [0])
    if (
        not isinstance(seeds, list)
        or not seeds
        or any(isinstance(v, bool) or not isinstance(v, int) for v in seeds)
    ):
        raise ValidationError("seeds", "must be a nonempty list of integers")
    outputs = doc.get("outputs", "out")
    if not isinstance(outputs, str) or not outputs:
        raise ValidationError("outputs", "must be a nonempty path string")
    return RunConfig(
        problem=problem,
        numerics=Numerics(n=n, dt=dt, cg_tol=cg_tol, scheme=scheme),
        carleman=CarlemanSettings(s=s, h_w=h_w),
        seeds=tuple(seeds),
        outputs=outputs,
    )


def parse_config(text: str) -> RunConfig:
    """Parse and validate a JSON run configuration, filling defaults."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    return _parse_run_config(doc)


def emit_config(config: RunConfig) -> str:
    """Canonical JSON for a config; parse_config(emit_config(c)) == c."""
    doc = {
        "problem": {
            "alpha": config.problem.alpha,
            "beta0": config.problem.beta0,
            "beta1": config.problem.beta1,
            "kappa": config.problem.kappa,
            "tau": config.problem.tau,
            "T": config.problem.T,
            "eps": config.problem.eps,
        },
        "numerics": {
            "n": config.numerics.n,
            "dt": config.numerics.dt,
            "cg_tol": config.numerics.cg_tol,
            "scheme": config.numerics.scheme,
        },
        "carleman": {"s": config.carleman.s, "h_w": config.carleman.h_w},
        "seeds": list(config.seeds),
        "outputs": config.outputs,
    }
    return json.dumps(doc, sort_keys=True, indent=2)


def config_hash(config: RunConfig) -> str:
    """Hash of the producing configuration; the output directory is excluded
    so the same run into two directories yields byte-identical artifacts."""
    doc = json.loads(emit_config(config))
    del doc["outputs"]
    return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()[:16]


def parse_sweep_config(text: str) -> SweepSpec:
    """Parse a sweep document: {"base": <run config>, "axes": [[path, [values]], ...],
    "outputs": [names]}.  Axis paths are dotted (e.g. "problem.alpha")."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    if not isinstance(doc, dict):
        raise ValidationError("sweep", "top level must be an object")
    _check_keys(doc, {"base", "axes", "outputs"}, "")
    if "base" not in doc:
        raise ValidationError("base", "missing required section")
    base = _parse_run_config(doc["base"])
    axes_doc = doc.get("axes", [])
    if not isinstance(axes_doc, list) or not axes_doc:
        raise ValidationError("axes", "must be a nonempty list of [path, values] pairs")
    axes = []
    total = 1
    for k, pair in enumerate(axes_doc):
        if not (isinstance(pair, list) and len(pair) == 2):
            raise ValidationError(f"axes[{k}]", "must be a [path, values] pair")
        path, values = pair
        if not isinstance(path, str) or not isinstance(values, list) or not values:
            raise ValidationError(f"axes[{k}]", "path must be a string, values nonempty")
        axes.append((path, tuple(float(v) for v in values)))
        total *= len(values)
    if total > SWEEP_CAP:
        raise ValidationError("axes", f"sweep size {total} exceeds the cap {SWEEP_CAP}")
    outputs = doc.get("outputs", list(_CONSTANT_OUTPUTS))
    if not isinstance(outputs, list) or not outputs:
        raise ValidationError("outputs", "must be a nonempty list of names")
    for name in outputs:
        if name not in _SWEEP_OUTPUTS:
            raise ValidationError("outputs", f"unknown output {name!r}")
    return SweepSpec(base=base, axes=tuple(axes), outputs=tuple(outputs))


# ---------------------------------------------------------------------------
# subcommand implementations
# ---------------------------------------------------------------------------


def _carleman_params(config: RunConfig) -> carleman.CarlemanParams:
    return carleman.CarlemanParams(
        s=config.carleman.s,
        h_w=config.carleman.h_w,
        T=config.problem.T,
        alpha=config.problem.alpha,
    )


def _operator(config: RunConfig):
    grid = build_grid(config.numerics.n)
    return grid, assemble_operator(grid, config.problem)


def _seed_field(grid, seed: int) -> Field:
    rng = np.random.default_rng(seed)
    return Field(grid, rng.standard_normal(grid.n))


def _write_rows(path, comment: str, header: str, rows) -> None:
    with open(path, "w") as fh:
        fh.write(f"# {comment}\n{header}\n")
        for row in rows:
            fh.write(",".join(row) + "\n")


def _write_json(path, comment_hash: str, payload: dict) -> None:
    payload = dict(payload)
    payload["config_hash"] = comment_hash
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _constants_payload(config: RunConfig) -> dict:
    tc = carleman.theoretical_constants(config.problem, _carleman_params(config))
    return {
        "l": tc.l,
        "M_l": tc.M_l,
        "C0": tc.c0,
        "C1": tc.C1,
        "C2": tc.C2,
        "rho": tc.rho,
        "C": tc.C,
        "beta": tc.beta,
        "log10K": tc.log10K,
    }


def _run_spectrum(config: RunConfig, out: str, h: str) -> int:
    _, op = _operator(config)
    sd = semigroup.spectral_decomposition(op)
    rows = (
        (str(k), _fmt(lam)) for k, lam in enumerate(sd.eigenvalues)
    )
    _write_rows(os.path.join(out, "spectrum.csv"), f"config_hash={h}", "k,lambda", rows)
    return 0


def _run_evolve(config: RunConfig, out: str, h: str) -> int:
    grid, op = _operator(config)
    u0 = _seed_field(grid, config.seeds[0])
    traj = semigroup.evolve(
        op, u0, (0.0, config.problem.T), config.numerics.dt, config.numerics.scheme
    )
    stride = max(1, (len(traj.times) + _TRAJECTORY_MAX_ROWS - 1) // _TRAJECTORY_MAX_ROWS)
    keep = list(range(0, len(traj.times), stride))
    if keep[-1] != len(traj.times) - 1:
        keep.append(len(traj.times) - 1)
    cols = ",".join(f"x_{i}" for i in range(grid.n))
    _write_rows(
        os.path.join(out, "trajectory.csv"),
        f"config_hash={h}",
        f"t,{cols}",
        (
            tuple([_fmt(traj.times[k])] + [_fmt(v) for v in traj.states[k]])
            for k in keep
        ),
    )
    norms = traj.norms()
    _write_rows(
        os.path.join(out, "norm_decay.csv"),
        f"config_hash={h}",
        "t,norm",
        ((_fmt(t), _fmt(v)) for t, v in zip(traj.times, norms)),
    )
    return 0 if semigroup.norm_decay_ok(traj) else 1


def _run_observe(config: RunConfig, out: str, h: str) -> int:
    grid, op = _operator(config)
    sd = semigroup.spectral_decomposition(op)
    eigs = tuple(sd.eigenfield(k) for k in range(min(10, grid.n)))
    ensemble = observability.make_ensemble(
        grid, config.problem, 100, config.seeds[0], eigenfields=eigs
    )
    tc = carleman.theoretical_constants(config.problem, _carleman_params(config))
    report = observability.check_observation(
        op, ensemble, config.problem, tc, config.numerics.dt
    )
    _write_json(
        os.path.join(out, "observe.json"),
        h,
        {
            "samples": report.samples,
            "rho_used": report.rho_used,
            "C_used": report.C_used,
            "delta_used": report.delta_used,
            "fitted": report.fitted,
            "max_violation": report.max_violation,
        },
    )
    _write_rows(
        os.path.join(out, "observe_samples.csv"),
        f"config_hash={h}",
        "sample,normT,normT_omega,norm0,slack",
        (
            (str(k), _fmt(r.norm_T), _fmt(r.norm_T_omega), _fmt(r.norm_0), _fmt(r.slack))
            for k, r in enumerate(report.records)
        ),
    )
    return 0 if report.max_violation <= 0.0 else 1


def _run_constants(config: RunConfig, out: str, h: str) -> int:
    payload = _constants_payload(config)
    _write_json(os.path.join(out, "constants.json"), h, payload)
    print(json.dumps(payload, sort_keys=True))
    return 0


def _run_synthesize(config: RunConfig, out: str, h: str) -> int:
    grid, op = _operator(config)
    y0 = _seed_field(grid, config.seeds[0])
    report = control.synthesize(
        op,
        y0,
        config.problem,
        k_mode="auto",
        dt=config.numerics.dt,
        cg_tol=config.numerics.cg_tol,
    )
    _write_rows(
        os.path.join(out, "control.csv"),
        f"config_hash={h}",
        "x,f",
        (
            (_fmt(x), _fmt(v))
            for x, v in zip(grid.nodes, report.f.values)
        ),
    )
    _write_json(os.path.join(out, "report.json"), h, report.as_dict())
    certs = report.certificates
    ok = certs.target_met and certs.terminal_identity and certs.cost_inequality
    return 0 if ok else 1


def _sweep_point(spec: SweepSpec, idx: int, combo, out: str):
    doc = json.loads(emit_config(spec.base))
    for (path, _), value in zip(spec.axes, combo):
        node = doc
        parts = path.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
        node[parts[-1]] = value
    config = _parse_run_config(doc)
    values = {}
    needed = set(spec.outputs)
    if needed & set(_CONSTANT_OUTPUTS):
        values.update(_constants_payload(config))
    if "lambda1" in needed:
        _, op = _operator(config)
        sd = semigroup.spectral_decomposition(op)
        values["lambda1"] = float(sd.eigenvalues[0])
    payload = {
        "point": idx,
        "axes": {path: value for (path, _), value in zip(spec.axes, combo)},
        "outputs": {k: values[k] for k in spec.outputs},
    }
    path = os.path.join(out, "points", f"point_{idx:05d}.json")
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True)
        fh.write("\n")
    return idx, combo, [values[k] for k in spec.outputs]


def run_sweep(spec: SweepSpec, out: str, workers: int | None = None) -> int:
    """Evaluate every grid point concurrently, then merge serially into sweep.csv."""
    os.makedirs(os.path.join(out, "points"), exist_ok=True)
    combos = [()]
    for _, values in spec.axes:
        combos = [c + (v,) for c in combos for v in values]
    cap = workers or int(os.environ.get(WORKER_ENV, "0")) or (os.cpu_count() or 1)
    cap = max(1, min(cap, len(combos)))
    results = {}
    with concurrent.futures.ThreadPoolExecutor(max_workers=cap) as pool:
        futures = [
            pool.submit(_sweep_point, spec, idx, combo, out)
            for idx, combo in enumerate(combos)
        ]
        for fut in concurrent.futures.as_completed(futures):
            idx, combo, vals = fut.result()
            results[idx] = (combo, vals)
    h = hashlib.sha256(
        (config_hash(spec.base) + repr(spec.axes) + repr(spec.outputs)).encode()
    ).hexdigest()[:16]
    # leaf names are unique across config sections, so headers stay short
    axis_names = ",".join(path.rsplit(".", 1)[-1] for path, _ in spec.axes)
    out_names = ",".join(spec.outputs)
    rows = []
    for idx in range(len(combos)):
        combo, vals = results[idx]
        rows.append(tuple(_fmt(v) for v in combo) + tuple(_fmt(float(v)) for v in vals))
    _write_rows(
        os.path.join(out, "sweep.csv"),
        f"config_hash={h}",
        f"{axis_names},{out_names}",
        rows,
    )
    return 0


def run_subcommand(name: str, config: RunConfig, workers: int | None = None) -> int:
    """Execute one subcommand; artifacts land in config.outputs."""
    if name not in SUBCOMMANDS:
        raise ValidationError("subcommand", f"unknown subcommand {name!r}")
    out = config.outputs
    os.makedirs(out, exist_ok=True)
    h = config_hash(config)
    runners = {
        "spectrum": _run_spectrum,
        "evolve": _run_evolve,
        "observe": _run_observe,
        "constants": _run_constants,
        "synthesize": _run_synthesize,
    }
    return runners[name](config, out, h)


def _error_json(exc: Exception) -> str:
    return json.dumps({"error": type(exc).__name__, "message": str(exc)})


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="degenheat",
        description="Degenerate heat equation with Robin boundary flux: "
        "simulation, observability checks, and impulse-control synthesis.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="path to the JSON config")
        p.add_argument("--out", default=None, help="override the output directory")
        p.add_argument("--workers", type=int, default=None)
        p.add_argument("--seed", type=int, default=None, help="override seeds[0]")
    args = parser.parse_args(argv)

    try:
        with open(args.config) as fh:
            text = fh.read()
        if args.command == "sweep":
            spec = parse_sweep_config(text)
            if args.out is not None:
                base = RunConfig(
                    problem=spec.base.problem,
                    numerics=spec.base.numerics,
                    carleman=spec.base.carleman,
                    seeds=spec.base.seeds,
                    outputs=args.out,
                )
                spec = SweepSpec(base=base, axes=spec.axes, outputs=spec.outputs)
            return run_sweep(spec, spec.base.outputs, workers=args.workers)
        config = parse_config(text)
        if args.out is not None or args.seed is not None:
            seeds = config.seeds if args.seed is None else (args.seed,) + config.seeds[1:]
            config = RunConfig(
                problem=config.problem,
                numerics=config.numerics,
                carleman=config.carleman,
                seeds=seeds,
                outputs=config.outputs if args.out is None else args.out,
            )
        return run_subcommand(args.command, config, workers=args.workers)
    except (ParseError, ValidationError) as exc:
        print(_error_json(exc), file=sys.stderr)
        return 2
    except (SolverError, CapacityError) as exc:
        print(_error_json(exc), file=sys.stderr)
        return 3
    except DegenHeatError as exc:
        print(_error_json(exc), file=sys.stderr)
        return 4
    except OSError as exc:
        print(_error_json(exc), file=sys.stderr)
        return 5


if __name__ == "__main__":
    sys.exit(main())
