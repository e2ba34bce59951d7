"""Command-line entry point.

Every subcommand builds a :class:`~mlsi_bbe.io.RunConfig` and hands it to
:func:`run`, which executes the tasks in order and writes one JSON report per
task plus ``manifest.json``.  Exit codes: 0 success, 1 input error, 2 failed check.
"""

from __future__ import annotations

import argparse
import ast
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Any, Callable

import numpy as np

from . import __version__
from .bochner import canonical_r, certified_kappa, gamma_form
from .chain import CapacityError, build_chain
from .estimation import RatioOptions, gap_eigenfunction, minimize_ratio, spectral_gap
from .evolution import (convexity_check, counterexample_42, entropy_decay_check, evolve,
                        monotonicity_check)
from .functionals import mlsi_form
from .io import (CERTIFIED, COMPUTED, EIGENVALUE, ESTIMATE, PARAMETER, ConfigError, RunConfig,
                 build_model, emit_trajectory_csv, load_config, tag, validate_model, validate_task,
                 write_json)
from .models import ModelError, ModelSpec
from .perturbation import increment_identity, perturbation_pipeline

OUTPUT_ENV = "MLSI_BBE_OUTPUT"
DEFAULT_OUTPUT = "mlsi_bbe_out"
EXIT_OK, EXIT_INPUT, EXIT_FAILED = 0, 1, 2


def task_seed(*entropy: int) -> int:
    return int(np.random.SeedSequence(list(entropy)).generate_state(1)[0])


def _coordinates(spec: ModelSpec, n: int):
    return np.arange(n) - spec.offset if spec.family == "birth_death" else None


# ---------------------------------------------------------------------------
# tasks; each returns (ok, body, extra files)


def task_certify(spec: ModelSpec, task: dict, seed: int):
    cert = certified_kappa(spec)
    body: dict[str, Any] = {"certificate_kind": cert.kind,
                            "kappa": tag(cert.kappa, CERTIFIED if cert.certified else COMPUTED),
                            "witness": tag(cert.witness, COMPUTED)}
    ok = True
    samples = int(task.get("samples", 50))
    if cert.certified and samples > 0:
        chain = build_chain(spec)
        R = canonical_r(spec, chain.space)
        rng = np.random.default_rng(seed)
        worst = np.inf
        for _ in range(samples):
            f = np.exp(rng.normal(size=chain.size))
            e = mlsi_form(chain.gen, chain.pi, f)
            g = gamma_form(chain.gen, chain.pi, R, f)
            worst = min(worst, (g - cert.kappa * e) / max(abs(g), abs(cert.kappa * e), 1e-300))
        ok = bool(worst >= -1e-11)
        body["pointwise_check"] = {"samples": tag(samples, PARAMETER),
                                   "min_relative_margin": tag(worst, COMPUTED), "ok": ok}
    return ok, body, {}


def task_estimate(spec: ModelSpec, task: dict, seed: int):
    chain = build_chain(spec)
    kind = task.get("constant", "mlsi")
    cert = certified_kappa(spec)
    lower = cert.kappa if cert.certified else None
    if kind == "gap":
        gap = spectral_gap(chain.gen, chain.pi)
        return True, {"constant": "gap", "value": tag(gap, EIGENVALUE)}, {}
    opts = RatioOptions(restarts=task.get("restarts"), seed=seed,
                        coordinates=_coordinates(spec, chain.size))
    est = minimize_ratio(kind, chain.gen, chain.pi, opts,
                         certified_lower=lower if kind in ("mlsi", "kappa") else None)
    d = est.diagnostics
    body = {"constant": kind, "value": tag(est.value, ESTIMATE),
            "source": d["source"], "converged": d["converged"],
            "diagnostics": {"gap": tag(d["gap"], EIGENVALUE),
                            "constant_limit": tag(d["constant_limit"], ESTIMATE),
                            "multistart_best": tag(d["multistart_best"], ESTIMATE),
                            "restarts": tag(d["restarts"], PARAMETER),
                            "converged_restarts": tag(d["converged_restarts"], COMPUTED),
                            "ratio_history": tag(d["ratio_history"], ESTIMATE)}}
    if est.certified_lower is not None:
        body["certified_lower"] = tag(est.certified_lower, CERTIFIED)
    ok = est.consistent()
    body["consistent_with_certificate"] = ok
    return ok, body, {}


def _initial(f0, chain, scale: float, rng) -> np.ndarray:
    if isinstance(f0, list):
        return np.asarray(f0, dtype=float)
    if f0 == "random":
        return np.exp(scale * rng.normal(size=chain.size))
    if f0 == "constant":
        return np.ones(chain.size)
    if f0 == "gap":
        phi = gap_eigenfunction(chain.gen, chain.pi)
        return 1.0 + scale * phi / np.abs(phi).max()
    raise ConfigError(f"f0 must be 'random', 'constant', 'gap' or a list, got {f0!r}")


def task_evolve(spec: ModelSpec, task: dict, seed: int):
    chain = build_chain(spec)
    rng = np.random.default_rng(seed)
    scale = float(task.get("f0_scale", 1.0 if task.get("f0", "random") == "random" else 0.5))
    f0 = _initial(task.get("f0", "random"), chain, scale, rng)
    times = np.linspace(0.0, float(task.get("t_max", 5.0)), int(task.get("grid", 101)))
    traj = evolve(chain.gen, chain.pi, f0, times)
    cert = certified_kappa(spec)
    constant = task.get("constant", "certified")
    if constant == "certified":
        constant = cert.kappa if cert.certified else None
        ctag = CERTIFIED
    else:
        constant = float(constant)
        ctag = PARAMETER
    check = task.get("check", "both" if constant else "none")
    reports = [monotonicity_check(traj)]
    if constant and check in ("mlsi", "both"):
        reports.append(entropy_decay_check(traj, constant, "mlsi"))
    if constant and check in ("kappa", "both"):
        reports.append(entropy_decay_check(traj, constant, "kappa"))
    if cert.certified:
        reports.append(convexity_check(traj))
    ok = all(r.ok for r in reports)
    body = {"constant": tag(constant, ctag) if constant else None,
            "checks": [tag(r.as_dict(), COMPUTED) for r in reports],
            "final_entropy": tag(traj.ent[-1], COMPUTED),
            "initial_entropy": tag(traj.ent[0], COMPUTED),
            "diagnostics": tag({k: v for k, v in traj.diagnostics.items() if k != "method"}, COMPUTED),
            "method": traj.diagnostics["method"]}
    return ok, body, {"trajectory": traj}


def task_counterexample(spec: ModelSpec | None, task: dict, seed: int):
    ce = counterexample_42(float(task["c1"]), float(task["eps"]))
    consistent = ce.rel_diff <= 1e-12 and abs(ce.Q[0] - ce.closed_form_Q1) <= 1e-14 * max(abs(ce.Q[0]), 1)
    body = {"c1": tag(float(task["c1"]), PARAMETER), "eps": tag(float(task["eps"]), PARAMETER),
            "Q": tag(ce.Q, COMPUTED), "total": tag(ce.total, COMPUTED),
            "second_derivative_form": tag(ce.second_derivative, COMPUTED),
            "closed_form_Q1": tag(ce.closed_form_Q1, COMPUTED),
            "critical_c1": tag(ce.critical_c1, COMPUTED),
            "total_negative": bool(ce.total < 0), "consistent": bool(consistent)}
    return bool(consistent), body, {}


def task_smooth(spec: ModelSpec, task: dict, seed: int):
    n0 = int(task["n0"])
    res = perturbation_pipeline(spec, n0, float(task.get("C1", np.inf)), float(task.get("delta", 0.0)))
    _, lhs, rhs = increment_identity(spec.b, n0)
    ident = float(np.max(np.abs(lhs - rhs)) / max(np.abs(lhs).max(), 1e-300))
    ok = res.smoothed.delta1 > 0 and ident <= 1e-12
    body = {"n0": tag(n0, PARAMETER), "delta1": tag(res.smoothed.delta1, COMPUTED),
            "kappa_smoothed": tag(res.kappa_tilde, CERTIFIED),
            "ratio_bounds": tag([res.low, res.high], COMPUTED),
            "alpha_transferred": tag(res.alpha, CERTIFIED),
            "increment_identity_rel_error": tag(ident, COMPUTED),
            "flagged": tag(res.smoothed.flagged, COMPUTED),
            "b_tilde": tag(res.smoothed.b_tilde, COMPUTED),
            "hypotheses": tag(res.hypotheses.as_dict(), COMPUTED)}
    return bool(ok), body, {}


TASKS: dict[str, Callable] = {"certify": task_certify, "estimate": task_estimate,
                              "evolve": task_evolve, "counterexample": task_counterexample,
                              "smooth": task_smooth}


def _sweep_point(args):
    model, inner, seed = args
    spec = build_model(model)
    ok, body, _ = TASKS[inner["kind"]](spec, inner, seed)
    return ok, body


def task_sweep(model: dict, task: dict, seed: int, parallel: bool):
    name, values, inner = task["parameter"], task["values"], task["task"]
    jobs = []
    for i, v in enumerate(values):
        if "preset" in model:
            m = {**model, "params": {**model.get("params", {}), name: v}}
        else:
            m = {**model, name: v}
        validate_model(m)
        jobs.append((m, inner, task_seed(seed, i)))
    if parallel and len(jobs) > 1:
        with ProcessPoolExecutor() as pool:
            results = list(pool.map(_sweep_point, jobs))
    else:
        results = [_sweep_point(j) for j in jobs]
    points = [{"value": tag(v, PARAMETER), "seed": tag(j[2], PARAMETER), "ok": ok, "result": body}
              for v, j, (ok, body) in zip(values, jobs, results)]
    return all(ok for ok, _ in results), {"parameter": name, "task": inner["kind"], "points": points}, {}


# ---------------------------------------------------------------------------
# orchestration


def output_dir(config: RunConfig, override: str | None = None) -> Path:
    return Path(override or config.output or os.environ.get(OUTPUT_ENV) or DEFAULT_OUTPUT)


def run(config: RunConfig, output: str | Path | None = None, parallel_sweep: bool = False,
        echo: Callable[[str], None] | None = print) -> int:
    """Execute ``config``; returns the exit code."""
    out = output_dir(config, str(output) if output else None)
    out.mkdir(parents=True, exist_ok=True)
    needs_model = any(t["kind"] != "counterexample" for t in config.tasks)
    spec = build_model(config.model) if needs_model else None
    entries, all_ok = [], True
    for i, task in enumerate(config.tasks):
        seed = task_seed(config.seed, i)
        kind = task["kind"]
        if kind == "sweep":
            ok, body, extra = task_sweep(config.model, task, seed,
                                         parallel_sweep or bool(task.get("parallel", False)))
        else:
            ok, body, extra = TASKS[kind](spec, task, seed)
        files = []
        name = f"task{i:02d}_{kind}"
        if "json" in config.formats:
            doc = {"task": kind, "index": tag(i, PARAMETER), "ok": bool(ok),
                   "seed": tag(config.seed, PARAMETER), "task_seed": tag(seed, PARAMETER),
                   "version": __version__,
                   "model": tag(spec.describe(), PARAMETER) if spec is not None else None,
                   "config": tag(task, PARAMETER), "results": body}
            write_json(doc, out / f"{name}.json")
            files.append(f"{name}.json")
        if "trajectory" in extra and "csv" in config.formats:
            emit_trajectory_csv(extra["trajectory"], out / f"{name}.csv")
            files.append(f"{name}.csv")
        entries.append({"index": tag(i, PARAMETER), "task": kind, "ok": bool(ok), "files": files})
        all_ok &= bool(ok)
        if echo:
            echo(f"[{'PASS' if ok else 'FAIL'}] task {i} {kind}: {_summary(kind, body)}")
    manifest = {"version": __version__, "config_hash": config.digest(),
                "seed": tag(config.seed, PARAMETER), "ok": all_ok, "tasks": entries}
    write_json(manifest, out / "manifest.json")
    return EXIT_OK if all_ok else EXIT_FAILED


def _val(x):
    return x["value"] if isinstance(x, dict) and "value" in x else x


def _summary(kind: str, body: dict) -> str:
    if kind == "certify":
        return f"kind={body['certificate_kind']} kappa={_val(body['kappa']):.6g}"
    if kind == "estimate":
        return f"{body['constant']}={_val(body['value']):.6g}"
    if kind == "evolve":
        return f"final_entropy={_val(body['final_entropy']):.3e}"
    if kind == "counterexample":
        return (f"Q1={body['Q']['values'][0]:.6g} total={_val(body['total']):.6g} "
                f"negative={body['total_negative']}")
    if kind == "smooth":
        return f"delta1={_val(body['delta1']):.6g} alpha={_val(body['alpha_transferred']):.6g}"
    return f"{len(body['points'])} points over {body['parameter']}"


def summarize(directory: str | Path, echo: Callable[[str], None] = print) -> int:
    """Print one line per task recorded in a run directory."""
    import json

    d = Path(directory)
    manifest_path = d / "manifest.json"
    if not manifest_path.exists():
        raise ConfigError(f"no manifest.json in {d}")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    echo(f"version {manifest['version']} config {manifest['config_hash'][:12]} seed {_val(manifest['seed'])}")
    for e in manifest["tasks"]:
        body = {}
        js = [f for f in e["files"] if f.endswith(".json")]
        if js:
            body = json.loads((d / js[0]).read_text(encoding="utf-8"))["results"]
        line = _summary(e["task"], body) if body else ""
        echo(f"[{'PASS' if e['ok'] else 'FAIL'}] task {_val(e['index'])} {e['task']}: {line}")
    return EXIT_OK if manifest["ok"] else EXIT_FAILED


# ---------------------------------------------------------------------------
# argument parsing


def _param(text: str) -> tuple[str, Any]:
    if "=" not in text:
        raise argparse.ArgumentTypeError(f"expected key=value, got {text!r}")
    k, v = text.split("=", 1)
    try:
        value = ast.literal_eval(v)
    except (ValueError, SyntaxError):
        value = v
    return k.strip(), value


def _model_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--preset", help="model preset name")
    p.add_argument("--param", action="append", type=_param, default=[], metavar="KEY=VALUE",
                   help="preset parameter (repeatable)")
    p.add_argument("--config", help="TOML config; its model table is used")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", help=f"output directory (default ${OUTPUT_ENV} or {DEFAULT_OUTPUT})")
    p.add_argument("--formats", default="json,csv")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mlsi-bbe", description="Entropy-decay constants of reversible chains.")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="execute a config file")
    p.add_argument("config")
    p.add_argument("--output")
    p.add_argument("--parallel-sweep", action="store_true")

    p = sub.add_parser("certify", help="certified kappa")
    _model_args(p)
    _common(p)
    p.add_argument("--samples", type=int, default=50)

    p = sub.add_parser("estimate", help="numerical upper estimate of a constant")
    p.add_argument("constant", choices=("lsi", "mlsi", "kappa", "gap"))
    _model_args(p)
    _common(p)
    p.add_argument("--restarts", type=int)

    p = sub.add_parser("evolve", help="entropy trajectory and decay checks")
    _model_args(p)
    _common(p)
    p.add_argument("--f0", default="random", choices=("random", "constant", "gap"))
    p.add_argument("--f0-scale", type=float)
    p.add_argument("--t-max", type=float, default=5.0)
    p.add_argument("--grid", type=int, default=101)
    p.add_argument("--check", choices=("mlsi", "kappa", "both", "none"))
    p.add_argument("--constant", type=float)

    p = sub.add_parser("counterexample", help="three-site example with non-convex entropy decay")
    p.add_argument("c1", type=float)
    p.add_argument("eps", type=float)
    _common(p)

    p = sub.add_parser("smooth", help="smooth non-monotone death rates and transfer the constant")
    _model_args(p)
    _common(p)
    p.add_argument("--n0", type=int, required=True)
    p.add_argument("--C1", type=float)
    p.add_argument("--delta", type=float)

    p = sub.add_parser("sweep", help="repeat a task over values of one parameter")
    _model_args(p)
    _common(p)
    p.add_argument("--parameter", required=True)
    p.add_argument("--values", required=True, help="comma-separated values")
    p.add_argument("--task", required=True, choices=("certify", "estimate", "evolve", "smooth"))
    p.add_argument("--constant", default="mlsi")
    p.add_argument("--n0", type=int)
    p.add_argument("--parallel-sweep", action="store_true")

    p = sub.add_parser("report", help="summarize a run directory")
    p.add_argument("directory", nargs="?")
    return ap


def _model_from_args(args) -> dict[str, Any]:
    if args.config:
        return load_config(args.config).model
    if not args.preset:
        raise ConfigError("give --preset or --config")
    return validate_model({"preset": args.preset, "params": dict(args.param)})


def _config_from_args(args) -> RunConfig:
    cmd = args.command
    task: dict[str, Any] = {"kind": cmd}
    if cmd == "certify":
        task["samples"] = args.samples
    elif cmd == "estimate":
        task["constant"] = args.constant
        if args.restarts is not None:
            task["restarts"] = args.restarts
    elif cmd == "evolve":
        task.update(f0=args.f0, t_max=args.t_max, grid=args.grid)
        for k in ("f0_scale", "check", "constant"):
            if getattr(args, k) is not None:
                task[k] = getattr(args, k)
    elif cmd == "counterexample":
        task.update(c1=args.c1, eps=args.eps)
    elif cmd == "smooth":
        task["n0"] = args.n0
        if args.C1 is not None:
            task["C1"] = args.C1
        if args.delta is not None:
            task["delta"] = args.delta
    elif cmd == "sweep":
        inner: dict[str, Any] = {"kind": args.task}
        if args.task == "estimate":
            inner["constant"] = args.constant
        if args.task == "smooth":
            if args.n0 is None:
                raise ConfigError("sweep over smooth needs --n0")
            inner["n0"] = args.n0
        values = [_param(f"v={v}")[1] for v in args.values.split(",")]
        task = {"kind": "sweep", "parameter": args.parameter, "values": values, "task": inner,
                "parallel": bool(args.parallel_sweep)}
    validate_task(task)
    if cmd == "sweep" and not args.config:
        # the swept parameter may be required by the preset
        args.param = [p for p in args.param if p[0] != args.parameter] + [(args.parameter, values[0])]
    model = {"preset": "two_point"} if cmd == "counterexample" else _model_from_args(args)
    formats = tuple(f.strip() for f in args.formats.split(",") if f.strip())
    return RunConfig(model, [task], args.seed, None, formats)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "report":
            return summarize(args.directory or os.environ.get(OUTPUT_ENV) or DEFAULT_OUTPUT)
        if args.command == "run":
            config = load_config(args.config)
            return run(config, args.output, parallel_sweep=args.parallel_sweep)
        config = _config_from_args(args)
        return run(config, args.output)
    except (ConfigError, ModelError, CapacityError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
