"""Command-line interface: solve, pipeline, bench, and eval subcommands.

All behavior is controlled by flags and config files (no environment
variables), and every command is deterministic for fixed inputs and seeds:
reports carry no timestamps, JSON keys are sorted, and matrices render with
17 significant digits.

Exit status: 0 on success, 2 for malformed inputs or configuration, 3 for a
numeric solver failure.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import io as caot_io
from .core import NumericError
from .evaluation import accuracy, nmi
from .labeling import labels_from_plan
from .losses import Temperatures
from .pipeline import Dataset, RunConfig, pseudo_label_bench, run_pipeline, synth_dataset
from .solver import CaotParams, OtProblem, caot_solve

_EXIT_OK = 0
_EXIT_INPUT = 2
_EXIT_NUMERIC = 3


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="caot",
        description="Adaptive optimal-transport pseudo-labeling toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_solve = sub.add_parser("solve", help="solve one transport instance from files")
    p_solve.add_argument("probs", help="probability matrix file (CSV or binary), rows sum to 1")
    p_solve.add_argument("--similarity", help="optional N x N similarity matrix file")
    p_solve.add_argument("--out", default=".", help="output directory")
    p_solve.add_argument("--eps1", type=float, default=1.0)
    p_solve.add_argument("--eps2", type=float, default=100.0)
    p_solve.add_argument("--eps3", type=float, default=25.0)
    p_solve.add_argument("--t1", type=int, default=10)
    p_solve.add_argument("--t2", type=int, default=10)
    p_solve.add_argument("--newton-iters", type=int, default=10)
    p_solve.add_argument("--b-init", choices=("uniform", "random"), default="uniform")
    p_solve.add_argument("--seed", type=int, default=0)

    for name, needs_labels in (("pipeline", False), ("bench", True)):
        p = sub.add_parser(name, help=f"run the {name} on files or synthetic data")
        p.add_argument("--synth", help="synthetic spec, e.g. k=5,sizes=100x5,dim=16,sep=8,noise=0.5,seed=1")
        p.add_argument("--v0", help="anchor embeddings file")
        p.add_argument("--v1", help="first augmented view file")
        p.add_argument("--v2", help="second augmented view file")
        p.add_argument("--labels", help="ground-truth labels file" + ("" if needs_labels else " (optional)"))
        p.add_argument("--k", type=int, help="cluster count (required with file input)")
        p.add_argument("--config", help="key=value config file")
        p.add_argument("--out", default=".", help="output directory")

    p_eval = sub.add_parser("eval", help="score predicted labels against ground truth")
    p_eval.add_argument("true_labels")
    p_eval.add_argument("pred_labels")
    p_eval.add_argument("--out", default=".", help="output directory")
    return parser


def _parse_sizes(text: str) -> list[int]:
    sizes: list[int] = []
    for term in text.split("+"):
        term = term.strip()
        if "x" in term:
            size, _, reps = term.partition("x")
            sizes.extend([int(size)] * int(reps))
        else:
            sizes.append(int(term))
    return sizes


def _parse_synth_spec(spec: str) -> Dataset:
    fields = {}
    for part in spec.split(","):
        part = part.strip()
        if not part:
            continue
        if "=" not in part:
            raise caot_io.ParseError(f"synth spec:1: expected key=value, got {part!r}")
        key, _, value = part.partition("=")
        fields[key.strip()] = value.strip()
    known = {"k", "sizes", "dim", "sep", "noise", "seed"}
    unknown = set(fields) - known
    if unknown:
        raise caot_io.ParseError(
            f"synth spec:1: unknown keys {sorted(unknown)}; valid keys: {sorted(known)}"
        )
    missing = {"k", "sizes", "dim", "sep"} - set(fields)
    if missing:
        raise caot_io.ParseError(f"synth spec:1: missing keys {sorted(missing)}")
    try:
        k = int(fields["k"])
        sizes = _parse_sizes(fields["sizes"])
        dim = int(fields["dim"])
        sep = float(fields["sep"])
        noise = float(fields.get("noise", "0.5"))
        seed = int(fields.get("seed", "0"))
    except ValueError as exc:
        raise caot_io.ParseError(f"synth spec:1: {exc}") from None
    return synth_dataset(k=k, sizes=sizes, dim=dim, separation=sep, noise=noise, seed=seed)


def _resolve_run_config(config_path: str | None) -> tuple[RunConfig, dict]:
    overrides = caot_io.read_config(config_path) if config_path else {}
    caot_params = CaotParams(
        eps1=overrides.get("eps1", 1.0),
        eps2=overrides.get("eps2", 100.0),
        eps3=overrides.get("eps3", 25.0),
        t1=overrides.get("t1", 10),
        t2=overrides.get("t2", 10),
        newton_iters=overrides.get("newton_iters", 10),
        armijo_c1=overrides.get("armijo_c1", 1e-4),
        armijo_shrink=overrides.get("armijo_shrink", 0.5),
        marginal_tol=overrides.get("marginal_tol", 1e-9),
        prob_floor=overrides.get("prob_floor", 1e-30),
    )
    config = RunConfig(
        e_total=overrides.get("e_total", 200),
        e_warm=overrides.get("e_warm", 60),
        batch=overrides.get("batch", 200),
        lam=overrides.get("lambda", 10.0),
        temps=Temperatures(
            tau_a=overrides.get("tau_a", 1.0), tau_i=overrides.get("tau_i", 1.0)
        ),
        caot=caot_params,
        lr=overrides.get("lr", 0.05),
        seed=overrides.get("seed", 0),
        grad_mode=overrides.get("grad_mode", "finite-difference"),
        d2=overrides.get("d2", 8),
    )
    resolved = {
        "e_total": config.e_total,
        "e_warm": config.e_warm,
        "batch": config.batch,
        "lambda": config.lam,
        "tau_a": config.temps.tau_a,
        "tau_i": config.temps.tau_i,
        "lr": config.lr,
        "seed": config.seed,
        "grad_mode": config.grad_mode,
        "d2": config.d2,
        "eps1": caot_params.eps1,
        "eps2": caot_params.eps2,
        "eps3": caot_params.eps3,
        "t1": caot_params.t1,
        "t2": caot_params.t2,
        "newton_iters": caot_params.newton_iters,
        "armijo_c1": caot_params.armijo_c1,
        "armijo_shrink": caot_params.armijo_shrink,
        "marginal_tol": caot_params.marginal_tol,
        "prob_floor": caot_params.prob_floor,
    }
    return config, resolved


def _load_dataset(args) -> Dataset:
    if args.synth:
        return _parse_synth_spec(args.synth)
    if not (args.v0 and args.v1 and args.v2):
        raise caot_io.ParseError("input:1: provide --synth or all of --v0/--v1/--v2")
    if args.k is None:
        raise caot_io.ParseError("input:1: --k is required with file input")
    v0 = caot_io.read_matrix(args.v0)
    v1 = caot_io.read_matrix(args.v1)
    v2 = caot_io.read_matrix(args.v2)
    y = caot_io.read_labels(args.labels) if args.labels else None
    return Dataset(v0=v0, v1=v1, v2=v2, y_true=y, k=args.k)


def _cmd_solve(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    p = caot_io.read_matrix(args.probs)
    s = caot_io.read_matrix(args.similarity) if args.similarity else None
    params = CaotParams(
        eps1=args.eps1,
        eps2=args.eps2,
        eps3=args.eps3,
        t1=args.t1,
        t2=args.t2,
        newton_iters=args.newton_iters,
    )
    prob = OtProblem.from_probabilities(p, s)
    plan = caot_solve(prob, params, b_init=args.b_init, seed=args.seed)
    labels = labels_from_plan(plan.q)

    caot_io.write_matrix_csv(out / "coupling.csv", plan.q)
    caot_io.write_matrix_csv(out / "cluster_marginal.csv", plan.b)
    caot_io.write_matrix_csv(out / "objective_trace.csv", np.asarray(plan.objective_trace))
    caot_io.write_labels(out / "labels.txt", labels.labels)
    caot_io.write_report(
        out / "report.json",
        {
            "n": int(p.shape[0]),
            "k": int(p.shape[1]),
            "params": {
                "eps1": params.eps1,
                "eps2": params.eps2,
                "eps3": params.eps3,
                "t1": params.t1,
                "t2": params.t2,
                "newton_iters": params.newton_iters,
                "b_init": args.b_init,
                "seed": args.seed,
            },
            "objective_trace": [float(v) for v in plan.objective_trace],
            "cluster_marginal": [float(v) for v in plan.b],
            "row_marginal_max_err": float(np.abs(plan.q.sum(axis=1) - prob.a).max()),
        },
    )
    return _EXIT_OK


def _cmd_pipeline(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    data = _load_dataset(args)
    config, resolved = _resolve_run_config(args.config)
    report = run_pipeline(data, config)
    payload = report.to_dict()
    payload["config"] = resolved
    caot_io.write_report(out / "report.json", payload)
    caot_io.write_labels(out / "labels.txt", report.final_labels)
    (out / "resolved_config.txt").write_text(
        caot_io.format_config(resolved), encoding="utf-8"
    )
    return _EXIT_OK


def _cmd_bench(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    data = _load_dataset(args)
    if data.y_true is None:
        raise caot_io.ParseError("input:1: bench requires ground-truth labels")
    config, resolved = _resolve_run_config(args.config)
    result = pseudo_label_bench(data, config)
    payload = result.to_dict()
    payload["config"] = resolved
    caot_io.write_report(out / "report.json", payload)
    for name, coupling in result.couplings.items():
        # Figure layout: rows are clusters, columns the class-grouped samples.
        caot_io.write_matrix_csv(out / f"coupling_{name}.csv", coupling.T)
    (out / "resolved_config.txt").write_text(
        caot_io.format_config(resolved), encoding="utf-8"
    )
    return _EXIT_OK


def _cmd_eval(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    y_true = caot_io.read_labels(args.true_labels)
    y_pred = caot_io.read_labels(args.pred_labels)
    if y_true.size != y_pred.size:
        raise caot_io.ParseError(
            f"{args.pred_labels}:1: label count {y_pred.size} does not match {y_true.size}"
        )
    acc = accuracy(y_true, y_pred)
    score = nmi(y_true, y_pred)
    print(f"ACC {acc:.4f}")
    print(f"NMI {score:.4f}")
    caot_io.write_report(out / "metrics.json", {"acc": acc, "nmi": score})
    return _EXIT_OK


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code else _EXIT_OK
    handlers = {
        "solve": _cmd_solve,
        "pipeline": _cmd_pipeline,
        "bench": _cmd_bench,
        "eval": _cmd_eval,
    }
    try:
        return handlers[args.command](args)
    except (caot_io.ParseError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _EXIT_INPUT
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _EXIT_INPUT
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return _EXIT_NUMERIC


def main_entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    main_entry()
