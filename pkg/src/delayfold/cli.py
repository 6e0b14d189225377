"""Command-line front end: simulate, compile, and verify subcommands.

Exit codes: 0 success / check passed, 1 check failed, 2 configuration
error, 3 numerical blowup.  All outputs land in the --out directory;
verify additionally renders one figure per check next to its CSV and
summary files.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import figures, reporting
from .config import ConfigError, RunConfig, build_coupling, build_problem, load_config
from .dde import History, HistoryRequiredError, NodeGrid, NumericalBlowupError
from .modulation import FEEDFORWARD, UnrealizableWeightsError
from .network import forward_map_limit, output_layer
from .reporting import read_matrix
from .verify import (
    GENERAL,
    MAPLIMIT,
    SEMILINEAR,
    OracleFailureError,
    SuiteReport,
    check_dde_vs_network,
    convergence_base_problem,
    equivalence_suite,
    history_independence_check,
    map_limit_sweep,
    random_problem,
    theta_convergence_sweep,
    topology_check,
)

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_CONFIG = 2
EXIT_BLOWUP = 3

CHECKS = ("equivalence", "maplimit", "convergence", "history", "topology")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="delayfold",
        description="Emulate coupled-map networks with a single delay system "
                    "and verify the equivalence.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="configuration file")
        p.add_argument("--out", default=".", help="output directory (default: current)")
        p.add_argument("--seed", type=int, default=None,
                       help="override the seed from the config")

    simulate = sub.add_parser("simulate", help="integrate the configured system")
    common(simulate)
    simulate.add_argument("--emit-weights", action="store_true",
                          help="also write the assembled weight matrices")

    compile_ = sub.add_parser("compile",
                              help="convert between weights and modulation tables")
    common(compile_)

    verify = sub.add_parser("verify", help="run one verification check")
    common(verify)
    verify.add_argument("--check", required=True, choices=CHECKS,
                        help="which check to run")
    verify.add_argument("--substeps", type=int, default=None,
                        help="reference substep baseline for the convergence check")
    return parser


def _report_violations(validation, allow=()) -> list[str]:
    messages = []
    for v in validation.violations:
        if v.prop in allow:
            continue
        label = f"Property ({v.prop})" if v.prop != "shape" else "Shape"
        messages.append(f"{label} violated at {v.location}: {v.detail}")
    return messages


def _fail_config(messages) -> int:
    for message in messages:
        print(f"delayfold: configuration error: {message}", file=sys.stderr)
    return EXIT_CONFIG


def cmd_simulate(cfg: RunConfig, args, out: Path) -> int:
    problem, coupling = build_problem(cfg)
    messages = _report_violations(coupling.validation)
    if messages:
        return _fail_config(messages)

    yhat = None
    if cfg.scheme == MAPLIMIT:
        if problem.network is None or problem.u is None:
            raise ConfigError("the map limit needs [input] weights and vector")
        states, yhat = forward_map_limit(problem.network, problem.u)
        node_grid = NodeGrid(cfg.grid, states, cfg.x0)
    else:
        node_grid = problem.run_dde()
        if cfg.mode == FEEDFORWARD:
            output_weights = None
            if problem.network is not None:
                output_weights = problem.network.output_weights
            elif cfg.output_weights_path is not None:
                output_weights = read_matrix(cfg.output_weights_path)
            if output_weights is not None:
                yhat = output_layer(node_grid.values[-1], output_weights,
                                    cfg.output_activation)

    reporting.write_node_grid(out / "nodes.csv", node_grid)
    if yhat is not None:
        reporting.write_output_vector(out / "output.csv", yhat)
    if args.emit_weights:
        if cfg.mode == FEEDFORWARD:
            for i, W in enumerate(coupling.hidden_weights):
                reporting.write_matrix(out / f"weights_{i + 2:02d}.csv", W)
        else:
            reporting.write_matrix(out / "weights_internal.csv",
                                   coupling.internal_weights)
    return EXIT_OK


def cmd_compile(cfg: RunConfig, args, out: Path) -> int:
    coupling = build_coupling(cfg)
    messages = _report_violations(coupling.validation)
    if messages:
        return _fail_config(messages)

    if coupling.from_weights:
        reporting.write_profile(out / "profile.csv", coupling.profile, coupling.delays)
        if cfg.mode == FEEDFORWARD:
            reporting.write_matrix(out / "biases.csv", coupling.biases)
    else:
        if cfg.mode == FEEDFORWARD:
            for i, W in enumerate(coupling.hidden_weights):
                reporting.write_matrix(out / f"weights_{i + 2:02d}.csv", W)
        else:
            reporting.write_matrix(out / "weights_internal.csv",
                                   coupling.internal_weights)
    return EXIT_OK


def _verify_equivalence(cfg: RunConfig, args, out: Path) -> bool:
    if cfg.scheme == MAPLIMIT:
        raise ConfigError("the equivalence check needs scheme general or semilinear")
    tolerance = cfg.verify_float("tolerance", 1e-12)
    if cfg.has_coupling:
        problem, coupling = build_problem(cfg)
        messages = _report_violations(coupling.validation)
        if messages:
            raise ConfigError("; ".join(messages))
        if cfg.mode == FEEDFORWARD:
            if problem.network is None:
                raise ConfigError("the equivalence check needs [input] weights")
            if cfg.scheme == SEMILINEAR and problem.u is None:
                raise ConfigError(
                    "the semilinear equivalence check needs an [input] vector"
                )
        report = check_dde_vs_network(problem, tolerance)
        suite = SuiteReport(tolerance=tolerance, seeds=[cfg.seed],
                            reports=[report], passed=report.passed)
    else:
        count = cfg.verify_int("count", 20)
        suite = equivalence_suite(
            cfg.seed, count, mode=cfg.mode, scheme=cfg.scheme, tolerance=tolerance,
            max_nodes=cfg.grid.nodes_per_layer, max_layers=cfg.grid.segment_count,
        )
    reporting.write_suite_report(out / "equivalence_report.csv", suite)
    reporting.write_summary(out / "equivalence_summary.txt", {
        "check": "equivalence",
        "mode": cfg.mode,
        "scheme": cfg.scheme,
        "tolerance": suite.tolerance,
        "cases": len(suite.reports),
        "seed": cfg.seed,
        "worst_max_rel_error": suite.worst,
        "passed": suite.passed,
    })
    figures.suite_figure(suite, out / "equivalence.png",
                         f"DDE vs network ({cfg.mode}, {cfg.scheme})")
    return suite.passed


def _verify_maplimit(cfg: RunConfig, args, out: Path) -> bool:
    if cfg.semilinear is None:
        raise ConfigError("the map-limit check requires a [semilinear] section")
    alpha = cfg.semilinear.alpha
    raw_thetas = cfg.verify_list("thetas", [2.0, 4.0, 6.0, 8.0])
    thetas = [t / alpha for t in raw_thetas]
    report = map_limit_sweep(
        alpha, thetas, seed=cfg.seed,
        nodes=cfg.grid.nodes_per_layer, layers=cfg.grid.segment_count,
        nonlinearity=cfg.semilinear.nonlinearity,
        slope_tolerance=cfg.verify_float("slope_tolerance", 0.1),
    )
    reporting.write_sweep_report(out / "maplimit_sweep.csv", report)
    reporting.write_summary(out / "maplimit_summary.txt", {
        "check": "maplimit",
        "alpha": alpha,
        "seed": cfg.seed,
        "slope": report.slope if report.slope is not None else "exact",
        "expected_slope": -alpha,
        "slope_tolerance": report.details.get("slope_tolerance", 0.1),
        "residual": report.residual if report.residual is not None else 0.0,
        "span": report.span if report.span is not None else 0.0,
        "passed": report.passed,
    })
    figures.sweep_figure(report, out / "maplimit.png",
                         f"map-limit error decay (alpha = {alpha:g})", "theta")
    return report.passed


def _verify_convergence(cfg: RunConfig, args, out: Path) -> bool:
    if cfg.semilinear is None:
        raise ConfigError("the convergence check requires a [semilinear] section")
    substeps = args.substeps if args.substeps else cfg.verify_int("substeps", 4096)
    counts = [int(v) for v in cfg.verify_list("node_counts", [8.0, 16.0, 32.0, 64.0])]
    base = convergence_base_problem(
        seed=cfg.seed, nodes=cfg.grid.nodes_per_layer,
        segments=cfg.grid.segment_count, params=cfg.semilinear,
    )
    try:
        report = theta_convergence_sweep(
            base, counts, substeps=substeps,
            min_order=cfg.verify_float("min_order", 0.9),
        )
    except ValueError as err:
        raise ConfigError(str(err)) from err
    reporting.write_sweep_report(out / "convergence_sweep.csv", report)
    reporting.write_summary(out / "convergence_summary.txt", {
        "check": "convergence",
        "base_nodes": cfg.grid.nodes_per_layer,
        "node_counts": ",".join(str(c) for c in sorted(counts)),
        "seed": cfg.seed,
        "order": report.slope if report.slope is not None else "exact",
        "min_order": report.details.get("min_order", 0.9),
        "certified_substeps": report.details.get("certified_substeps", 0),
        "residual": report.residual if report.residual is not None else 0.0,
        "passed": report.passed,
    })
    figures.sweep_figure(report, out / "convergence.png",
                         "exact-step scheme versus reference", "theta")
    return report.passed


def _verify_history(cfg: RunConfig, args, out: Path) -> bool:
    if cfg.has_coupling:
        problem, coupling = build_problem(cfg)
        # a first-segment override (Property IV violation) is the negative
        # control this check exists for; anything else is still fatal
        messages = _report_violations(coupling.validation, allow=("IV",))
        if messages:
            raise ConfigError("; ".join(messages))
    else:
        scheme = cfg.scheme if cfg.scheme in (GENERAL, SEMILINEAR) else SEMILINEAR
        problem = random_problem(cfg.seed, mode=cfg.mode, scheme=scheme,
                                 max_nodes=cfg.grid.nodes_per_layer,
                                 max_layers=cfg.grid.segment_count)
    depth = problem.delays.max_delay
    x0 = problem.history.initial_value
    h1 = History(initial_value=x0, table=np.zeros(depth))
    h2 = History(initial_value=x0,
                 table=np.random.default_rng(cfg.seed).normal(size=depth))
    report = history_independence_check(problem, h1, h2)
    diff = np.abs(replace(problem, history=h1).run_dde().values
                  - replace(problem, history=h2).run_dde().values)
    reporting.write_summary(out / "history_summary.txt", {
        "check": "history",
        "seed": cfg.seed,
        "max_abs_difference": report.max_abs_error,
        "argmax_segment": report.location.segment,
        "argmax_node": report.location.node,
        "passed": report.passed,
    })
    figures.difference_figure(diff, out / "history.png",
                              "history sensitivity (must be zero)")
    return report.passed


def _verify_topology(cfg: RunConfig, args, out: Path) -> bool:
    report = topology_check(max_nodes=cfg.grid.nodes_per_layer, seed=cfg.seed)
    failures = sum(1 for e in report.entries if not e.passed)
    reporting.write_topology_report(out / "topology_report.csv", report)
    reporting.write_summary(out / "topology_summary.txt", {
        "check": "topology",
        "max_nodes": cfg.grid.nodes_per_layer,
        "entries": len(report.entries),
        "failures": failures,
        "passed": report.passed,
    })
    figures.topology_figure(report, out / "topology.png")
    return report.passed


_VERIFY_DISPATCH = {
    "equivalence": _verify_equivalence,
    "maplimit": _verify_maplimit,
    "convergence": _verify_convergence,
    "history": _verify_history,
    "topology": _verify_topology,
}


def cmd_verify(cfg: RunConfig, args, out: Path) -> int:
    passed = _VERIFY_DISPATCH[args.check](cfg, args, out)
    if not passed:
        print(f"delayfold: check {args.check!r} failed", file=sys.stderr)
    return EXIT_OK if passed else EXIT_CHECK_FAILED


_COMMANDS = {
    "simulate": cmd_simulate,
    "compile": cmd_compile,
    "verify": cmd_verify,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.seed = args.seed
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        return _COMMANDS[args.command](cfg, args, out)
    except (ConfigError, UnrealizableWeightsError, HistoryRequiredError) as err:
        print(f"delayfold: configuration error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalBlowupError as err:
        print(f"delayfold: numerical blowup: {err}", file=sys.stderr)
        return EXIT_BLOWUP
    except OracleFailureError as err:
        print(f"delayfold: {err}", file=sys.stderr)
        return EXIT_CHECK_FAILED


if __name__ == "__main__":
    sys.exit(main())
