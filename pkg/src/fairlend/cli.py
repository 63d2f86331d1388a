"""Command-line entry point: ``fairlend <command> [--config PATH] [flags]``.

Exit status is 0 on success, 2 on a configuration error and 1 on any other
failure; failures print a single ``error:`` line on stderr.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Callable, Sequence

from fairlend.config import RunConfig, load_run_config
from fairlend.datagen import Population, generate_population, split_population
from fairlend.errors import ConfigError
from fairlend.experiments import (
    efficiency_frontier,
    economic_sweep,
    feature_fairness_impact,
    find_optimal_threshold,
    frontier_to_csv,
    parallel_map,
    run_model_suite,
    threshold_sweep,
)
from fairlend.longterm import PolicyRecipe, run_simulation, traces_to_table
from fairlend.metrics import json_value, write_reports_csv
from fairlend.model import BASELINE_SCHEMA, UNAWARE_SCHEMA
from fairlend.policy import SUITE_NAMES, build_policy_suite

log = logging.getLogger("fairlend")

MODEL_ALIASES = {
    "baseline": "Baseline",
    "unawareness": "Fairness through Unawareness",
    "counterfactual": "Trained on Unbiased Labels",
}


def _u64(text: str) -> int:
    try:
        value = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def _positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return value


def _write_json(path: Path, data: dict) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _data(cfg: RunConfig) -> tuple[Population, Population, Population]:
    pop = generate_population(cfg.gen)
    train, test = split_population(pop, cfg.split_fraction, cfg.split_seed)
    return pop, train, test


def _provenance(cfg: RunConfig) -> dict:
    return {
        "config_digest": cfg.digest(),
        "base_seed": cfg.base_seed,
        "gen_seed": cfg.gen.seed,
        "split_seed": cfg.split_seed,
        "eval_labels": cfg.eval_labels,
    }


def cmd_generate(cfg: RunConfig, args: argparse.Namespace, out: Path) -> None:
    pop = generate_population(cfg.gen)
    path = out / "population.csv"
    pop.to_csv(path)
    _write_json(
        out / "population.provenance.json",
        {**_provenance(cfg), "n_applicants": len(pop), "population_sha256": _sha256(path)},
    )


def cmd_suite(cfg: RunConfig, args: argparse.Namespace, out: Path) -> None:
    _, train, test = _data(cfg)
    suite = build_policy_suite(train, cfg.hp, eo_labels=cfg.analysis.eo_labels)
    reports = run_model_suite(train, test, cfg.econ_default, cfg.hp, labels=cfg.eval_labels, suite=suite)
    write_reports_csv(reports, out / "suite.csv")
    frontier = efficiency_frontier(reports, cfg.analysis.weights)
    frontier_to_csv(frontier, out / "frontier.csv")
    compliance = {
        r.model: {
            attr: {
                "di_ratio": json_value(r.fairness[attr].di_ratio),
                "four_fifths_pass": r.fairness[attr].four_fifths_pass,
            }
            for attr in ("gender", "race")
        }
        for r in reports
    }
    _write_json(out / "suite.compliance.json", {**_provenance(cfg), "models": compliance})
    _write_json(
        out / "suite.summary.json",
        {
            **_provenance(cfg),
            "rows": len(reports),
            "profitable_models": [r.model for r in reports if r.profit.net_profit > 0],
            "best_by_profit_weight": {repr(f.profit_weight): f.model for f in frontier if f.is_best},
        },
    )


def cmd_sweep(cfg: RunConfig, args: argparse.Namespace, out: Path) -> None:
    _, train, test = _data(cfg)
    suite = build_policy_suite(train, cfg.hp, eo_labels=cfg.analysis.eo_labels)
    reports = economic_sweep(suite, test, cfg.grid, labels=cfg.eval_labels, workers=args.workers)
    write_reports_csv(reports, out / "sweep.csv")
    cells = []
    for econ in cfg.grid.cells():
        in_cell = [r for r in reports if r.econ == econ]
        best = max(in_cell, key=lambda r: r.profit.net_profit)
        cells.append(
            {
                "r": econ.interest_rate,
                "d": econ.default_loss_rate,
                "most_profitable": best.model,
                "net_profit": best.profit.net_profit,
                "profitable_models": [r.model for r in in_cell if r.profit.net_profit > 0],
            }
        )
    _write_json(out / "sweep.summary.json", {**_provenance(cfg), "rows": len(reports), "cells": cells})


def cmd_thresholds(cfg: RunConfig, args: argparse.Namespace, out: Path) -> None:
    _, train, test = _data(cfg)
    name = MODEL_ALIASES.get(args.model, args.model)
    if name not in SUITE_NAMES:
        raise ConfigError("--model", f"unknown model {args.model!r}")
    suite = build_policy_suite(train, cfg.hp, eo_labels=cfg.analysis.eo_labels)
    step = args.step if args.step is not None else cfg.analysis.threshold_step
    if not 0.0 < step <= 0.5:
        raise ConfigError("--step", "must lie in (0, 0.5]")
    curve = threshold_sweep(suite[name].model, test, cfg.econ_default, step, labels=cfg.eval_labels, workers=args.workers)
    curve.to_csv(out / "threshold_curve.csv")
    optima = {}
    for w in cfg.analysis.weights:
        t, s = find_optimal_threshold(curve, w)
        optima[repr(w.profit_weight)] = {"threshold": t, "score": s}
    max_profit = max(curve, key=lambda p: p.net_profit)
    _write_json(
        out / "threshold_curve.summary.json",
        {
            **_provenance(cfg),
            "model": name,
            "points": len(curve),
            "max_profit_threshold": max_profit.threshold,
            "max_net_profit": max_profit.net_profit,
            "optimal_by_profit_weight": optima,
        },
    )


def cmd_simulate(cfg: RunConfig, args: argparse.Namespace, out: Path) -> None:
    sim = cfg.sim if args.cycles is None else replace(cfg.sim, n_cycles=args.cycles)
    texts = args.policies.split(",") if args.policies else list(cfg.analysis.simulate_recipes)
    try:
        recipes = [PolicyRecipe.parse(t.strip()) for t in texts]
    except ValueError as exc:
        raise ConfigError("--policies", str(exc)) from None
    recipes = [replace(r, eo_labels=cfg.analysis.eo_labels) for r in recipes]
    pop = generate_population(cfg.gen)

    def one(recipe: PolicyRecipe):
        return run_simulation(pop, recipe.model_recipe(cfg.hp), recipe, sim)

    traces = dict(zip((r.name for r in recipes), parallel_map(one, recipes, args.workers)))
    (out / "simulation.csv").write_text(traces_to_table(traces))
    summary = {
        name: {
            "race_gap_by_cycle": t.gaps("race"),
            "gender_gap_by_cycle": t.gaps("gender"),
            "final_mean_credit": {g: t.value(sim.n_cycles, "race", g, "mean_credit_score") for g in ("A", "B")},
        }
        for name, t in traces.items()
    }
    _write_json(
        out / "simulation.summary.json",
        {**_provenance(cfg), "sim_seed": sim.seed, "n_cycles": sim.n_cycles, "recipes": summary},
    )


def cmd_impact(cfg: RunConfig, args: argparse.Namespace, out: Path) -> None:
    _, train, test = _data(cfg)
    schema = UNAWARE_SCHEMA if cfg.analysis.impact_schema == "unaware" else BASELINE_SCHEMA
    report = feature_fairness_impact(
        train,
        test,
        cfg.hp,
        schema,
        labels="observed",
        threshold=cfg.analysis.impact_threshold,
        workers=args.workers,
    )
    report.to_csv(out / "feature_impact.csv")
    _write_json(
        out / "feature_impact.summary.json",
        {
            **_provenance(cfg),
            "base_schema": list(schema.feature_names),
            "full_gap": report.full_gap,
            "largest_negative": {a: report.largest_negative(a) for a in ("gender", "race")},
        },
    )


COMMANDS: dict[str, tuple[Callable[[RunConfig, argparse.Namespace, Path], None], str]] = {
    "generate": (cmd_generate, "write population.csv and its provenance sidecar"),
    "suite": (cmd_suite, "compare the seven model/policy pairs at the default economy"),
    "sweep": (cmd_sweep, "evaluate the suite over the interest/default-loss grid"),
    "thresholds": (cmd_thresholds, "sweep a uniform threshold for one model"),
    "simulate": (cmd_simulate, "run the multi-cycle credit feedback simulation"),
    "impact": (cmd_impact, "leave-one-feature-out fairness impact"),
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument("--config", help="run config JSON (default: the shipped default config)")
    common.add_argument("--seed", type=_u64, help="base seed; re-derives all component seeds")
    common.add_argument("--out", help="output directory (overrides output_dir)")
    common.add_argument("--labels", choices=("true", "observed"), help="evaluation label source")
    common.add_argument("--workers", type=_positive_int, help="thread count for independent tasks")

    parser = argparse.ArgumentParser(prog="fairlend", description=__doc__.splitlines()[0], parents=[common])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text, parents=[common])
        if name == "thresholds":
            p.add_argument("--step", type=float, default=None, help="threshold grid step")
            p.add_argument("--model", default="baseline", help="baseline, unawareness, counterfactual or a suite row name")
        if name == "simulate":
            p.add_argument("--cycles", type=_positive_int, default=None, help="number of lending cycles")
            p.add_argument("--policies", default=None, help="comma-separated recipes, e.g. baseline,demographic_parity:race")
    return parser


def run(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    args.workers = getattr(args, "workers", 1)
    try:
        cfg = load_run_config(getattr(args, "config", None)).with_overrides(
            seed=getattr(args, "seed", None), out=getattr(args, "out", None), labels=getattr(args, "labels", None)
        )
        out = Path(cfg.output_dir)
        try:
            out.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise ConfigError("output_dir", f"cannot create {out}: {exc.strerror}") from None
        COMMANDS[args.command][0](cfg, args, out)
    except ConfigError as exc:
        print(f"error: config: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - single-line diagnostic for any runtime failure
        print(f"error: {type(exc).__name__}: {exc}".replace("\n", " "), file=sys.stderr)
        return 1
    return 0


def main(argv: Sequence[str] | None = None) -> None:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
