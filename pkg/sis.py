"""
Command-line front end for heterogeneous SIS vaccination models.

Every subcommand reads JSON inputs, prints a JSON document on stdout and logs diagnostics on stderr.
Run `python3 sis.py --help` for the list of subcommands.

Exit codes: 0 success, 1 check failed, 2 invalid input, 3 solver failure, 4 budget exceeded.
"""
import argparse
import json
import logging
import sys
from dataclasses import dataclass, field

import numpy as np

from coupling import CONJUGACY_TOL, check_model_conjugacy, conjugate, load_coupling, save_coupling
from dynamics import EQUILIBRIUM_TOL, EquilibriumError, StepSizeError, maximal_equilibrium
from model import load_model, make_strategy, model_to_dict, normalize, save_model
from next_generation import SPECTRAL_TOL, SpectralConvergenceError, next_gen_matrix, spectral_radius
from pareto import (FRONTIER_KINDS, GRID_BUDGET, LOSS_KINDS, BudgetExceededError, GridResolution,
                    enumerate_outcomes, frontier, polish_frontier, write_frontier_csv)
from reduction import REDUCTION_TOL, coarsest_reduction, load_partition, near_misses, reduce

logger = logging.getLogger("sis")

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_INVALID_INPUT = 2
EXIT_SOLVER_FAILURE = 3
EXIT_BUDGET = 4


@dataclass(frozen=True)
class RunConfig:
    subcommand: str
    inputs: tuple
    tolerances: dict = field(default_factory=dict)
    m: int = 10
    loss_kind: str = "Re"
    kind: str = "pareto"
    output: str = None
    workers: int = 1
    budget: int = GRID_BUDGET

    def __post_init__(self):
        for name, value in self.tolerances.items():
            if not value > 0:
                raise ValueError("tolerance %s must be positive, got %r" % (name, value))
        if self.m < 1:
            raise ValueError("grid resolution m must be at least 1, got %d" % self.m)
        if self.workers < 1:
            raise ValueError("workers must be at least 1, got %d" % self.workers)

    @classmethod
    def from_args(cls, args):
        tolerances = {"spectral": args.tol_spectral, "equilibrium": args.tol_equilibrium,
                      "conjugacy": args.tol_conjugacy, "reduce": args.tol_reduce}
        inputs = tuple(getattr(args, name) for name in ("model", "model1", "model2", "eta", "coupling", "f")
                       if getattr(args, name, None) is not None)
        return cls(subcommand=args.command, inputs=inputs, tolerances=tolerances,
                   m=getattr(args, "m", 10), loss_kind=getattr(args, "loss", "Re"),
                   kind=getattr(args, "kind", "pareto"), output=getattr(args, "output", None),
                   workers=args.workers, budget=getattr(args, "budget", GRID_BUDGET))


def load_vector(path, key):
    """
    Load a vector from a JSON file holding either an array or an object {key: array}.
    """
    with open(path, encoding="utf-8") as fin:
        data = json.load(fin)
    if isinstance(data, dict):
        if set(data) != {key}:
            raise ValueError("%s must hold an array or an object with the single key '%s'" % (path, key))
        data = data[key]
    values = np.array(data, dtype=np.float64)
    if values.ndim != 1:
        raise ValueError("%s must hold a flat array of numbers" % path)
    return values


def emit(data):
    print(json.dumps(data))


def cmd_r0(args, config):
    model = load_model(args.model)
    result = spectral_radius(next_gen_matrix(model), tol=config.tolerances["spectral"])
    emit({"r0": result.rho, "right_eigvec": result.right.tolist(), "left_eigvec": result.left.tolist()})
    return EXIT_OK


def cmd_re(args, config):
    model = load_model(args.model)
    eta = make_strategy(load_vector(args.eta, "eta"), model.n)
    result = spectral_radius(next_gen_matrix(model, eta), tol=config.tolerances["spectral"])
    emit({"re": result.rho, "right_eigvec": result.right.tolist(), "left_eigvec": result.left.tolist()})
    return EXIT_OK


def cmd_equilibrium(args, config):
    model = load_model(args.model)
    eta = make_strategy(load_vector(args.eta, "eta"), model.n)
    eq = maximal_equilibrium(model, eta, tol=config.tolerances["equilibrium"],
                             spectral_tol=config.tolerances["spectral"])
    data = {"g": eq.g.tolist(), "residual": eq.residual,
            "infected_fraction": float(np.sum(eq.g * eta * model.weights)),
            "method": eq.method, "iterations": eq.iterations}
    if eq.warning is not None:
        data["warning"] = eq.warning
    emit(data)
    return EXIT_OK


def cmd_frontier(args, config):
    model = load_model(args.model)
    partition = load_partition(args.partition) if args.partition else None
    if partition is not None and partition.n != model.n:
        raise ValueError("partition covers %d features, model has %d" % (partition.n, model.n))
    outcomes = enumerate_outcomes(model, config.loss_kind, config.m, budget=config.budget,
                                  workers=config.workers, partition=partition,
                                  spectral_tol=config.tolerances["spectral"],
                                  equilibrium_tol=config.tolerances["equilibrium"])
    dims = model.n if partition is None else partition.n_blocks
    front = frontier(outcomes, config.kind, grid_resolution=GridResolution(config.m, dims, partition is not None))
    if args.polish:
        front = polish_frontier(model, front, config.m, workers=config.workers,
                                spectral_tol=config.tolerances["spectral"],
                                equilibrium_tol=config.tolerances["equilibrium"])
    write_frontier_csv(front, config.output)
    logger.info("Wrote %d frontier points to %s", len(front.points), config.output)
    emit({"kind": front.kind, "loss_kind": front.loss_kind, "m": config.m, "strategies": len(outcomes),
          "points": len(front.points), "polished": front.polished, "output": config.output})
    return EXIT_OK


def cmd_reduce(args, config):
    model = load_model(args.model)
    tol = config.tolerances["reduce"]
    partition = coarsest_reduction(model, tol=tol)
    reduced, coupling = reduce(model, partition, tol=tol)
    save_model(reduced, args.out_model)
    save_coupling(coupling, args.out_coupling)
    misses = near_misses(model, partition, tol=tol)
    for miss in misses:
        logger.warning("Blocks %d and %d are near-mergeable: %s deviates by %.3g",
                       miss.blocks[0], miss.blocks[1], miss.quantity, miss.deviation)
    emit({"n": model.n, "n_reduced": reduced.n, "blocks": [list(b) for b in partition.blocks],
          "block_of": partition.block_of.tolist(),
          "near_misses": [{"blocks": list(m.blocks), "deviation": m.deviation, "quantity": m.quantity}
                          for m in misses]})
    return EXIT_OK


def cmd_couple_check(args, config):
    model1 = load_model(args.model1)
    model2 = load_model(args.model2)
    coupling = load_coupling(args.coupling, model1, model2)
    report = check_model_conjugacy(coupling, model1, model2, tol=config.tolerances["conjugacy"])
    emit(report.to_dict())
    return EXIT_OK if report.passed else EXIT_CHECK_FAILED


def cmd_conjugate(args, config):
    model1 = load_model(args.model1) if args.model1 else None
    model2 = load_model(args.model2) if args.model2 else None
    coupling = load_coupling(args.coupling, model1, model2)
    f = load_vector(args.f, "f")
    emit({"side": args.side, "conjugate": conjugate(coupling, f, side=args.side).tolist()})
    return EXIT_OK


def cmd_normalize(args, config):
    normalized = normalize(load_model(args.model))
    if config.output:
        save_model(normalized, config.output)
    emit(model_to_dict(normalized))
    return EXIT_OK


COMMANDS = {"r0": cmd_r0, "re": cmd_re, "equilibrium": cmd_equilibrium, "frontier": cmd_frontier,
            "reduce": cmd_reduce, "couple-check": cmd_couple_check, "conjugate": cmd_conjugate,
            "normalize": cmd_normalize}


def build_parser():
    parser = argparse.ArgumentParser(description="Vaccination strategies for heterogeneous SIS models.")
    parser.add_argument("--tol-spectral", type=float, default=SPECTRAL_TOL,
                        help="Power iteration tolerance.")
    parser.add_argument("--tol-equilibrium", type=float, default=EQUILIBRIUM_TOL,
                        help="Maximal equilibrium tolerance.")
    parser.add_argument("--tol-conjugacy", type=float, default=CONJUGACY_TOL,
                        help="Absolute tolerance of the conjugacy checks.")
    parser.add_argument("--tol-reduce", type=float, default=REDUCTION_TOL,
                        help="Absolute tolerance when merging features.")
    parser.add_argument("--workers", type=int, default=1, help="Number of parallel workers (frontier only).")
    parser.add_argument("--verbose", action="store_true", help="Log debug messages.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("r0", help="Basic reproduction number and Perron vectors.")
    p.add_argument("model", type=str, help="Path to model JSON file.")

    p = sub.add_parser("re", help="Effective reproduction number of a strategy.")
    p.add_argument("model", type=str, help="Path to model JSON file.")
    p.add_argument("eta", type=str, help="Path to strategy JSON file.")

    p = sub.add_parser("equilibrium", help="Maximal equilibrium and infected fraction of a strategy.")
    p.add_argument("model", type=str, help="Path to model JSON file.")
    p.add_argument("eta", type=str, help="Path to strategy JSON file.")

    p = sub.add_parser("frontier", help="Grid Pareto or anti-Pareto frontier, written as CSV.")
    p.add_argument("model", type=str, help="Path to model JSON file.")
    p.add_argument("output", type=str, help="Path to output CSV file.")
    p.add_argument("--loss", choices=LOSS_KINDS, default="Re", help="Loss: R_e or infected fraction.")
    p.add_argument("--m", type=int, default=10, help="Grid resolution per feature.")
    p.add_argument("--kind", choices=FRONTIER_KINDS, default="pareto", help="Frontier kind.")
    p.add_argument("--budget", type=int, default=GRID_BUDGET, help="Largest number of grid strategies.")
    p.add_argument("--partition", type=str, default=None,
                   help="Partition JSON file: lay the grid on its blocks and lift it.")
    p.add_argument("--polish", action="store_true", help="Refine the frontier with steps of 1/m^2.")

    p = sub.add_parser("reduce", help="Merge identical features.")
    p.add_argument("model", type=str, help="Path to model JSON file.")
    p.add_argument("out_model", type=str, help="Path to output reduced model.")
    p.add_argument("out_coupling", type=str, help="Path to output coupling.")

    p = sub.add_parser("couple-check", help="Check that two coupled models have conjugate parameters.")
    p.add_argument("model1", type=str, help="Path to left model JSON file.")
    p.add_argument("model2", type=str, help="Path to right model JSON file.")
    p.add_argument("coupling", type=str, help="Path to coupling JSON file.")

    p = sub.add_parser("conjugate", help="Conjugate of a function through a coupling.")
    p.add_argument("coupling", type=str, help="Path to coupling JSON file.")
    p.add_argument("f", type=str, help="Path to function JSON file.")
    p.add_argument("--side", choices=("left", "right"), default="left", help="Side the function lives on.")
    p.add_argument("--model1", type=str, default=None, help="Left model (needed for phi couplings).")
    p.add_argument("--model2", type=str, default=None, help="Right model (needed for phi couplings).")

    p = sub.add_parser("normalize", help="Move cost density and recovery rates into weights and kernel.")
    p.add_argument("model", type=str, help="Path to model JSON file.")
    p.add_argument("--output", type=str, default=None, help="Path to output model JSON file.")
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(stream=sys.stderr, level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = RunConfig.from_args(args)
        return COMMANDS[args.command](args, config)
    except BudgetExceededError as e:
        logger.error("%s", e)
        return EXIT_BUDGET
    except (SpectralConvergenceError, EquilibriumError, StepSizeError) as e:
        logger.error("Solver failure: %s", e)
        return EXIT_SOLVER_FAILURE
    except (ValueError, OSError) as e:
        logger.error("Invalid input: %s", e)
        return EXIT_INVALID_INPUT


if __name__ == "__main__":
    sys.exit(main())
