"""Command line entry point: solve, bilevel and sweep."""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .bilevel import METHODS, ParamBox, optimize_params
from .equilibrium import EquilibriumResult, find_equilibrium
from .errors import MFTrafficError, ParseError, SchemaError, ValidationError
from .mass import MassTrajectory
from .scenario import Scenario, parse_scenario

log = logging.getLogger(__name__)

EXIT_OK, EXIT_ERROR, EXIT_NOT_CONVERGED = 0, 1, 2

CSV_HEADER = (
    ["t"] + [f"rho_e{i}" for i in range(1, 6)] + [f"z_p{i}" for i in range(1, 4)] + ["lambda", "V0"]
)


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def equilibrium_rows(result: EquilibriumResult, scenario: Scenario) -> np.ndarray:
    """Columns of the equilibrium CSV as an (N+1, 11) array."""
    return np.column_stack([
        scenario.grid.nodes,
        result.mass.values.T,
        result.preferences.z,
        scenario.lam.values,
        result.field.v0,
    ])


def write_equilibrium_csv(path, result: EquilibriumResult, scenario: Scenario) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for row in equilibrium_rows(result, scenario):
            w.writerow([_fmt(v) for v in row])


def read_reference_csv(path, scenario: Scenario) -> MassTrajectory:
    """Link masses from an equilibrium CSV; the times must match the scenario grid."""
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise ParseError(f"cannot read reference {path}: {exc}") from exc
    if not rows:
        raise ParseError(f"{path}: empty reference file")
    header = rows[0]
    cols = ["t"] + [f"rho_e{i}" for i in range(1, 6)]
    missing = [c for c in cols if c not in header]
    if missing:
        raise SchemaError(f"reference {path} lacks column(s) {', '.join(missing)}")
    try:
        data = np.array([[float(r[header.index(c)]) for c in cols] for r in rows[1:]])
    except (ValueError, IndexError) as exc:
        raise ParseError(f"{path}: malformed row ({exc})") from exc
    nodes = scenario.grid.nodes
    if data.shape[0] != nodes.size or not np.allclose(data[:, 0], nodes, rtol=0, atol=1e-12 * scenario.horizon):
        raise ValidationError(f"reference {path} is not sampled on the scenario grid ({nodes.size} nodes)", "reference")
    return MassTrajectory(scenario.grid, data[:, 1:].T.copy())


def _read_json(path, what: str):
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ParseError(f"cannot read {what} {path}: {exc}") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from exc


def _write_json(path, doc) -> None:
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def summary(result: EquilibriumResult, scenario: Scenario) -> dict:
    return {
        "converged": result.converged,
        "status": result.status,
        "iterations": result.iterations,
        "residual": result.residual,
        "residual_history": result.residual_history,
        "damping_history": result.damping_history,
        "V0_at_0": float(result.field.v0[0]),
        "path_costs_at_0": result.path_costs[0].tolist(),
        "arrivals_at_T": float(result.arrivals.values[-1]),
        "ties": [list(t) for t in result.ties],
        "degenerate_simplex_nodes": list(result.preferences.degenerate_nodes),
        "scenario": scenario.to_dict(),
    }


def _apply_overrides(scenario: Scenario, args) -> Scenario:
    changes = {}
    if args.tol is not None:
        changes["tol"] = args.tol
    if args.max_iter is not None:
        changes["max_iter"] = args.max_iter
    if args.damping is not None:
        changes["damping"] = args.damping
    if not changes:
        return scenario
    return scenario.replace(solver=dataclasses.replace(scenario.solver, **changes))


def _solve(scenario: Scenario, out: Path, stem: str) -> EquilibriumResult:
    result = find_equilibrium(scenario)
    write_equilibrium_csv(out / f"{stem}.csv", result, scenario)
    _write_json(out / f"{stem}.json", summary(result, scenario))
    return result


def cmd_solve(scenario: Scenario, args, out: Path) -> int:
    result = _solve(scenario, out, "equilibrium")
    print(f"{result.status} after {result.iterations} iteration(s), residual {result.residual:.3e}")
    return EXIT_OK if result.converged else EXIT_NOT_CONVERGED


def cmd_sweep(scenario: Scenario, args, out: Path) -> int:
    if not args.betas:
        raise ValidationError("sweep needs --betas", "cli")
    try:
        betas = [float(b) for b in args.betas.split(",") if b.strip()]
    except ValueError as exc:
        raise ValidationError(f"--betas must be comma separated numbers ({exc})", "cli") from exc
    entries = []
    for i, beta in enumerate(betas):
        sc = scenario.replace(beta=beta)
        stem = f"equilibrium_beta_{i:03d}"
        res = _solve(sc, out, stem)
        entries.append({
            "beta": beta, "csv": f"{stem}.csv", "summary": f"{stem}.json",
            "converged": res.converged, "iterations": res.iterations, "residual": res.residual,
        })
        print(f"beta {beta:g}: {res.status} after {res.iterations} iteration(s), residual {res.residual:.3e}")
    _write_json(out / "index.json", {"runs": entries})
    return EXIT_OK if all(e["converged"] for e in entries) else EXIT_NOT_CONVERGED


def cmd_bilevel(scenario: Scenario, args, out: Path) -> int:
    if not args.reference or not args.param_box:
        raise ValidationError("bilevel needs --reference and --param-box", "cli")
    reference = read_reference_csv(args.reference, scenario)
    box = ParamBox.from_dict(_read_json(args.param_box, "param box"))
    result = optimize_params(box, reference, scenario, budget=args.budget, method=args.method)
    _write_json(out / "bilevel.json", result.to_dict())
    best = scenario.with_congestion(result.alpha_prime, result.alpha_second)
    write_equilibrium_csv(out / "equilibrium.csv", result.equilibrium, best)
    _write_json(out / "equilibrium.json", summary(result.equilibrium, best))
    print(f"best objective {result.objective:.6g} after {result.evaluations} evaluation(s)")
    return EXIT_OK


COMMANDS = {"solve": cmd_solve, "bilevel": cmd_bilevel, "sweep": cmd_sweep}


class _Parser(argparse.ArgumentParser):
    # exit code 2 is reserved for an unconverged solve
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="mftraffic", description="Mean field route choice equilibria on a five-link network.")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--scenario", required=True, help="scenario JSON document")
    p.add_argument("--output", default="./out", help="output directory (default ./out)")
    p.add_argument("--reference", help="equilibrium CSV used as the bilevel target")
    p.add_argument("--param-box", help="JSON box for (alpha_prime, alpha_second)")
    p.add_argument("--betas", help="comma separated beta values for sweep")
    p.add_argument("--tol", type=float)
    p.add_argument("--max-iter", type=int)
    p.add_argument("--damping", type=float)
    p.add_argument("--budget", type=int, default=200, help="bilevel: maximum inner solves")
    p.add_argument("--method", choices=METHODS, default="pattern", help="bilevel search method")
    p.add_argument("--seed-unused", type=int, help="reserved; the solver has no random components")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def run_command(command: str, scenario_path, argv_flags=None, **flags) -> int:
    """Programmatic entry: ``run_command("solve", "s.json", output="out")``."""
    argv = [command, "--scenario", str(scenario_path)]
    for key, value in flags.items():
        if value is None:
            continue
        argv += [f"--{key.replace('_', '-')}", str(value)]
    return main(argv + list(argv_flags or []))


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        scenario = _apply_overrides(parse_scenario(args.scenario), args)
        out = Path(args.output)
        out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](scenario, args, out)
    except (MFTrafficError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
