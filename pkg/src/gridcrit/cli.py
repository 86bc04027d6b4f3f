"""Command-line interface: feeder generation, simulation, evaluation, search,
brute-force enumeration and report emission.

Every run command writes a ``manifest.json`` with the fully resolved
configuration; re-running with the manifest as the config reproduces all
artifacts byte-identically (single-threaded mode).

Exit codes: 0 success, 2 usage error, 3 validation error, 4 numerical
failure, 5 search stopped by search-space exhaustion.
"""

from __future__ import annotations

import csv
import json
import sys
from dataclasses import asdict
from pathlib import Path

import click
import numpy as np

from gridcrit.adoption import (
    DiffusionParams,
    Scenario,
    load_scenarios,
    save_scenarios,
    simulate_batch,
)
from gridcrit.feeder import (
    FeederError,
    apply_partition,
    fallback_partition,
    generate_synthetic_feeder,
    load_feeder,
    save_feeder,
)
from gridcrit.powerflow import ViolationConfig, solve_power_flow, violation_map
from gridcrit.search import (
    SearchAbort,
    SearchConfig,
    brute_force_oracle,
    run_search,
)
from gridcrit.surrogate import NumericalError

CONFIG_SCHEMA_VERSION = 1

EXIT_VALIDATION = 3
EXIT_NUMERICAL = 4
EXIT_EXHAUSTED = 5


class ConfigError(click.ClickException):
    """Configuration problem; maps to the validation exit code."""

    exit_code = EXIT_VALIDATION


class NumericalFailure(click.ClickException):
    """Numerical breakdown in the solver or surrogate; exit code 4."""

    exit_code = EXIT_NUMERICAL


def _fmt(value: float) -> str:
    """Deterministic float formatting for CSV artifacts."""
    return repr(float(value))


def _load_config(path: str) -> dict:
    """Read a run config (or a manifest wrapping one) and apply defaults."""
    try:
        doc = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}")
    if "command" in doc and "config" in doc:
        doc = doc["config"]  # manifest re-run
    if doc.get("schema") != CONFIG_SCHEMA_VERSION:
        raise ConfigError(f"config schema must be {CONFIG_SCHEMA_VERSION}")
    if "feeder" not in doc:
        raise ConfigError("config is missing the 'feeder' path")
    resolved = {
        "schema": CONFIG_SCHEMA_VERSION,
        "feeder": doc["feeder"],
        "seed": int(doc.get("seed", 0)),
        "diffusion": {
            "p": 0.01, "q": 0.164, "horizon_steps": 10, "initial_rate": 0.0,
        },
        "violation": {"line_bins": [0.0, 0.1, 0.25, 0.5]},
        "powerflow": {"tol": 1e-8, "max_iter": 50, "pv_derate": 1.0},
        "search": {},
    }
    for section in ("diffusion", "violation", "powerflow", "search"):
        extra = doc.get(section, {})
        if not isinstance(extra, dict):
            raise ConfigError(f"config section '{section}' must be an object")
        resolved[section].update(extra)
    resolved["search"].setdefault("seed", resolved["seed"])
    return resolved


def _build_parts(config: dict):
    """Instantiate library objects from a resolved config."""
    feeder_path = config["feeder"]
    if not Path(feeder_path).exists():
        raise ConfigError(f"feeder file not found: {feeder_path}")
    try:
        feeder = load_feeder(feeder_path)
        diffusion = DiffusionParams(**config["diffusion"])
        viol_cfg = ViolationConfig(line_bins=tuple(config["violation"]["line_bins"]))
        search_cfg = SearchConfig(**config["search"])
    except (FeederError, ValueError, TypeError) as exc:
        raise ConfigError(str(exc))
    return feeder, diffusion, viol_cfg, search_cfg


def _write_manifest(outdir: Path, command: str, config: dict, **extra) -> None:
    manifest = {
        "schema": CONFIG_SCHEMA_VERSION,
        "command": command,
        "config": config,
        **extra,
    }
    (outdir / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n"
    )


def _write_json(path: Path, doc: dict) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _result_document(feeder, scenarios, stresses, violations, num_bus, num_line,
                     bus_ids, line_ids, crit_bus, crit_line, invalid,
                     per_obj_max, stop_reason, extra=None) -> dict:
    by_id = {s.id: s for s in scenarios}

    def scen_entry(sid: int, lo: int, hi: int) -> dict:
        return {
            "id": sid,
            "bits": by_id[sid].bitstring(),
            "violations": [float(v) for v in violations[sid][lo:hi]],
        }

    doc = {
        "schema": CONFIG_SCHEMA_VERSION,
        "feeder_hash": feeder.content_hash(),
        "stop_reason": stop_reason,
        "num_evaluations": len(stresses),
        "search_space_size": len(scenarios),
        "num_bus_objectives": num_bus,
        "num_line_objectives": num_line,
        "critical_objectives": {"bus": list(crit_bus), "line": list(crit_line)},
        "per_objective_max_violation": [float(v) for v in per_obj_max],
        "critical_scenarios": {
            "bus": [scen_entry(i, 0, num_bus) for i in bus_ids],
            "line": [scen_entry(i, num_bus, num_bus + num_line) for i in line_ids],
        },
        "invalid_ids": sorted(invalid),
        "evaluations": [
            {
                "id": sid,
                "bits": by_id[sid].bitstring(),
                "stress": [float(v) for v in stresses[sid]],
                "violations": [float(v) for v in violations[sid]],
            }
            for sid in sorted(stresses)
        ],
    }
    if extra:
        doc.update(extra)
    return doc


@click.group()
def main() -> None:
    """Critical-scenario discovery for distributed-PV adoption on radial feeders."""


@main.command("make-feeder")
@click.option("--buses", type=int, required=True)
@click.option("--adopters", type=int, required=True)
@click.option("--groups", type=int, default=1, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--output", "-o", type=click.Path(), required=True)
def cmd_make_feeder(buses, adopters, groups, seed, output) -> None:
    """Generate a synthetic radial feeder with a balanced bus partition."""
    if adopters >= buses or adopters < 1 or buses < 2:
        raise click.UsageError("need 1 <= adopters < buses and buses >= 2")
    if not 1 <= groups <= buses:
        raise click.UsageError("groups must be in [1, buses]")
    try:
        feeder = generate_synthetic_feeder(buses, adopters, seed)
        feeder = apply_partition(feeder, fallback_partition(feeder, groups))
    except (FeederError, ValueError) as exc:
        raise ConfigError(str(exc))
    save_feeder(feeder, output)
    click.echo(f"wrote {output} ({buses} buses, {adopters} adopters, {groups} groups)")


@main.command("simulate")
@click.option("--config", "config_path", type=click.Path(), required=True)
@click.option("--count", type=int, required=True)
@click.option("--output", "-o", type=click.Path(), required=True)
def cmd_simulate(config_path, count, output) -> None:
    """Simulate adoption scenarios and write them to a scenario file."""
    if count < 1:
        raise click.UsageError("count must be >= 1")
    config = _load_config(config_path)
    feeder, diffusion, _, _ = _build_parts(config)
    scenarios = simulate_batch(feeder, diffusion, count, seed=config["seed"])
    save_scenarios(output, scenarios, feeder)
    click.echo(f"wrote {output} ({count} scenarios)")


@main.command("evaluate")
@click.option("--config", "config_path", type=click.Path(), required=True)
@click.option("--scenarios", "scenario_path", type=click.Path(), required=True)
@click.option("--output", "-o", type=click.Path(), required=True)
def cmd_evaluate(config_path, scenario_path, output) -> None:
    """Evaluate a scenario file: power flow, stresses and violations to CSV."""
    config = _load_config(config_path)
    feeder, _, viol_cfg, _ = _build_parts(config)
    try:
        scenarios = load_scenarios(scenario_path, feeder)
    except (FeederError, ValueError) as exc:
        raise ConfigError(str(exc))
    from gridcrit.powerflow import compute_stress

    pf_cfg = config["powerflow"]
    num_bus = feeder.num_groups
    dim = num_bus + feeder.num_lines
    with open(output, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["id"]
            + [f"stress_{k}" for k in range(dim)]
            + [f"violation_{k}" for k in range(dim)]
            + ["converged"]
        )
        for s in scenarios:
            pf = solve_power_flow(
                feeder, s, tol=pf_cfg["tol"], max_iter=pf_cfg["max_iter"],
                pv_derate=pf_cfg["pv_derate"],
            )
            if pf.converged:
                stress = compute_stress(feeder, feeder.partition(), pf)
                viol = violation_map(stress, num_bus, viol_cfg)
                writer.writerow(
                    [s.id] + [_fmt(v) for v in stress] + [_fmt(v) for v in viol]
                    + [True]
                )
            else:
                writer.writerow([s.id] + [""] * (2 * dim) + [False])
    click.echo(f"wrote {output}")


def _write_search_artifacts(outdir: Path, feeder, result) -> None:
    num_bus = result.num_bus_objectives
    doc = _result_document(
        feeder, result.scenarios, result.stresses, result.violations,
        num_bus, result.num_line_objectives,
        result.bus_archive.scenario_ids, result.line_archive.scenario_ids,
        result.critical_objectives_bus, result.critical_objectives_line,
        result.invalid_ids, result.per_objective_max_violation,
        result.stop_reason,
        extra={
            "relevance": {
                str(k): [float(v) for v in vec] for k, vec in result.relevance.items()
            },
        },
    )
    _write_json(outdir / "result.json", doc)

    with open(outdir / "tau_trace.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "tau_bus", "tau_line"])
        for step, tb, tl in zip(
            result.tau_steps, result.tau_bus_trace, result.tau_line_trace
        ):
            writer.writerow(
                [step, _fmt(tb) if np.isfinite(tb) else "",
                 _fmt(tl) if np.isfinite(tl) else ""]
            )

    by_id = {s.id: s for s in result.scenarios}
    with open(outdir / "evaluation_log.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        dim = num_bus + result.num_line_objectives
        writer.writerow(["step", "id", "bits"] + [f"stress_{k}" for k in range(dim)])
        for step, sid in result.evaluation_log:
            writer.writerow(
                [step, sid, by_id[sid].bitstring()]
                + [_fmt(v) for v in result.stresses[sid]]
            )

    adopters = feeder.adopters
    for k, vec in sorted(result.relevance.items()):
        with open(outdir / f"relevance_obj_{k}.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["adopter_bus", "relevance"])
            for bus_id, val in zip(adopters, vec):
                writer.writerow([bus_id, _fmt(val)])


@main.command("search")
@click.option("--config", "config_path", type=click.Path(), required=True)
@click.option("--output-dir", "-o", type=click.Path(), required=True)
@click.option("--threads", type=int, default=1, show_default=True)
def cmd_search(config_path, threads, output_dir) -> None:
    """Run the Bayesian-optimization search and write result artifacts."""
    if threads < 1:
        raise click.UsageError("threads must be >= 1")
    config = _load_config(config_path)
    feeder, diffusion, viol_cfg, search_cfg = _build_parts(config)
    outdir = Path(output_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    pf_cfg = config["powerflow"]
    try:
        result = run_search(
            feeder, feeder.partition(), diffusion, viol_cfg, search_cfg,
            pf_tol=pf_cfg["tol"], pf_max_iter=pf_cfg["max_iter"],
            pv_derate=pf_cfg["pv_derate"], threads=threads,
        )
    except (NumericalError, SearchAbort) as exc:
        raise NumericalFailure(str(exc))
    config["search"] = {**asdict(search_cfg)}
    _write_manifest(outdir, "search", config, threads=threads)
    _write_search_artifacts(outdir, feeder, result)
    click.echo(
        f"{result.stop_reason}: {result.num_evaluations} evaluations, "
        f"{len(result.bus_archive)} bus-critical, "
        f"{len(result.line_archive)} line-critical -> {outdir}"
    )
    if result.stop_reason == "exhausted":
        sys.exit(EXIT_EXHAUSTED)


@main.command("brute-force")
@click.option("--config", "config_path", type=click.Path(), required=True)
@click.option("--scenarios", "scenario_path", type=click.Path(), default=None,
              help="Scenario file to enumerate; simulated from config when omitted.")
@click.option("--count", type=int, default=4096, show_default=True,
              help="Number of scenarios to simulate when --scenarios is omitted.")
@click.option("--output-dir", "-o", type=click.Path(), required=True)
def cmd_brute_force(config_path, scenario_path, count, output_dir) -> None:
    """Exhaustively evaluate a scenario set and write the exact fronts."""
    config = _load_config(config_path)
    feeder, diffusion, viol_cfg, _ = _build_parts(config)
    if scenario_path is not None:
        try:
            scenarios = load_scenarios(scenario_path, feeder)
        except (FeederError, ValueError) as exc:
            raise ConfigError(str(exc))
    else:
        if count < 1:
            raise click.UsageError("count must be >= 1")
        scenarios = simulate_batch(feeder, diffusion, count, seed=config["seed"])
    outdir = Path(output_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    pf_cfg = config["powerflow"]
    oracle = brute_force_oracle(
        feeder, feeder.partition(), viol_cfg, scenarios,
        pf_tol=pf_cfg["tol"], pf_max_iter=pf_cfg["max_iter"],
        pv_derate=pf_cfg["pv_derate"],
    )
    _write_manifest(outdir, "brute-force", config, count=count,
                    scenarios=scenario_path)
    doc = _result_document(
        feeder, scenarios, oracle.stresses, oracle.violations,
        oracle.num_bus_objectives, oracle.num_line_objectives,
        oracle.bus_critical_ids, oracle.line_critical_ids,
        oracle.critical_objectives_bus, oracle.critical_objectives_line,
        oracle.invalid_ids, oracle.per_objective_max_violation,
        "oracle",
    )
    _write_json(outdir / "result.json", doc)
    click.echo(
        f"oracle: {len(oracle.stresses)} evaluations, "
        f"{len(oracle.bus_critical_ids)} bus-critical, "
        f"{len(oracle.line_critical_ids)} line-critical -> {outdir}"
    )


def _read_result(path: Path) -> dict:
    if not path.exists():
        raise ConfigError(f"missing result file: {path}")
    return json.loads(path.read_text())


@main.command("report")
@click.option("--feeder", "feeder_path", type=click.Path(), required=True)
@click.option("--search-dir", type=click.Path(), required=True)
@click.option("--oracle-dir", type=click.Path(), default=None)
@click.option("--top-n", type=int, default=25, show_default=True)
@click.option("--output-dir", "-o", type=click.Path(), required=True)
def cmd_report(feeder_path, search_dir, oracle_dir, top_n, output_dir) -> None:
    """Emit plot-ready CSVs: PV ranking, max-violation comparison, relevance."""
    if top_n < 1:
        raise click.UsageError("top-n must be >= 1")
    try:
        feeder = load_feeder(feeder_path)
    except FeederError as exc:
        raise ConfigError(str(exc))
    search_doc = _read_result(Path(search_dir) / "result.json")
    oracle_doc = (
        _read_result(Path(oracle_dir) / "result.json") if oracle_dir else None
    )
    outdir = Path(output_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    num_bus = search_doc["num_bus_objectives"]
    pv_caps = np.array(
        [b.pv_capacity for b in feeder.buses if b.is_adopter]
    )

    def total_pv(bits: str) -> float:
        return float(np.array([int(c) for c in bits]) @ pv_caps)

    # (a) evaluated scenarios ranked by total adopted PV capacity.
    rows = [
        (
            e["id"], e["bits"], total_pv(e["bits"]),
            max(e["violations"][:num_bus]),
        )
        for e in search_doc["evaluations"]
    ]
    rows.sort(key=lambda r: (-r[2], r[0]))
    with open(outdir / "scenarios_by_pv.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "bits", "total_pv_kw", "max_bus_violation"])
        for rid, bits, pv, mv in rows:
            writer.writerow([rid, bits, _fmt(pv), _fmt(mv)])

    # (b) per-objective max violation: search vs oracle vs naive top-N-by-PV.
    base_doc = oracle_doc or search_doc
    ranked = sorted(
        {e["bits"]: e for e in base_doc["evaluations"]}.values(),
        key=lambda e: (-total_pv(e["bits"]), e["id"]),
    )
    top = ranked[:top_n]
    dim = num_bus + search_doc["num_line_objectives"]
    top_max = np.zeros(dim)
    for e in top:
        top_max = np.maximum(top_max, e["violations"])
    with open(outdir / "max_violation_comparison.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        header = ["objective", "search_max", f"top{top_n}_max"]
        if oracle_doc:
            header.insert(2, "oracle_max")
        writer.writerow(header)
        for k in range(dim):
            row = [k, _fmt(search_doc["per_objective_max_violation"][k]),
                   _fmt(top_max[k])]
            if oracle_doc:
                row.insert(2, _fmt(oracle_doc["per_objective_max_violation"][k]))
            writer.writerow(row)

    # (c) adopter relevance matrix over critical objectives.
    with open(outdir / "relevance.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["objective"] + [str(b) for b in feeder.adopters])
        for key in sorted(search_doc.get("relevance", {}), key=int):
            writer.writerow(
                [key] + [_fmt(v) for v in search_doc["relevance"][key]]
            )
    click.echo(f"wrote report -> {outdir}")


if __name__ == "__main__":
    main()
