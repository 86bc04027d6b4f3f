"""Bayesian-optimization search for Pareto-critical adoption scenarios.

The loop alternates bus and line phases; each phase fits per-objective GPs on
the evaluated stresses, scores candidate scenarios by the Monte Carlo
probability of being non-dominated, evaluates the top batch with the power
flow, expands the simulated search space, and tracks a per-phase stopping
criterion bounding the probability of a missed critical scenario.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from gridcrit.adoption import DiffusionParams, Scenario, simulate_batch
from gridcrit.feeder import BusPartition, Feeder
from gridcrit.pareto import ParetoArchive
from gridcrit.powerflow import (
    ViolationConfig,
    compute_stress,
    solve_power_flow,
    violation_map,
)
from gridcrit.surrogate import (
    GPSurrogate,
    KernelParams,
    fit_hyperparameters,
    posterior,
    sample_joint,
)

log = logging.getLogger(__name__)


class SearchAbort(RuntimeError):
    """Raised when repeated power-flow non-convergence makes results unusable."""


@dataclass(frozen=True)
class SearchConfig:
    """Knobs of the search loop; defaults sized for desk-scale feeders."""

    n0: int = 30
    n_init: int = 220
    n_expand: int = 150
    batch_size: int = 4
    num_mc_samples: int = 50
    num_candidates: int | None = None  # defaults to |S_1| = n0 + n_init
    tau_bar: float = 0.1
    stress_threshold: float = -0.05
    refit_period: int = 5
    seed: int = 0
    max_search_space: int | None = None
    max_steps: int = 500

    def __post_init__(self):
        for name in ("n0", "n_init", "n_expand", "batch_size", "num_mc_samples",
                     "refit_period", "max_steps"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.tau_bar <= 0:
            raise ValueError("tau_bar must be positive")
        if self.stress_threshold >= 0:
            raise ValueError("stress_threshold must be negative")
        if self.num_candidates is not None and self.num_candidates < 1:
            raise ValueError("num_candidates must be >= 1")


@dataclass
class SearchResult:
    """Everything the search learned, plus traces for reporting."""

    scenarios: list[Scenario]
    evaluated_ids: list[int]
    invalid_ids: list[int]
    stresses: dict[int, np.ndarray]
    violations: dict[int, np.ndarray]
    num_bus_objectives: int
    num_line_objectives: int
    violating_ids: list[int]
    critical_objectives_bus: list[int]
    critical_objectives_line: list[int]
    bus_archive: ParetoArchive
    line_archive: ParetoArchive
    tau_steps: list[int]
    tau_bus_trace: list[float]
    tau_line_trace: list[float]
    evaluation_log: list[tuple[int, int]]  # (step, scenario id)
    relevance: dict[int, np.ndarray]       # objective index -> adopter relevance
    stop_reason: str

    @property
    def num_evaluations(self) -> int:
        return len(self.evaluated_ids)

    @property
    def per_objective_max_violation(self) -> np.ndarray:
        dim = self.num_bus_objectives + self.num_line_objectives
        best = np.zeros(dim)
        for v in self.violations.values():
            best = np.maximum(best, v)
        return best

    def found_bits(self) -> set[str]:
        by_id = {s.id: s for s in self.scenarios}
        return {by_id[i].bitstring() for i in self.evaluated_ids}


def detect_active_objectives(
    stresses: np.ndarray, family: range, stress_threshold: float
) -> tuple[list[int], list[int], list[int]]:
    """Critical, stressed and active objective indices within one family."""
    if stresses.shape[0] < 1:
        raise ValueError("need at least one evaluation")
    critical = [k for k in family if np.any(stresses[:, k] > 0)]
    stressed = [k for k in family if np.max(stresses[:, k]) > stress_threshold]
    active = sorted(set(critical) | set(stressed))
    return critical, stressed, active


def sample_candidates(
    unevaluated_ids: list[int],
    counts: dict[int, int],
    m: int,
    rng: np.random.Generator,
) -> list[int]:
    """Sample up to m ids without replacement, weight 1 / (1 + times sampled).

    Uses exponential sort keys so the draw is a proper weighted sample and
    deterministic for a given generator state.
    """
    if not unevaluated_ids:
        raise ValueError("unevaluated search space is exhausted")
    ids = np.asarray(sorted(unevaluated_ids))
    weights = 1.0 / (1.0 + np.array([counts.get(int(i), 0) for i in ids], dtype=float))
    keys = rng.exponential(size=len(ids)) / weights
    take = min(m, len(ids))
    chosen = ids[np.argsort(keys, kind="stable")[:take]]
    return sorted(int(i) for i in chosen)


def _candidate_nondominated_freq(
    sampled_stress: np.ndarray,
    evaluated_violations: np.ndarray,
    bus_mask: np.ndarray,
    cfg: ViolationConfig,
) -> np.ndarray:
    """Fraction of samples in which each candidate is critical.

    sampled_stress has shape (N, M, K) over active objectives; evaluated
    violations (already mapped) enter each simulated front as fixed points.
    """
    n_samples, m, _ = sampled_stress.shape
    bins = np.asarray(cfg.line_bins)
    pos = np.maximum(sampled_stress, 0.0)
    viol = pos.copy()
    line_idx = np.searchsorted(bins, pos[:, :, ~bus_mask], side="right") - 1
    viol[:, :, ~bus_mask] = np.minimum(line_idx, len(bins) - 1)

    hits = np.zeros(m)
    for i in range(n_samples):
        cand = viol[i]
        pool = (
            np.vstack([cand, evaluated_violations])
            if len(evaluated_violations)
            else cand
        )
        # candidate m is dominated iff some pool point is >= everywhere and > somewhere
        ge = np.all(pool[None, :, :] >= cand[:, None, :], axis=2)
        gt = np.any(pool[None, :, :] > cand[:, None, :], axis=2)
        dominated = np.any(ge & gt, axis=1)
        positive = np.any(cand > 0, axis=1)
        hits += (~dominated) & positive
    return hits / n_samples


def acquisition_alpha_nd(
    gps: dict[int, GPSurrogate],
    candidate_bits: np.ndarray,
    evaluated_violations: np.ndarray,
    bus_mask: np.ndarray,
    cfg: ViolationConfig,
    num_samples: int,
    seed,
) -> np.ndarray:
    """Probability of each candidate being non-dominated (Monte Carlo).

    For every active objective, joint posterior samples over the candidates
    are drawn, mapped to violations and compared against the realized
    violations of already-evaluated scenarios. Candidates with zero sampled
    violations never count as critical.
    """
    if not gps:
        raise ValueError("need at least one active objective")
    keys = sorted(gps)
    m = candidate_bits.shape[0]
    sampled = np.empty((num_samples, m, len(keys)))
    for j, k in enumerate(keys):
        post = posterior(gps[k], candidate_bits)
        child = np.random.SeedSequence((_seed_entropy(seed), j))
        sampled[:, :, j] = sample_joint(post, num_samples, child)
    return _candidate_nondominated_freq(sampled, evaluated_violations, bus_mask, cfg)


def _seed_entropy(seed) -> int:
    """Collapse a seed-ish value into an int for SeedSequence composition."""
    if isinstance(seed, (int, np.integer)):
        return int(seed)
    return int(np.random.SeedSequence(seed).generate_state(1)[0])


def stopping_criterion(alpha: np.ndarray) -> float:
    """Sum of acquisition values over a stopping subsample."""
    return float(np.sum(alpha))


def select_batch(
    alpha: np.ndarray, candidate_ids: list[int], batch_size: int
) -> list[int]:
    """Top-B candidates by alpha; alpha = 0 skipped; ties go to lower ids."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    order = sorted(range(len(candidate_ids)), key=lambda i: (-alpha[i], candidate_ids[i]))
    return [candidate_ids[i] for i in order[:batch_size] if alpha[i] > 0]


_DEFAULT_NOISE = 1e-4


def run_search(
    feeder: Feeder,
    partition: BusPartition,
    diffusion: DiffusionParams,
    viol_cfg: ViolationConfig,
    cfg: SearchConfig,
    pf_tol: float = 1e-8,
    pf_max_iter: int = 50,
    pv_derate: float = 1.0,
    threads: int = 1,
) -> SearchResult:
    """Run the full search loop until the stopping bound or exhaustion.

    ``threads`` parallelizes the power-flow solves within a batch; results are
    committed in scenario-id order, so the outcome is identical to a
    single-threaded run (batch composition is fixed before evaluation).
    """
    num_bus = partition.num_groups
    num_line = feeder.num_lines
    dim = num_bus + num_line
    num_agents = feeder.num_adopters

    scenarios: list[Scenario] = []
    counts: dict[int, int] = {}
    stresses: dict[int, np.ndarray] = {}
    invalid: list[int] = []
    eval_log: list[tuple[int, int]] = []
    eval_order: list[int] = []
    done_bits: set[str] = set()  # evaluated or invalid bitstrings
    attempts = 0

    def add_scenarios(batch: list[Scenario]) -> None:
        scenarios.extend(batch)

    def unevaluated_representatives() -> list[int]:
        """Lowest scenario id per distinct bitstring not yet evaluated.

        Stress is a function of the bitstring alone, so Monte Carlo
        duplicates of an evaluated scenario carry no information and are
        treated as evaluated.
        """
        reps: dict[str, int] = {}
        for s in scenarios:
            bits = s.bitstring()
            if bits not in done_bits and bits not in reps:
                reps[bits] = s.id
        return sorted(reps.values())

    def solve(sid: int):
        return solve_power_flow(
            feeder, scenarios[sid], tol=pf_tol, max_iter=pf_max_iter, pv_derate=pv_derate
        )

    def evaluate_batch(sids: list[int], step: int) -> None:
        if threads > 1 and len(sids) > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                results = list(pool.map(solve, sids))
        else:
            results = [solve(sid) for sid in sids]
        for sid, pf in zip(sids, results):
            commit(sid, pf, step)

    def commit(sid: int, pf, step: int) -> None:
        nonlocal attempts
        attempts += 1
        done_bits.add(scenarios[sid].bitstring())
        if not pf.converged:
            invalid.append(sid)
            log.warning("power flow did not converge for scenario %d; excluded", sid)
            if attempts >= 10 and len(invalid) > 0.1 * attempts:
                raise SearchAbort(
                    f"{len(invalid)}/{attempts} power flows failed to converge; "
                    "check feeder data and solver settings"
                )
            return
        stresses[sid] = compute_stress(feeder, partition, pf)
        eval_order.append(sid)
        eval_log.append((step, sid))

    # Initialization: n0 evaluated scenarios, then grow to |S_1|.
    add_scenarios(simulate_batch(feeder, diffusion, cfg.n0, seed=(cfg.seed, 0)))
    evaluate_batch(list(range(cfg.n0)), step=0)
    if not stresses:
        raise SearchAbort("no initial scenario produced a converged power flow")
    add_scenarios(
        simulate_batch(feeder, diffusion, cfg.n_init, seed=(cfg.seed, 1), start_id=cfg.n0)
    )
    m_cand = cfg.num_candidates or (cfg.n0 + cfg.n_init)

    params_cache: dict[int, KernelParams] = {}
    last_fit_step: dict[int, int] = {}
    tau = {"bus": np.inf, "line": np.inf}
    tau_steps: list[int] = []
    tau_bus_trace: list[float] = []
    tau_line_trace: list[float] = []
    cand_rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, 2)))
    stop_rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, 3)))
    stop_reason = "max_steps"

    def default_params() -> KernelParams:
        return KernelParams(eta=1.0, theta=np.ones(num_agents), noise=_DEFAULT_NOISE)

    step = 0
    while step < cfg.max_steps:
        if max(tau["bus"], tau["line"]) < cfg.tau_bar:
            stop_reason = "converged"
            break
        unevaluated = unevaluated_representatives()
        if not unevaluated:
            stop_reason = "exhausted"
            break
        step += 1
        phase = "bus" if step % 2 == 1 else "line"
        family = range(num_bus) if phase == "bus" else range(num_bus, dim)
        eval_ids = sorted(stresses)
        stress_mat = np.array([stresses[i] for i in eval_ids])
        _, _, active = detect_active_objectives(stress_mat, family, cfg.stress_threshold)

        if not active:
            tau[phase] = 0.0
        else:
            x_eval = np.array([scenarios[i].as_array() for i in eval_ids], dtype=float)
            gps: dict[int, GPSurrogate] = {}
            for k in active:
                need_refit = (
                    k not in params_cache
                    or (step - last_fit_step.get(k, 0)) >= cfg.refit_period
                )
                if need_refit:
                    params_cache[k] = fit_hyperparameters(
                        x_eval,
                        stress_mat[:, k],
                        init=params_cache.get(k, default_params()),
                        seed=_seed_entropy((cfg.seed, 4, step, k)),
                    )
                    last_fit_step[k] = step
                gps[k] = GPSurrogate.build(x_eval, stress_mat[:, k], params_cache[k])
                log.debug(
                    "step %d obj %d: eta=%.3g noise=%.3g theta_max=%.3g refit=%s",
                    step, k, params_cache[k].eta, params_cache[k].noise,
                    float(np.max(params_cache[k].theta)), need_refit,
                )

            bus_mask = np.array([k < num_bus for k in active])
            bins = np.asarray(viol_cfg.line_bins)
            eval_viol = np.maximum(stress_mat[:, active], 0.0)
            line_cols = ~bus_mask
            if line_cols.any():
                idx = np.searchsorted(bins, eval_viol[:, line_cols], side="right") - 1
                eval_viol[:, line_cols] = np.minimum(idx, len(bins) - 1)

            cand_ids = sample_candidates(unevaluated, counts, m_cand, cand_rng)
            for cid in cand_ids:
                counts[cid] = counts.get(cid, 0) + 1
            cand_bits = np.array([scenarios[i].as_array() for i in cand_ids], dtype=float)
            alpha = acquisition_alpha_nd(
                gps,
                cand_bits,
                eval_viol,
                bus_mask,
                viol_cfg,
                cfg.num_mc_samples,
                seed=(cfg.seed, 5, step),
            )

            # Stopping subsample: prefer unevaluated scenarios disjoint from the
            # acquisition candidates; top up by reusing candidate alphas.
            pool = sorted(set(unevaluated) - set(cand_ids))
            tau_val = 0.0
            take = min(m_cand, len(pool))
            if take > 0:
                sub = sorted(
                    int(i) for i in stop_rng.choice(np.asarray(pool), size=take, replace=False)
                )
                sub_bits = np.array([scenarios[i].as_array() for i in sub], dtype=float)
                sub_alpha = acquisition_alpha_nd(
                    gps,
                    sub_bits,
                    eval_viol,
                    bus_mask,
                    viol_cfg,
                    cfg.num_mc_samples,
                    seed=(cfg.seed, 6, step),
                )
                tau_val += stopping_criterion(sub_alpha)
            if take < m_cand:
                alpha_by_id = dict(zip(cand_ids, alpha))
                short = min(m_cand - take, len(cand_ids))
                reuse = sorted(cand_ids, key=lambda i: (-alpha_by_id[i], i))[:short]
                tau_val += stopping_criterion(np.array([alpha_by_id[i] for i in reuse]))
            tau[phase] = tau_val
            if log.isEnabledFor(logging.DEBUG):
                nz = alpha[alpha > 0]
                log.debug(
                    "step %d %s: tau=%.3f alpha>0 %d/%d max=%.3f",
                    step, phase, tau_val, len(nz), len(alpha),
                    float(alpha.max()) if len(alpha) else 0.0,
                )

            batch = select_batch(alpha, cand_ids, cfg.batch_size)
            evaluate_batch(batch, step)

        tau_steps.append(step)
        tau_bus_trace.append(tau["bus"] if np.isfinite(tau["bus"]) else np.nan)
        tau_line_trace.append(tau["line"] if np.isfinite(tau["line"]) else np.nan)

        cap = cfg.max_search_space
        room = (cap - len(scenarios)) if cap is not None else cfg.n_expand
        n_new = min(cfg.n_expand, max(room, 0))
        if n_new > 0:
            add_scenarios(
                simulate_batch(
                    feeder, diffusion, n_new, seed=(cfg.seed, 7, step), start_id=len(scenarios)
                )
            )

    return _assemble_result(
        feeder, scenarios, eval_order, invalid, stresses, viol_cfg,
        num_bus, num_line, tau_steps, tau_bus_trace, tau_line_trace,
        eval_log, params_cache, stop_reason,
    )


def _assemble_result(
    feeder, scenarios, eval_order, invalid, stresses, viol_cfg,
    num_bus, num_line, tau_steps, tau_bus_trace, tau_line_trace,
    eval_log, params_cache, stop_reason,
) -> SearchResult:
    from gridcrit.surrogate import adopter_relevance

    violations = {
        sid: violation_map(stress, num_bus, viol_cfg) for sid, stress in stresses.items()
    }
    violating = sorted(sid for sid, v in violations.items() if np.any(v > 0))
    crit_bus = sorted(
        k for k in range(num_bus) if any(v[k] > 0 for v in violations.values())
    )
    crit_line = sorted(
        k for k in range(num_bus, num_bus + num_line)
        if any(v[k] > 0 for v in violations.values())
    )
    bus_archive = ParetoArchive(objective_ids=tuple(range(num_bus)))
    line_archive = ParetoArchive(objective_ids=tuple(range(num_bus, num_bus + num_line)))
    for sid in sorted(violations):
        bus_archive.add(sid, violations[sid][:num_bus])
        line_archive.add(sid, violations[sid][num_bus:])
    relevance = {
        k: adopter_relevance(p) for k, p in params_cache.items()
        if k in set(crit_bus) | set(crit_line)
    }
    return SearchResult(
        scenarios=scenarios,
        evaluated_ids=list(eval_order),
        invalid_ids=sorted(invalid),
        stresses=stresses,
        violations=violations,
        num_bus_objectives=num_bus,
        num_line_objectives=num_line,
        violating_ids=violating,
        critical_objectives_bus=crit_bus,
        critical_objectives_line=crit_line,
        bus_archive=bus_archive,
        line_archive=line_archive,
        tau_steps=tau_steps,
        tau_bus_trace=tau_bus_trace,
        tau_line_trace=tau_line_trace,
        evaluation_log=eval_log,
        relevance=relevance,
        stop_reason=stop_reason,
    )


@dataclass
class OracleResult:
    """Exact evaluation of every scenario in a set."""

    scenarios: list[Scenario]
    stresses: dict[int, np.ndarray]
    violations: dict[int, np.ndarray]
    invalid_ids: list[int]
    num_bus_objectives: int
    num_line_objectives: int
    bus_critical_ids: list[int]
    line_critical_ids: list[int]
    critical_objectives_bus: list[int]
    critical_objectives_line: list[int]
    per_objective_max_violation: np.ndarray

    def critical_bits(self, family: str) -> set[str]:
        by_id = {s.id: s for s in self.scenarios}
        ids = self.bus_critical_ids if family == "bus" else self.line_critical_ids
        return {by_id[i].bitstring() for i in ids}


def brute_force_oracle(
    feeder: Feeder,
    partition: BusPartition,
    viol_cfg: ViolationConfig,
    scenarios: list[Scenario],
    pf_tol: float = 1e-8,
    pf_max_iter: int = 50,
    pv_derate: float = 1.0,
    max_scenarios: int = 100_000,
) -> OracleResult:
    """Evaluate every scenario; exact critical sets per objective family."""
    if len(scenarios) > max_scenarios:
        raise ValueError(
            f"{len(scenarios)} scenarios exceed the oracle budget of {max_scenarios}"
        )
    num_bus = partition.num_groups
    num_line = feeder.num_lines
    stresses: dict[int, np.ndarray] = {}
    invalid: list[int] = []
    for s in scenarios:
        pf = solve_power_flow(feeder, s, tol=pf_tol, max_iter=pf_max_iter, pv_derate=pv_derate)
        if not pf.converged:
            invalid.append(s.id)
            continue
        stresses[s.id] = compute_stress(feeder, partition, pf)
    violations = {
        sid: violation_map(st, num_bus, viol_cfg) for sid, st in stresses.items()
    }
    bus_arch = ParetoArchive(objective_ids=tuple(range(num_bus)))
    line_arch = ParetoArchive(objective_ids=tuple(range(num_bus, num_bus + num_line)))
    for sid in sorted(violations):
        bus_arch.add(sid, violations[sid][:num_bus])
        line_arch.add(sid, violations[sid][num_bus:])
    best = np.zeros(num_bus + num_line)
    for v in violations.values():
        best = np.maximum(best, v)
    return OracleResult(
        scenarios=scenarios,
        stresses=stresses,
        violations=violations,
        invalid_ids=invalid,
        num_bus_objectives=num_bus,
        num_line_objectives=num_line,
        bus_critical_ids=bus_arch.scenario_ids,
        line_critical_ids=line_arch.scenario_ids,
        critical_objectives_bus=sorted(
            k for k in range(num_bus) if best[k] > 0
        ),
        critical_objectives_line=sorted(
            k for k in range(num_bus, num_bus + num_line) if best[k] > 0
        ),
        per_objective_max_violation=best,
    )


def recovery_fraction(oracle: OracleResult, result: SearchResult, family: str) -> float:
    """Fraction of oracle-critical scenarios (by bitstring) the search evaluated."""
    crit = oracle.critical_bits(family)
    if not crit:
        return 1.0
    found = result.found_bits()
    return len(crit & found) / len(crit)
