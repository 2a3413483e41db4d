"""Central select-measure-estimate synthesis loop (reference implementation).

Each round the worst-approximated workload query is chosen by the
exponential mechanism, measured under Gaussian noise, and folded into the
maximum-entropy model.  The loop either runs a fixed number of rounds on a
constant schedule that consumes the budget exactly, or adapts the round
count by budget annealing with a final-round adjustment.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .domain import DiscreteDataset, MarginalQuery, evaluate_marginal
from .model import Measurement, ModelState, fit
from .privacy import (
    PrivacyAccountant,
    annealing_condition,
    anneal_step,
    central_schedule_init,
    exponential_cost,
    exponential_mechanism,
    final_round_adjust,
    final_round_triggered,
    flaim_schedule,
    gaussian_cost,
)
from .rng import fork
from .workload import Workload, complete_workload

ROOT_2_OVER_PI = math.sqrt(2.0 / math.pi)


@dataclass
class AimConfig:
    epsilon: float
    delta: float = 1e-9
    max_model_size: int = 1 << 22  # bytes
    rounds: int | None = None  # fixed round count; None selects annealing
    gauss_frac: float = 0.9
    fit_iters: int = 100
    final_fit_iters: int = 1000
    fit_tolerance: float = 1e-4
    final_fit_tolerance: float = 1e-7
    max_cells: int = 1 << 26
    seed: int = 0
    anneal_rounds_factor: int = 16
    noiseless: bool = False  # test hook: exact measurements, argmax selection


@dataclass
class AimResult:
    model: ModelState
    accountant: PrivacyAccountant
    rounds: list[dict] = field(default_factory=list)
    completed_workload: Workload | None = None


def filter_by_size(
    workload: Workload,
    model: ModelState,
    rho_used: float,
    rho_total: float,
    max_model_size: int,
) -> list[int]:
    """Indices of queries whose hypothetical model stays within the budgeted
    share of the size cap; falls back to the single smallest candidate so a
    selection step always has one."""
    limit = (rho_used / rho_total) * max_model_size
    sizes = [model.size_bytes(q) for q in workload.queries]
    admitted = [i for i, s in enumerate(sizes) if s <= limit]
    if not admitted:
        admitted = [int(np.argmin(sizes))]
    return admitted


def _aim_utilities(
    exact: dict[tuple[int, ...], np.ndarray],
    model: ModelState,
    workload: Workload,
    candidates: list[int],
    sigma: float,
) -> np.ndarray:
    scores = np.empty(len(candidates))
    for j, i in enumerate(candidates):
        q = workload.queries[i]
        gap = float(np.abs(exact[q.attrs] - model.marginal_counts(q)).sum())
        scores[j] = workload.weights[i] * (gap - ROOT_2_OVER_PI * sigma * q.cardinality)
    return scores


def run_aim(data: DiscreteDataset, workload: Workload, config: AimConfig) -> AimResult:
    """Run the central loop on one dataset and return the fitted model."""
    domain = data.domain
    d = len(domain)
    completed = complete_workload(domain, workload)
    largest_oneway = max(domain.cardinalities) * 8
    if config.max_model_size <= largest_oneway:
        raise ValueError(
            f"max_model_size={config.max_model_size} bytes cannot hold the largest "
            f"one-way table ({largest_oneway} bytes)"
        )
    accountant = PrivacyAccountant.from_eps_delta(config.epsilon, config.delta)
    rho = accountant.rho_total
    fixed = config.rounds is not None
    if fixed:
        schedule = flaim_schedule(config.rounds, 1, d, rho, config.gauss_frac, "naive")
    else:
        schedule, _ = central_schedule_init(d, rho, config.anneal_rounds_factor)

    exact = {q.attrs: evaluate_marginal(data, q).counts for q in completed.queries}
    sensitivity = completed.max_weight()
    rounds_log: list[dict] = []

    # initialization round: measure every attribute's one-way marginal
    one_ways = [MarginalQuery.make(domain, (a,)) for a in range(d)]
    init_rng = fork(config.seed, "init")
    accountant.charge(
        d * gaussian_cost(schedule.sigma), "gaussian_init", 0, sigma=schedule.sigma, count=d
    )
    measurements: list[Measurement] = []
    for q in one_ways:
        counts = evaluate_marginal(data, q).counts
        noisy = counts if config.noiseless else counts + init_rng.normal(0.0, schedule.sigma, q.cardinality)
        measurements.append(Measurement(0, q, noisy, schedule.sigma, 1.0 / schedule.sigma))
    model = fit(
        measurements,
        domain,
        iterations=config.fit_iters,
        tolerance=config.fit_tolerance,
        max_cells=config.max_cells,
    )
    rounds_log.append(
        {"t": 0, "phase": "init", "sigma": schedule.sigma, "eps": schedule.eps,
         "rho_used": accountant.rho_used}
    )
    finishing = False
    if not fixed and final_round_triggered(accountant.remaining, schedule):
        schedule = final_round_adjust(accountant.remaining, schedule)
        finishing = True

    t = 0
    hard_cap = 200 * d + 200
    while True:
        if fixed:
            if t >= config.rounds:
                break
        elif accountant.remaining <= 1e-15 * rho or t >= hard_cap:
            break
        t += 1

        candidates = filter_by_size(
            completed, model, accountant.rho_used, rho, config.max_model_size
        )
        scores = _aim_utilities(exact, model, completed, candidates, schedule.sigma)
        accountant.charge(
            exponential_cost(schedule.eps), "exponential_select", t, eps=schedule.eps
        )
        if config.noiseless:
            pick = int(np.argmax(scores))
        else:
            pick = exponential_mechanism(scores, schedule.eps, sensitivity, fork(config.seed, "select", t))
        chosen = completed.queries[candidates[pick]]

        accountant.charge(
            gaussian_cost(schedule.sigma), "gaussian_measure", t, sigma=schedule.sigma
        )
        counts = exact[chosen.attrs]
        noisy = (
            counts
            if config.noiseless
            else counts + fork(config.seed, "measure", t).normal(0.0, schedule.sigma, chosen.cardinality)
        )
        measurements.append(Measurement(t, chosen, noisy, schedule.sigma, 1.0 / schedule.sigma))
        previous_answer = model.marginal_counts(chosen)
        model = fit(
            measurements,
            domain,
            iterations=config.fit_iters,
            tolerance=config.fit_tolerance,
            warm_start=model,
            max_cells=config.max_cells,
        )
        change = float(np.abs(model.marginal_counts(chosen) - previous_answer).sum())

        entry = {
            "t": t,
            "query": list(chosen.attrs),
            "utility": float(scores[pick]),
            "sigma": schedule.sigma,
            "eps": schedule.eps,
            "rho_used": accountant.rho_used,
            "annealed": False,
            "final": finishing,
        }
        if not fixed:
            if finishing:
                rounds_log.append(entry)
                break
            passed = annealing_condition(change, schedule.sigma, chosen.cardinality)
            if passed:
                schedule = anneal_step(schedule, True)
                entry["annealed"] = True
            if final_round_triggered(accountant.remaining, schedule):
                schedule = final_round_adjust(accountant.remaining, schedule)
                finishing = True
        rounds_log.append(entry)

    model = fit(
        measurements,
        domain,
        iterations=config.final_fit_iters,
        tolerance=config.final_fit_tolerance,
        warm_start=model,
        max_cells=config.max_cells,
    )
    return AimResult(model=model, accountant=accountant, rounds=rounds_log, completed_workload=completed)
