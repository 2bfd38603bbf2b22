"""Train/evaluate experiment harness.

Constrained training with a projected dual variable settles into a
limit cycle around the constraint boundary, so the policy quality at an
arbitrary stopping iteration is phase luck. The harness interleaves
training chunks with short deterministic evaluations, tracks the best
feasible parameter snapshot, and reports when each predicate was first
reached.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .env import evaluate_policy


@dataclass
class EvalPoint:
    env_steps: int
    iteration: int
    mean_se: float
    mean_active_aps: float
    mean_cost: float
    total_power_w: float


@dataclass
class ExperimentResult:
    history: list[EvalPoint] = field(default_factory=list)
    best_params: dict | None = None
    best_point: EvalPoint | None = None
    first_feasible_steps: int | None = None


def snapshot_params(state) -> dict:
    return {k: p.data.copy() for k, p in state.params.items()}


def restore_params(state, snap: dict) -> None:
    for k, p in state.params.items():
        p.data[:] = snap[k]


def train_with_periodic_eval(trainer, make_eval_env, make_policy,
                             eval_every_iters: int, eval_windows: int,
                             max_env_steps: int, feasible, better,
                             stop_on_feasible_evals: int = 0,
                             on_eval=None) -> ExperimentResult:
    """Run `trainer` until max_env_steps, evaluating every few iterations.

    feasible(point) -> bool marks acceptable operating points; among the
    feasible ones, better(a, b) -> bool orders candidates (True when a
    improves on b). The best feasible parameter snapshot is kept. When
    stop_on_feasible_evals > 0, training stops early after that many
    consecutive feasible evaluations.
    """
    result = ExperimentResult()
    streak = 0
    while trainer.env_steps < max_env_steps:
        for _ in range(eval_every_iters):
            if trainer.env_steps >= max_env_steps:
                break
            trainer.train_iteration()
        env = make_eval_env()
        policy = make_policy(trainer.state)
        episodes = max(1, eval_windows // env.scenario.episode_windows)
        per_episode = min(eval_windows, env.scenario.episode_windows)
        _, summary = evaluate_policy(env, policy, episodes, per_episode)
        point = EvalPoint(
            env_steps=trainer.env_steps,
            iteration=trainer.iteration,
            mean_se=summary["mean_se"][0],
            mean_active_aps=summary["active_aps"][0],
            mean_cost=summary["mean_cost"][0],
            total_power_w=summary["total_power_w"][0],
        )
        result.history.append(point)
        if on_eval is not None:
            on_eval(point)
        if feasible(point):
            streak += 1
            if result.first_feasible_steps is None:
                result.first_feasible_steps = point.env_steps
            if result.best_point is None or better(point, result.best_point):
                result.best_point = point
                result.best_params = snapshot_params(trainer.state)
            if stop_on_feasible_evals and streak >= stop_on_feasible_evals:
                break
        else:
            streak = 0
    if result.best_params is not None:
        restore_params(trainer.state, result.best_params)
    return result
