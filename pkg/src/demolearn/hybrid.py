"""Runtime switch from a baseline predictor to the embedding-conditioned one.

The baseline makes the predictions while the online embedding is still
moving; the embedding is updated every step regardless. Once the step-to-step
embedding change drops below epsilon the episode latches onto the
embedding-conditioned network for good.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import bnn, mlp
from .encoding import candidate_distribution, rank_candidates
from .errors import ConfigError, UsageError
from .jobshop import DemoStep

BASELINE, BNN = "baseline", "bnn"


@dataclass
class ShiftStep:
    predictor_used: str
    omega_delta_norm: float
    predicted_action_id: int
    ranking: list[int]
    correct: bool
    omega_after: np.ndarray | None = None


@dataclass
class ShiftTrace:
    steps: list[ShiftStep]
    switch_step: int | None  # index of the first step predicted by the embedding net

    def predictor_sequence(self) -> list[str]:
        return [s.predictor_used for s in self.steps]


RankFn = Callable[[DemoStep, np.ndarray], list[int]]
OmegaStepFn = Callable[[DemoStep, np.ndarray], np.ndarray]


def run_shift(
    baseline_rank: RankFn,
    bnn_rank: RankFn,
    omega_step: OmegaStepFn,
    stream: Sequence[DemoStep],
    epsilon: float,
    initial_omega: np.ndarray,
) -> ShiftTrace:
    """Generic switch driver shared by the standard and pairwise variants.

    Per step: predict with the active ranker, update the embedding, then test
    the convergence condition on the update just made. The check needs two
    consecutive embedding values, so the earliest possible switch affects the
    second step; once taken it never reverts.
    """
    if epsilon <= 0.0:
        raise ConfigError("epsilon must be strictly positive; the switch condition is a "
                          "strict inequality and can never fire at zero")
    omega = np.array(initial_omega, dtype=np.float64)
    steps: list[ShiftStep] = []
    switched = False
    switch_step: int | None = None
    for t, step in enumerate(stream):
        if switched:
            ranking = bnn_rank(step, omega)
            used = BNN
        else:
            ranking = baseline_rank(step, omega)
            used = BASELINE
        new_omega = omega_step(step, omega)
        delta = float(np.linalg.norm(new_omega - omega))
        omega = new_omega
        if not switched and delta < epsilon:
            switched = True
            switch_step = t + 1
        steps.append(
            ShiftStep(
                predictor_used=used,
                omega_delta_norm=delta,
                predicted_action_id=ranking[0],
                ranking=ranking,
                correct=ranking[0] == step.chosen_action_id,
            )
        )
    if switch_step is not None and switch_step >= len(steps):
        switch_step = None  # condition fired but no step was ever predicted by the bnn
    return ShiftTrace(steps, switch_step)


def run_episode(
    theta: mlp.NetworkParams,
    cfg: bnn.TrainConfig,
    baseline: mlp.NetworkParams,
    stream: Sequence[DemoStep],
    num_slots: int,
) -> ShiftTrace:
    """Standard variant: baseline and embedding-conditioned slot networks.

    Neither parameter set is modified; the embedding trajectory matches
    bnn.adapt_online on the same stream exactly.
    """

    def baseline_rank(step: DemoStep, _omega: np.ndarray) -> list[int]:
        logits = bnn.slot_logits(baseline, step, num_slots, None)
        probs = candidate_distribution(logits, step.action_ids)
        return rank_candidates(probs, step.action_ids)

    def bnn_rank(step: DemoStep, omega: np.ndarray) -> list[int]:
        logits = bnn.slot_logits(theta, step, num_slots, omega)
        probs = candidate_distribution(logits, step.action_ids)
        return rank_candidates(probs, step.action_ids)

    def omega_step(step: DemoStep, omega: np.ndarray) -> np.ndarray:
        if cfg.lr_omega == 0.0:
            return omega.copy()
        grad = bnn.omega_gradient(theta, step, num_slots, omega, cfg.renyi_alpha)
        return omega - cfg.lr_omega * grad

    return run_shift(
        baseline_rank, bnn_rank, omega_step, stream, cfg.epsilon, bnn.new_embedding(cfg)
    )


def episode_accuracy(
    trace: ShiftTrace, ground_truth: Sequence[int]
) -> tuple[float | None, float | None, float | None]:
    """(overall, pre-switch, post-switch) exact fractions; empty segments are
    None, never zero."""
    if len(trace.steps) != len(ground_truth):
        raise UsageError("trace length does not match the ground-truth sequence")
    flags = [s.predicted_action_id == truth for s, truth in zip(trace.steps, ground_truth)]
    cut = trace.switch_step if trace.switch_step is not None else len(flags)
    pre, post = flags[:cut], flags[cut:]

    def frac(xs):
        return sum(xs) / len(xs) if xs else None

    return frac(flags), frac(pre), frac(post)
