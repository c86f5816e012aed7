"""Pairwise counterfactual training set construction and argmax-of-sums
inference.

Every decision step is recast as binary preferences between the chosen action
and each action the demonstrator passed over: the chosen-first pair gets label
1 and its mirror gets label 0, so labels balance exactly. Inference scores a
candidate by summing the preference probability of that candidate over every
rival, then takes the argmax.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import mlp
from .bnn import EmbeddingTable, TrainConfig, new_embedding, _check_uniform_slots
from .errors import DataError, NumericError, UsageError
from .jobshop import STATE_FEATURE_DIM, DemoStep, Demonstration
from .numerics import renyi_divergence, renyi_grad

# f maps (params, feature rows) -> probability that the first action of each
# row's pair is preferred
PreferenceFn = Callable[[object, np.ndarray], np.ndarray]


@dataclass
class PairwiseExample:
    features: np.ndarray  # [omega, state features, first-minus-second action features]
    label: int
    demonstrator_id: str
    t: int


def pairwise_features(
    omega: np.ndarray, state_features: np.ndarray, first: np.ndarray, second: np.ndarray
) -> np.ndarray:
    return np.concatenate([omega, state_features, first - second])


def build_pairwise(demo: Demonstration, omega: np.ndarray) -> list[PairwiseExample]:
    """All counterfactual pairs for one demonstration.

    A step with candidate set A and chosen action a emits 2(|A|-1) examples:
    (a, a') labeled 1 and (a', a) labeled 0 for every a' != a. Forced moves
    emit nothing.
    """
    omega = np.asarray(omega, dtype=np.float64)
    out: list[PairwiseExample] = []
    for t, step in enumerate(demo.steps):
        if step.chosen_action_id not in step.action_ids:
            raise DataError(
                f"demonstration {demo.demonstrator_id} step {t}: chosen action "
                "is not in the recorded legal set"
            )
        chosen = step.features_of(step.chosen_action_id)
        for aid, feats in zip(step.action_ids, step.action_features):
            if aid == step.chosen_action_id:
                continue
            out.append(
                PairwiseExample(
                    pairwise_features(omega, step.state_features, chosen, feats),
                    1,
                    demo.demonstrator_id,
                    t,
                )
            )
            out.append(
                PairwiseExample(
                    pairwise_features(omega, step.state_features, feats, chosen),
                    0,
                    demo.demonstrator_id,
                    t,
                )
            )
    return out


def preference_scores(
    f: PreferenceFn,
    params: object,
    omega: np.ndarray,
    state_features: np.ndarray,
    action_ids: Sequence[int],
    action_features: Sequence[np.ndarray],
) -> np.ndarray:
    """Score each candidate by its summed preference over all rivals."""
    m = len(action_ids)
    rows = []
    for i in range(m):
        for j in range(m):
            if i != j:
                rows.append(
                    pairwise_features(omega, state_features, action_features[i], action_features[j])
                )
    probs = np.asarray(f(params, np.vstack(rows)), dtype=np.float64)
    scores = np.zeros(m)
    idx = 0
    for i in range(m):
        for j in range(m):
            if i != j:
                scores[i] += probs[idx]
                idx += 1
    return scores


def rank_actions(
    f: PreferenceFn,
    params: object,
    omega: np.ndarray,
    state_features: np.ndarray,
    action_ids: Sequence[int],
    action_features: Sequence[np.ndarray],
) -> list[int]:
    """Candidate ids best-first by summed preference; ties to the lower id."""
    if not action_ids:
        raise UsageError("no candidate actions to rank")
    if len(action_ids) == 1:
        return [action_ids[0]]
    scores = preference_scores(f, params, omega, state_features, action_ids, action_features)
    order = sorted(range(len(action_ids)), key=lambda i: (-scores[i], action_ids[i]))
    return [action_ids[i] for i in order]


def predict_action(
    f: PreferenceFn,
    params: object,
    omega: np.ndarray,
    state_features: np.ndarray,
    action_ids: Sequence[int],
    action_features: Sequence[np.ndarray],
) -> int:
    """Argmax of summed pairwise preferences; a lone candidate is returned
    without evaluating f."""
    return rank_actions(f, params, omega, state_features, action_ids, action_features)[0]


def net_preference(params: mlp.NetworkParams, rows: np.ndarray) -> np.ndarray:
    """PreferenceFn view of a trained two-way classifier: P(first preferred)."""
    probs, _ = mlp.forward_batch(params, rows)
    return probs[:, 1]


def pairwise_input_dim(embed_dim: int, action_feature_dim: int) -> int:
    return embed_dim + STATE_FEATURE_DIM + action_feature_dim


def _action_feature_dim(demos: Sequence[Demonstration]) -> int:
    for demo in demos:
        for step in demo.steps:
            if step.action_features:
                return len(step.action_features[0])
    raise UsageError("no action features found in the dataset")


def train_pairwise_bnn(
    demos: Sequence[Demonstration], cfg: TrainConfig
) -> tuple[mlp.NetworkParams, EmbeddingTable, list[float]]:
    """Binary preference classifier trained concurrently with per-demonstrator
    embeddings.

    The embedding enters each example's feature vector live, at the moment the
    example is consumed, so its gradient flows through every pair built from
    the current value. lr_omega = 0 reduces this to a plain pairwise model.
    """
    demos = list(demos)
    if not demos:
        raise UsageError("training needs at least one demonstration")
    _check_uniform_slots(demos)
    afd = _action_feature_dim(demos)
    dim = pairwise_input_dim(cfg.embed_dim, afd)
    theta = mlp.init_network([dim, *cfg.hidden_sizes, 2], seed=cfg.seed)
    table: EmbeddingTable = {d.demonstrator_id: new_embedding(cfg) for d in demos}

    # one item per (step, rival, mirror-side); features are materialized lazily
    items: list[tuple[int, int, int, int]] = []
    for di, demo in enumerate(demos):
        for si, step in enumerate(demo.steps):
            if step.chosen_action_id not in step.action_ids:
                raise DataError(
                    f"demonstration {demo.demonstrator_id} step {si}: chosen action "
                    "is not in the recorded legal set"
                )
            for ai, aid in enumerate(step.action_ids):
                if aid != step.chosen_action_id:
                    items.append((di, si, ai, 1))
                    items.append((di, si, ai, 0))
    if not items:
        raise UsageError("dataset contains only forced moves; nothing to train on")

    rng = np.random.default_rng(cfg.seed)
    loss_curve: list[float] = []
    d = cfg.embed_dim
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(items))
        total = 0.0
        for start in range(0, len(order), cfg.minibatch_size):
            batch = [items[j] for j in order[start : start + cfg.minibatch_size]]
            rows, targets, owners = [], [], []
            for di, si, ai, label in batch:
                demo = demos[di]
                step = demo.steps[si]
                chosen = step.features_of(step.chosen_action_id)
                other = step.action_features[ai]
                first, second = (chosen, other) if label == 1 else (other, chosen)
                rows.append(
                    pairwise_features(table[demo.demonstrator_id], step.state_features, first, second)
                )
                targets.append(label)
                owners.append(demo.demonstrator_id)
            inputs = np.vstack(rows)
            probs, cache = mlp.forward_batch(theta, inputs)
            out_grads = np.zeros_like(probs)
            n = len(batch)
            for r in range(n):
                loss = renyi_divergence(probs[r], targets[r], cfg.renyi_alpha)
                if not np.isfinite(loss):
                    raise NumericError(f"pairwise training loss diverged at epoch {epoch}")
                total += loss
                out_grads[r] = renyi_grad(probs[r], targets[r], cfg.renyi_alpha) / n
            grads, input_grads = mlp.backward_batch(theta, cache, out_grads)
            mlp.sgd_step_inplace(theta, grads, cfg.lr_theta)
            if cfg.lr_omega > 0.0:
                for r, owner in enumerate(owners):
                    table[owner] = table[owner] - cfg.lr_omega * input_grads[r, :d]
        loss_curve.append(total / len(items))
    return theta, table, loss_curve


def step_omega_gradient(
    theta: mlp.NetworkParams, step: DemoStep, omega: np.ndarray, alpha: float
) -> np.ndarray:
    """Mean embedding gradient over one observed step's pairwise examples.

    Forced moves produce no examples and a zero gradient.
    """
    chosen = step.features_of(step.chosen_action_id)
    rows, targets = [], []
    for aid, feats in zip(step.action_ids, step.action_features):
        if aid == step.chosen_action_id:
            continue
        rows.append(pairwise_features(omega, step.state_features, chosen, feats))
        targets.append(1)
        rows.append(pairwise_features(omega, step.state_features, feats, chosen))
        targets.append(0)
    if not rows:
        return np.zeros_like(omega)
    inputs = np.vstack(rows)
    probs, cache = mlp.forward_batch(theta, inputs)
    out_grads = np.zeros_like(probs)
    for r, target in enumerate(targets):
        out_grads[r] = renyi_grad(probs[r], target, alpha) / len(targets)
    _, input_grads = mlp.backward_batch(theta, cache, out_grads)
    return input_grads[:, : len(omega)].sum(axis=0)
