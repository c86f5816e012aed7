"""Action embeddings inferred through a learned state-transition model.

A small network takes the current state features plus a per-action-category
embedding and predicts the next state features; minimizing the squared
prediction error backpropagates into both the network and the embedding of
the action that was taken. The learned embeddings are shared across all
demonstrators and can replace the hand-built per-action features in the
counterfactual pipeline.

Scheduling actions are bucketed into finitely many categories: the acting
agent crossed with coarse duration and slack buckets, plus WAIT on its own.
"""

from __future__ import annotations

from dataclasses import dataclass, replace as dc_replace
from typing import Sequence

import numpy as np

from . import mlp
from .bnn import TrainConfig
from .encoding import policy_input_dim  # noqa: F401  (kept for symmetry with peers)
from .errors import NumericError, UsageError
from .jobshop import STATE_FEATURE_DIM, Demonstration, DemoStep

DEFAULT_ACTION_EMBED_DIM = 4
DURATION_EDGES = (0.35, 0.6)  # on the duration/10 feature
SLACK_EDGES = (0.1, 0.3)  # on the completion-slack feature

ActionEmbeddingTable = dict[int, np.ndarray]


def num_categories(num_agents: int) -> int:
    return 1 + num_agents * 9


def category_of(action_id: int, features: np.ndarray, num_tasks: int, num_agents: int) -> int:
    """Category 0 is WAIT; assignments bucket on (agent, duration, slack)."""
    if action_id == num_tasks * num_agents:
        return 0
    agent = action_id % num_agents
    dur = features[1]
    slack = features[0]
    dur_bucket = int(np.searchsorted(DURATION_EDGES, dur, side="right"))
    slack_bucket = int(np.searchsorted(SLACK_EDGES, slack, side="right"))
    return 1 + agent * 9 + dur_bucket * 3 + slack_bucket


def init_table(num_agents: int, embed_dim: int, seed: int) -> ActionEmbeddingTable:
    # small uniform init: zero-init would give every category an identical
    # gradient under the shared network and never break symmetry
    rng = np.random.default_rng(seed)
    return {
        cat: rng.uniform(-0.1, 0.1, size=embed_dim)
        for cat in range(num_categories(num_agents))
    }


def transition_pairs(demo: Demonstration) -> list[tuple[DemoStep, int, np.ndarray]]:
    """(step, category of taken action, next-state features) per transition."""
    pairs = []
    for cur, nxt in zip(demo.steps, demo.steps[1:]):
        feats = cur.features_of(cur.chosen_action_id)
        cat = category_of(cur.chosen_action_id, feats, demo.num_tasks, demo.num_agents)
        pairs.append((cur, cat, nxt.state_features))
    return pairs


def train_transition(
    demos: Sequence[Demonstration],
    cfg: TrainConfig,
    embed_dim: int = DEFAULT_ACTION_EMBED_DIM,
) -> tuple[mlp.NetworkParams, ActionEmbeddingTable, list[float]]:
    """Fit the transition network and the shared action-embedding table.

    The loss is half the squared error between predicted and observed next
    state features; the embedding table is keyed by action category only, so
    it carries nothing demonstrator-specific.
    """
    demos = list(demos)
    if not demos:
        raise UsageError("training needs at least one demonstration")
    num_agents = demos[0].num_agents
    items: list[tuple[DemoStep, int, np.ndarray]] = []
    for demo in demos:
        items.extend(transition_pairs(demo))
    if not items:
        raise UsageError("no consecutive step pairs to train the transition model on")

    psi = mlp.init_network(
        [STATE_FEATURE_DIM + embed_dim, *cfg.hidden_sizes, STATE_FEATURE_DIM],
        seed=cfg.seed,
        output_head="identity",
    )
    table = init_table(num_agents, embed_dim, cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    loss_curve: list[float] = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(items))
        total = 0.0
        for start in range(0, len(order), cfg.minibatch_size):
            batch = [items[j] for j in order[start : start + cfg.minibatch_size]]
            rows = [
                np.concatenate([step.state_features, table[cat]]) for step, cat, _ in batch
            ]
            targets = np.vstack([target for _, _, target in batch])
            inputs = np.vstack(rows)
            preds, cache = mlp.forward_batch(psi, inputs)
            err = preds - targets
            batch_loss = 0.5 * float(np.sum(err * err))
            if not np.isfinite(batch_loss):
                raise NumericError(f"transition loss diverged at epoch {epoch}")
            total += batch_loss
            grads, input_grads = mlp.backward_batch(psi, cache, err / len(batch))
            mlp.sgd_step_inplace(psi, grads, cfg.lr_theta)
            if cfg.lr_omega > 0.0:
                for r, (_, cat, _) in enumerate(batch):
                    table[cat] = table[cat] - cfg.lr_omega * input_grads[r, STATE_FEATURE_DIM:]
        loss_curve.append(total / len(items))
    return psi, table, loss_curve


def substitute_step(
    step: DemoStep, table: ActionEmbeddingTable, num_tasks: int, num_agents: int
) -> DemoStep:
    new_feats = []
    for aid, feats in zip(step.action_ids, step.action_features):
        cat = category_of(aid, feats, num_tasks, num_agents)
        if cat not in table:
            raise UsageError(f"action category {cat} missing from the embedding table")
        new_feats.append(table[cat].copy())
    return DemoStep(
        state_features=step.state_features,
        action_ids=list(step.action_ids),
        action_features=new_feats,
        chosen_action_id=step.chosen_action_id,
    )


def substitute_embeddings(
    demos: Sequence[Demonstration], table: ActionEmbeddingTable
) -> list[Demonstration]:
    """Replace every step's per-action feature vectors with the embedding of
    that action's category. The rest of the pipeline runs unchanged."""
    return [
        dc_replace(
            demo,
            steps=[
                substitute_step(s, table, demo.num_tasks, demo.num_agents) for s in demo.steps
            ],
        )
        for demo in demos
    ]
