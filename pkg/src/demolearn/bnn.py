"""Policy network conditioned on a per-demonstrator embedding.

Training runs plain SGD concurrently on the shared weights and on each
demonstrator's embedding: every example updates both in the same step, the
embedding through the gradient of the loss with respect to its input slice.
At test time the weights are frozen and only a fresh embedding is adapted,
one gradient step per observed decision.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import mlp
from .encoding import candidate_distribution, policy_input, policy_input_dim
from .errors import ConfigError, NumericError, UsageError
from .jobshop import DemoStep, Demonstration, featurize, SchedulingState
from .numerics import renyi_divergence, renyi_grad

DEFAULT_HIDDEN = (32, 32)


@dataclass
class TrainConfig:
    lr_theta: float = 1e-2
    lr_omega: float = 1e-1
    renyi_alpha: float = 0.9
    embed_dim: int = 3
    epochs: int = 50
    minibatch_size: int = 1
    seed: int = 0
    epsilon: float = 1e-3  # embedding-convergence threshold used by hybrid_shift
    hidden_sizes: tuple[int, ...] = DEFAULT_HIDDEN

    def __post_init__(self):
        if self.lr_theta <= 0 or self.lr_omega < 0:
            raise ConfigError("lr_theta must be positive and lr_omega nonnegative")
        if self.embed_dim < 1:
            raise ConfigError("embed_dim must be at least 1")
        if self.epsilon <= 0:
            raise ConfigError("epsilon must be positive")
        if self.minibatch_size < 1:
            raise ConfigError("minibatch_size must be at least 1")


EmbeddingTable = dict[str, np.ndarray]


def new_embedding(cfg: TrainConfig) -> np.ndarray:
    # all-zeros prior for both training and unseen test demonstrators
    return np.zeros(cfg.embed_dim, dtype=np.float64)


def _check_uniform_slots(demos: Sequence[Demonstration]) -> int:
    slots = {d.num_slots for d in demos}
    if len(slots) != 1:
        raise UsageError("demonstrations disagree on the action-slot layout")
    return slots.pop()


def _flat_examples(demos: Sequence[Demonstration]) -> list[tuple[int, int]]:
    items = []
    for di, demo in enumerate(demos):
        if not demo.steps:
            raise UsageError(f"demonstration {demo.demonstrator_id} is empty")
        items.extend((di, si) for si in range(len(demo.steps)))
    return items


def train_concurrent(
    demos: Sequence[Demonstration], cfg: TrainConfig
) -> tuple[mlp.NetworkParams, EmbeddingTable, list[float]]:
    """Concurrent SGD over shared weights and per-demonstrator embeddings.

    Returns the trained network, the embedding table keyed by demonstrator
    id, and the per-epoch mean training loss.
    """
    demos = list(demos)
    if not demos:
        raise UsageError("training needs at least one demonstration")
    num_slots = _check_uniform_slots(demos)
    dim = policy_input_dim(num_slots, embed_dim=cfg.embed_dim)
    theta = mlp.init_network([dim, *cfg.hidden_sizes, num_slots], seed=cfg.seed)
    table: EmbeddingTable = {d.demonstrator_id: new_embedding(cfg) for d in demos}

    rng = np.random.default_rng(cfg.seed)
    items = _flat_examples(demos)
    loss_curve: list[float] = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(items))
        total = 0.0
        for start in range(0, len(order), cfg.minibatch_size):
            batch = [items[j] for j in order[start : start + cfg.minibatch_size]]
            total += _multiclass_batch_update(theta, table, demos, batch, cfg, epoch)
        loss_curve.append(total / len(items))
    return theta, table, loss_curve


def _multiclass_batch_update(
    theta: mlp.NetworkParams,
    table: EmbeddingTable | None,
    demos: Sequence[Demonstration],
    batch: list[tuple[int, int]],
    cfg: TrainConfig,
    epoch: int,
) -> float:
    """One SGD step on a minibatch; returns the summed pre-update loss."""
    rows = []
    targets = []
    owners = []
    for di, si in batch:
        demo = demos[di]
        step = demo.steps[si]
        omega = table[demo.demonstrator_id] if table is not None else None
        rows.append(policy_input(step, demo.num_slots, omega=omega))
        targets.append(step.chosen_action_id)
        owners.append(demo.demonstrator_id)
    inputs = np.vstack(rows)
    probs, cache = mlp.forward_batch(theta, inputs)

    out_grads = np.zeros_like(probs)
    batch_loss = 0.0
    n = len(batch)
    for r in range(n):
        loss = renyi_divergence(probs[r], targets[r], cfg.renyi_alpha)
        if not np.isfinite(loss):
            raise NumericError(f"training loss diverged at epoch {epoch}")
        batch_loss += loss
        out_grads[r] = renyi_grad(probs[r], targets[r], cfg.renyi_alpha) / n
    grads, input_grads = mlp.backward_batch(theta, cache, out_grads)
    mlp.sgd_step_inplace(theta, grads, cfg.lr_theta)
    if table is not None and cfg.lr_omega > 0.0:
        d = cfg.embed_dim
        for r, owner in enumerate(owners):
            table[owner] = table[owner] - cfg.lr_omega * input_grads[r, :d]
    return batch_loss


def train_homogeneous(
    demos: Sequence[Demonstration], cfg: TrainConfig
) -> tuple[mlp.NetworkParams, list[float]]:
    """Baseline network over the pooled data, no embedding slice."""
    demos = list(demos)
    if not demos:
        raise UsageError("training needs at least one demonstration")
    num_slots = _check_uniform_slots(demos)
    dim = policy_input_dim(num_slots)
    theta = mlp.init_network([dim, *cfg.hidden_sizes, num_slots], seed=cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    items = _flat_examples(demos)
    loss_curve: list[float] = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(items))
        total = 0.0
        for start in range(0, len(order), cfg.minibatch_size):
            batch = [items[j] for j in order[start : start + cfg.minibatch_size]]
            total += _multiclass_batch_update(theta, None, demos, batch, cfg, epoch)
        loss_curve.append(total / len(items))
    return theta, loss_curve


def slot_logits(
    theta: mlp.NetworkParams, step: DemoStep, num_slots: int, omega: np.ndarray | None
) -> np.ndarray:
    _, cache = mlp.forward(theta, policy_input(step, num_slots, omega=omega))
    return cache.activations[-1][0]


def predict(
    theta: mlp.NetworkParams,
    omega: np.ndarray | None,
    state_or_step: DemoStep | SchedulingState,
    num_slots: int | None = None,
) -> np.ndarray:
    """Probability vector over the step's legal candidates, in action-id
    order. Accepts a raw scheduling state or a recorded decision step."""
    step = _as_step(state_or_step)
    if num_slots is None:
        num_slots = _infer_num_slots(theta, 0 if omega is None else len(omega))
    logits = slot_logits(theta, step, num_slots, omega)
    return candidate_distribution(logits, step.action_ids)


def _infer_num_slots(theta: mlp.NetworkParams, embed_dim: int) -> int:
    from .jobshop import ACTION_FEATURE_DIM, STATE_FEATURE_DIM

    return (theta.input_dim - embed_dim - STATE_FEATURE_DIM) // ACTION_FEATURE_DIM


def _as_step(state_or_step: DemoStep | SchedulingState) -> DemoStep:
    if isinstance(state_or_step, DemoStep):
        return state_or_step
    state = state_or_step
    from .jobshop import action_to_id

    state_features, per_action = featurize(state)
    ordered = sorted(
        per_action, key=lambda a: action_to_id(a, state.num_tasks, state.num_agents)
    )
    if not ordered:
        raise UsageError("state has no legal actions to predict over")
    return DemoStep(
        state_features=state_features,
        action_ids=[action_to_id(a, state.num_tasks, state.num_agents) for a in ordered],
        action_features=[per_action[a] for a in ordered],
        chosen_action_id=-1,
    )


def omega_gradient(
    theta: mlp.NetworkParams,
    step: DemoStep,
    num_slots: int,
    omega: np.ndarray,
    alpha: float,
) -> np.ndarray:
    """Gradient of the divergence loss at the revealed action with respect
    to the embedding slice of the input."""
    probs, cache = mlp.forward(theta, policy_input(step, num_slots, omega=omega))
    out_grad = renyi_grad(probs, step.chosen_action_id, alpha)
    _, input_grad = mlp.backward(theta, cache, out_grad)
    return input_grad[: len(omega)]


def adapt_online(
    theta: mlp.NetworkParams,
    stream: Iterable[DemoStep],
    cfg: TrainConfig,
    num_slots: int | None = None,
    initial_omega: np.ndarray | None = None,
) -> list[tuple[np.ndarray, np.ndarray]]:
    """Test-time inference of an unseen demonstrator's embedding.

    The network weights stay frozen. At each step the prediction over the
    legal candidates is made first, then the revealed action drives one
    embedding gradient step. Returns [(prediction, omega_after)] per step.
    """
    omega = new_embedding(cfg) if initial_omega is None else np.array(initial_omega, dtype=np.float64)
    if num_slots is None:
        num_slots = _infer_num_slots(theta, len(omega))
    out: list[tuple[np.ndarray, np.ndarray]] = []
    for step in stream:
        logits = slot_logits(theta, step, num_slots, omega)
        prediction = candidate_distribution(logits, step.action_ids)
        if cfg.lr_omega > 0.0:
            grad = omega_gradient(theta, step, num_slots, omega, cfg.renyi_alpha)
            omega = omega - cfg.lr_omega * grad
        out.append((prediction, omega.copy()))
    return out
