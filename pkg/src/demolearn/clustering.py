"""Clustering comparison methods: k-means-partitioned networks and a
single network augmented with mixture-model posteriors.

Demonstrations are clustered through fixed-length signatures (mean state
features, mean chosen-action features, and a histogram over which agent was
dispatched or WAIT chosen), so a test episode can rebuild its signature
incrementally from the observed prefix and route or weight accordingly.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import mlp
from .bnn import TrainConfig, train_homogeneous, _check_uniform_slots, _flat_examples
from .encoding import policy_input, policy_input_dim
from .errors import ConfigError, NumericError, UsageError
from .jobshop import Demonstration, DemoStep
from .numerics import renyi_divergence, renyi_grad

COV_FLOOR = 1e-6


def signature_of(demo: Demonstration) -> np.ndarray:
    sig = PrefixSignature(demo.num_tasks, demo.num_agents)
    for step in demo.steps:
        sig.observe(step, step.chosen_action_id)
    return sig.vector()


class PrefixSignature:
    """Running-mean signature over an episode prefix.

    Layout: mean state features, mean chosen-action features, then the
    fraction of decisions dispatching each agent and the WAIT fraction.
    Before any observation the signature is all zeros.
    """

    def __init__(self, num_tasks: int, num_agents: int):
        self.num_agents = num_agents
        self.wait_id = num_tasks * num_agents
        self.count = 0
        self._state_sum: np.ndarray | None = None
        self._action_sum: np.ndarray | None = None
        self._choice_counts = np.zeros(num_agents + 1)

    def observe(self, step: DemoStep, chosen_action_id: int) -> None:
        feats = step.features_of(chosen_action_id)
        if self._state_sum is None:
            self._state_sum = np.zeros_like(step.state_features)
            self._action_sum = np.zeros_like(feats)
        self._state_sum = self._state_sum + step.state_features
        self._action_sum = self._action_sum + feats
        if chosen_action_id == self.wait_id:
            self._choice_counts[-1] += 1
        else:
            self._choice_counts[chosen_action_id % self.num_agents] += 1
        self.count += 1

    def vector(self) -> np.ndarray:
        if self.count == 0:
            from .jobshop import ACTION_FEATURE_DIM, STATE_FEATURE_DIM

            return np.zeros(STATE_FEATURE_DIM + ACTION_FEATURE_DIM + self.num_agents + 1)
        return np.concatenate(
            [
                self._state_sum / self.count,
                self._action_sum / self.count,
                self._choice_counts / self.count,
            ]
        )


@dataclass
class ClusterModel:
    kind: str  # "kmeans" | "gmm"
    centroids: np.ndarray  # (k, dim); for gmm these are the component means
    weights: np.ndarray | None = None  # (k,), gmm only
    variances: np.ndarray | None = None  # (k, dim) diagonal, gmm only
    objective_trace: list[float] = field(default_factory=list)

    @property
    def k(self) -> int:
        return self.centroids.shape[0]


def _kmeans_pp_seeds(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    centers = [points[int(rng.integers(n))]]
    for _ in range(k - 1):
        d2 = np.min(
            [np.sum((points - c) ** 2, axis=1) for c in centers], axis=0
        )
        total = d2.sum()
        if total <= 0.0:
            centers.append(points[int(rng.integers(n))])
            continue
        probs = d2 / total
        centers.append(points[int(rng.choice(n, p=probs))])
    return np.vstack(centers)


def kmeans_fit(signatures: np.ndarray, k: int, seed: int, max_iter: int = 100) -> ClusterModel:
    """Lloyd's iterations from a k-means++ seeding, run to an assignment
    fixpoint. The within-cluster sum of squares is recorded per iteration."""
    points = np.asarray(signatures, dtype=np.float64)
    if points.ndim != 2:
        raise UsageError("signatures must be a 2-D array")
    n = points.shape[0]
    if k < 1 or k > n:
        raise UsageError(f"k={k} must be between 1 and the number of signatures ({n})")
    rng = np.random.default_rng(seed)
    centroids = _kmeans_pp_seeds(points, k, rng)
    assignments = None
    trace = []
    for _ in range(max_iter):
        d2 = np.sum((points[:, None, :] - centroids[None, :, :]) ** 2, axis=2)
        new_assign = np.argmin(d2, axis=1)
        trace.append(float(d2[np.arange(n), new_assign].sum()))
        if assignments is not None and np.array_equal(new_assign, assignments):
            break
        assignments = new_assign
        for j in range(k):
            members = points[assignments == j]
            if len(members):
                centroids[j] = members.mean(axis=0)
            # empty clusters keep their previous centroid
    return ClusterModel("kmeans", centroids, objective_trace=trace)


def kmeans_assign(model: ClusterModel, x: np.ndarray) -> int:
    d2 = np.sum((model.centroids - x) ** 2, axis=1)
    return int(np.argmin(d2))


def _log_gaussian_diag(points: np.ndarray, mean: np.ndarray, var: np.ndarray) -> np.ndarray:
    diff2 = (points - mean) ** 2
    return -0.5 * np.sum(diff2 / var + np.log(2.0 * np.pi * var), axis=1)


def gmm_fit(
    signatures: np.ndarray,
    k: int,
    seed: int,
    max_iter: int = 200,
    rel_tol: float = 1e-6,
) -> ClusterModel:
    """Diagonal-covariance EM initialized from a k-means run.

    The log-likelihood trace is recorded per step and is nondecreasing up to
    1e-9; covariance diagonals are floored at 1e-6, with a warning if the
    floor binds persistently.
    """
    points = np.asarray(signatures, dtype=np.float64)
    n, dim = points.shape
    if k < 1 or k > n:
        raise UsageError(f"k={k} must be between 1 and the number of signatures ({n})")
    km = kmeans_fit(points, k, seed)
    assign = np.array([kmeans_assign(km, p) for p in points])
    means = km.centroids.copy()
    variances = np.zeros((k, dim))
    weights = np.zeros(k)
    global_var = np.maximum(points.var(axis=0), COV_FLOOR)
    for j in range(k):
        members = points[assign == j]
        weights[j] = max(len(members), 1) / n
        variances[j] = np.maximum(members.var(axis=0), COV_FLOOR) if len(members) else global_var
    weights = weights / weights.sum()

    trace: list[float] = []
    floored_steps = 0
    for _ in range(max_iter):
        log_p = np.vstack(
            [np.log(weights[j]) + _log_gaussian_diag(points, means[j], variances[j]) for j in range(k)]
        ).T  # (n, k)
        row_max = log_p.max(axis=1, keepdims=True)
        log_norm = row_max[:, 0] + np.log(np.exp(log_p - row_max).sum(axis=1))
        ll = float(log_norm.sum())
        resp = np.exp(log_p - log_norm[:, None])
        trace.append(ll)
        if len(trace) > 1:
            prev = trace[-2]
            if abs(ll - prev) < rel_tol * max(1.0, abs(prev)):
                break
        nk = resp.sum(axis=0)
        weights = np.maximum(nk, 1e-12) / n
        weights = weights / weights.sum()
        any_floor = False
        for j in range(k):
            if nk[j] <= 1e-12:
                continue
            means[j] = resp[:, j] @ points / nk[j]
            var = resp[:, j] @ (points - means[j]) ** 2 / nk[j]
            if np.any(var < COV_FLOOR):
                any_floor = True
            variances[j] = np.maximum(var, COV_FLOOR)
        floored_steps = floored_steps + 1 if any_floor else 0
        if floored_steps >= 10:
            warnings.warn("mixture component variance pinned at the floor; enforcing it")
            floored_steps = 0
    return ClusterModel("gmm", means, weights=weights, variances=variances, objective_trace=trace)


def gmm_posterior(model: ClusterModel, x: np.ndarray) -> np.ndarray:
    if model.kind != "gmm":
        raise UsageError("posterior requires a gmm model")
    x = np.asarray(x, dtype=np.float64)[None, :]
    log_p = np.array(
        [
            np.log(model.weights[j]) + _log_gaussian_diag(x, model.centroids[j], model.variances[j])[0]
            for j in range(model.k)
        ]
    )
    log_p -= log_p.max()
    p = np.exp(log_p)
    return p / p.sum()


def train_clustered_nns(
    demos: Sequence[Demonstration], k: int, cfg: TrainConfig
) -> tuple[ClusterModel, list[mlp.NetworkParams]]:
    """One baseline network per k-means cluster of demonstration signatures.

    Cluster j's network trains only on its own demonstrations, seeded at
    cfg.seed + j so the k = 1 case reproduces the homogeneous baseline
    exactly. Empty clusters trigger a re-seeded refit, up to ten attempts.
    """
    demos = list(demos)
    if not demos:
        raise UsageError("training needs at least one demonstration")
    sigs = np.vstack([signature_of(d) for d in demos])
    model = None
    for attempt in range(10):
        candidate = kmeans_fit(sigs, k, cfg.seed + attempt)
        assign = np.array([kmeans_assign(candidate, s) for s in sigs])
        if all(np.any(assign == j) for j in range(k)):
            model = candidate
            break
    if model is None:
        raise ConfigError(f"could not find a k={k} clustering without empty clusters")
    assign = np.array([kmeans_assign(model, s) for s in sigs])
    networks = []
    for j in range(k):
        members = [d for d, a in zip(demos, assign) if a == j]
        theta, _ = train_homogeneous(members, replace(cfg, seed=cfg.seed + j))
        networks.append(theta)
    return model, networks


def train_gmm_augmented_nn(
    demos: Sequence[Demonstration], k: int, cfg: TrainConfig
) -> tuple[ClusterModel, mlp.NetworkParams]:
    """Single network whose input carries the k-vector of segment posteriors.

    At training time each demonstration contributes its whole-episode
    signature's posterior; at test time the caller recomputes the posterior
    from the evolving prefix signature.
    """
    demos = list(demos)
    if not demos:
        raise UsageError("training needs at least one demonstration")
    num_slots = _check_uniform_slots(demos)
    sigs = np.vstack([signature_of(d) for d in demos])
    model = gmm_fit(sigs, k, cfg.seed)
    posteriors = [gmm_posterior(model, s) for s in sigs]

    dim = policy_input_dim(num_slots, extra_dim=k)
    theta = mlp.init_network([dim, *cfg.hidden_sizes, num_slots], seed=cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    items = _flat_examples(demos)
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(items))
        for start in range(0, len(order), cfg.minibatch_size):
            batch = [items[j] for j in order[start : start + cfg.minibatch_size]]
            rows = [
                policy_input(demos[di].steps[si], num_slots, extra=posteriors[di])
                for di, si in batch
            ]
            targets = [demos[di].steps[si].chosen_action_id for di, si in batch]
            inputs = np.vstack(rows)
            probs, cache = mlp.forward_batch(theta, inputs)
            out_grads = np.zeros_like(probs)
            for r, target in enumerate(targets):
                loss = renyi_divergence(probs[r], target, cfg.renyi_alpha)
                if not np.isfinite(loss):
                    raise NumericError(f"training loss diverged at epoch {epoch}")
                out_grads[r] = renyi_grad(probs[r], target, cfg.renyi_alpha) / len(batch)
            grads, _ = mlp.backward_batch(theta, cache, out_grads)
            mlp.sgd_step_inplace(theta, grads, cfg.lr_theta)
    return model, theta
