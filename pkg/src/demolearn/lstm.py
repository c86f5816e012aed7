"""Minimal single-layer LSTM and its embedding-conditioned variant.

Gates follow the standard equations over the concatenated [input, hidden]
vector; a linear projection maps the hidden state to action-slot logits.
Training is truncated backpropagation through time with a single global
max-norm gradient clip. The variant with an embedding ("blstm") appends the
demonstrator vector to every timestep's input and updates it by the same
gradient rule the feed-forward policy uses.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .bnn import EmbeddingTable, TrainConfig, new_embedding, _check_uniform_slots
from .encoding import candidate_distribution, policy_input, policy_input_dim
from .errors import NumericError, UsageError
from .jobshop import DemoStep, Demonstration
from .numerics import renyi_divergence, renyi_grad, softmax

GATE_NAMES = ("w_i", "w_f", "w_o", "w_g")
DEFAULT_HIDDEN_SIZE = 32
DEFAULT_TRUNCATION = 20
GRAD_CLIP = 5.0


@dataclass
class LstmParams:
    w_i: np.ndarray  # (hidden, input + hidden)
    w_f: np.ndarray
    w_o: np.ndarray
    w_g: np.ndarray
    b_i: np.ndarray  # (hidden,)
    b_f: np.ndarray
    b_o: np.ndarray
    b_g: np.ndarray
    w_out: np.ndarray  # (out, hidden)
    b_out: np.ndarray

    @property
    def hidden_size(self) -> int:
        return self.w_i.shape[0]

    @property
    def input_size(self) -> int:
        return self.w_i.shape[1] - self.hidden_size

    @property
    def output_size(self) -> int:
        return self.w_out.shape[0]

    def copy(self) -> "LstmParams":
        return LstmParams(*(getattr(self, f).copy() for f in _FIELDS))


_FIELDS = ("w_i", "w_f", "w_o", "w_g", "b_i", "b_f", "b_o", "b_g", "w_out", "b_out")


@dataclass
class LstmState:
    hidden: np.ndarray
    cell: np.ndarray

    @classmethod
    def zeros(cls, hidden_size: int) -> "LstmState":
        return cls(np.zeros(hidden_size), np.zeros(hidden_size))


def init_lstm(input_size: int, hidden_size: int, output_size: int, seed: int) -> LstmParams:
    rng = np.random.default_rng(seed)

    def gate():
        bound = np.sqrt(6.0 / (input_size + 2 * hidden_size))
        return rng.uniform(-bound, bound, size=(hidden_size, input_size + hidden_size))

    w_i, w_f, w_o, w_g = gate(), gate(), gate(), gate()
    out_bound = np.sqrt(6.0 / (hidden_size + output_size))
    w_out = rng.uniform(-out_bound, out_bound, size=(output_size, hidden_size))
    return LstmParams(
        w_i, w_f, w_o, w_g,
        np.zeros(hidden_size), np.zeros(hidden_size), np.zeros(hidden_size), np.zeros(hidden_size),
        w_out, np.zeros(output_size),
    )


def widen_input(params: LstmParams, extra: int) -> LstmParams:
    """Prepend `extra` zero-weight input columns to every gate.

    The widened model computes exactly what the original does whenever the
    new leading inputs are zero; training leaves those columns at zero as
    long as the extra inputs stay zero.
    """
    out = params.copy()
    for name in GATE_NAMES:
        w = getattr(out, name)
        zeros = np.zeros((w.shape[0], extra))
        setattr(out, name, np.hstack([zeros, w]))
    return out


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-z))


@dataclass
class _StepCache:
    z: np.ndarray  # [input, h_prev]
    i: np.ndarray
    f: np.ndarray
    o: np.ndarray
    g: np.ndarray
    c_prev: np.ndarray
    c: np.ndarray
    tanh_c: np.ndarray
    h: np.ndarray


def lstm_step(
    params: LstmParams, state: LstmState, input_vec: np.ndarray
) -> tuple[np.ndarray, LstmState]:
    logits, new_state, _ = _step_with_cache(params, state, input_vec)
    return logits, new_state


def _step_with_cache(params, state, input_vec):
    x = np.asarray(input_vec, dtype=np.float64)
    if x.shape != (params.input_size,):
        raise UsageError(
            f"input size {x.shape} does not match the network's ({params.input_size},)"
        )
    if state.hidden.shape != (params.hidden_size,):
        raise UsageError("state size does not match the network's hidden size")
    z = np.concatenate([x, state.hidden])
    i = _sigmoid(params.w_i @ z + params.b_i)
    f = _sigmoid(params.w_f @ z + params.b_f)
    o = _sigmoid(params.w_o @ z + params.b_o)
    g = np.tanh(params.w_g @ z + params.b_g)
    c = f * state.cell + i * g
    tanh_c = np.tanh(c)
    h = o * tanh_c
    logits = params.w_out @ h + params.b_out
    cache = _StepCache(z, i, f, o, g, state.cell, c, tanh_c, h)
    return logits, LstmState(h, c), cache


def zero_grads(params: LstmParams) -> LstmParams:
    return LstmParams(*(np.zeros_like(getattr(params, f)) for f in _FIELDS))


def _accumulate_step_backward(
    params: LstmParams,
    cache: _StepCache,
    dlogits: np.ndarray,
    dh_next: np.ndarray,
    dc_next: np.ndarray,
    grads: LstmParams,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Backprop one timestep; returns (dx, dh_prev, dc_prev)."""
    grads.w_out += np.outer(dlogits, cache.h)
    grads.b_out += dlogits
    dh = params.w_out.T @ dlogits + dh_next

    do = dh * cache.tanh_c
    dc = dh * cache.o * (1.0 - cache.tanh_c**2) + dc_next
    df = dc * cache.c_prev
    di = dc * cache.g
    dg = dc * cache.i
    dc_prev = dc * cache.f

    dzi = di * cache.i * (1.0 - cache.i)
    dzf = df * cache.f * (1.0 - cache.f)
    dzo = do * cache.o * (1.0 - cache.o)
    dzg = dg * (1.0 - cache.g**2)

    grads.w_i += np.outer(dzi, cache.z)
    grads.w_f += np.outer(dzf, cache.z)
    grads.w_o += np.outer(dzo, cache.z)
    grads.w_g += np.outer(dzg, cache.z)
    grads.b_i += dzi
    grads.b_f += dzf
    grads.b_o += dzo
    grads.b_g += dzg

    dz = params.w_i.T @ dzi + params.w_f.T @ dzf + params.w_o.T @ dzo + params.w_g.T @ dzg
    n_in = params.input_size
    return dz[:n_in], dz[n_in:], dc_prev


def forward_window(
    params: LstmParams, state: LstmState, inputs: Sequence[np.ndarray]
) -> tuple[np.ndarray, LstmState, list[_StepCache]]:
    """Run a window of timesteps; returns stacked logits, final state, caches."""
    logits_rows = []
    caches = []
    for x in inputs:
        logits, state, cache = _step_with_cache(params, state, x)
        logits_rows.append(logits)
        caches.append(cache)
    return np.vstack(logits_rows), state, caches


def backward_window(
    params: LstmParams, caches: list[_StepCache], dlogits: np.ndarray
) -> tuple[LstmParams, np.ndarray]:
    """Full backprop through a cached window; returns (grads, input grads)."""
    grads = zero_grads(params)
    dh = np.zeros(params.hidden_size)
    dc = np.zeros(params.hidden_size)
    dx_rows = [None] * len(caches)
    for t in range(len(caches) - 1, -1, -1):
        dx, dh, dc = _accumulate_step_backward(params, caches[t], dlogits[t], dh, dc, grads)
        dx_rows[t] = dx
    return grads, np.vstack(dx_rows)


def clip_grads(grads: LstmParams, max_norm: float = GRAD_CLIP) -> LstmParams:
    total = np.sqrt(sum(float(np.sum(getattr(grads, f) ** 2)) for f in _FIELDS))
    if total <= max_norm or total == 0.0:
        return grads
    scale = max_norm / total
    return LstmParams(*(getattr(grads, f) * scale for f in _FIELDS))


def apply_grads(params: LstmParams, grads: LstmParams, lr: float) -> None:
    for f in _FIELDS:
        getattr(params, f)[...] -= lr * getattr(grads, f)


def flatten_lstm(params: LstmParams) -> np.ndarray:
    return np.concatenate([getattr(params, f).ravel() for f in _FIELDS])


def unflatten_lstm(template: LstmParams, flat: np.ndarray) -> LstmParams:
    arrays = []
    pos = 0
    for f in _FIELDS:
        shape = getattr(template, f).shape
        size = int(np.prod(shape))
        arrays.append(np.asarray(flat[pos : pos + size], dtype=np.float64).reshape(shape).copy())
        pos += size
    if pos != flat.size:
        raise UsageError("flat vector length does not match the template")
    return LstmParams(*arrays)


def train_bptt(
    sequences: Sequence[Demonstration],
    cfg: TrainConfig,
    bayesian: bool = False,
    hidden_size: int = DEFAULT_HIDDEN_SIZE,
    truncation: int = DEFAULT_TRUNCATION,
    initial_params: LstmParams | None = None,
) -> tuple[LstmParams, EmbeddingTable | None, list[float]]:
    """Truncated BPTT over whole demonstrations.

    Each epoch visits the demonstrations in a seeded shuffled order and walks
    each one window by window, carrying the recurrent state across windows and
    updating after every window. With bayesian=True the embedding is appended
    to every timestep's input and stepped once per window on the mean of its
    per-step input gradients.
    """
    demos = list(sequences)
    if not demos:
        raise UsageError("training needs at least one demonstration")
    num_slots = _check_uniform_slots(demos)
    embed = cfg.embed_dim if bayesian else 0
    input_size = policy_input_dim(num_slots, embed_dim=embed)
    params = (
        initial_params.copy()
        if initial_params is not None
        else init_lstm(input_size, hidden_size, num_slots, seed=cfg.seed)
    )
    if params.input_size != input_size or params.output_size != num_slots:
        raise UsageError("initial_params shape does not match the dataset layout")
    table: EmbeddingTable | None = (
        {d.demonstrator_id: new_embedding(cfg) for d in demos} if bayesian else None
    )
    rng = np.random.default_rng(cfg.seed)
    n_examples = sum(len(d.steps) for d in demos)
    loss_curve: list[float] = []
    for epoch in range(cfg.epochs):
        total = 0.0
        for di in rng.permutation(len(demos)):
            demo = demos[di]
            omega = table[demo.demonstrator_id] if bayesian else None
            state = LstmState.zeros(hidden_size)
            for start in range(0, len(demo.steps), truncation):
                window = demo.steps[start : start + truncation]
                inputs = [policy_input(s, num_slots, omega=omega) for s in window]
                logits, state, caches = forward_window(params, state, inputs)
                dlogits = np.zeros_like(logits)
                for t, s in enumerate(window):
                    probs = softmax(logits[t])
                    loss = renyi_divergence(probs, s.chosen_action_id, cfg.renyi_alpha)
                    if not np.isfinite(loss):
                        raise NumericError(f"BPTT loss diverged at epoch {epoch}")
                    total += loss
                    g = renyi_grad(probs, s.chosen_action_id, cfg.renyi_alpha)
                    dlogits[t] = probs * (g - np.dot(g, probs)) / len(window)
                grads, dx = backward_window(params, caches, dlogits)
                apply_grads(params, clip_grads(grads), cfg.lr_theta)
                if bayesian and cfg.lr_omega > 0.0:
                    omega = omega - cfg.lr_omega * dx[:, : cfg.embed_dim].mean(axis=0)
                    table[demo.demonstrator_id] = omega
                # recurrent state crosses the window boundary detached
        loss_curve.append(total / n_examples)
    return params, table, loss_curve


def step_omega_gradient(
    params: LstmParams, state: LstmState, step: DemoStep, num_slots: int,
    omega: np.ndarray, alpha: float,
) -> tuple[np.ndarray, np.ndarray, LstmState]:
    """One-step prediction logits plus the embedding gradient through that
    step alone (recurrent weights frozen, no through-time term)."""
    x = policy_input(step, num_slots, omega=omega)
    logits, new_state, cache = _step_with_cache(params, state, x)
    probs = softmax(logits)
    g = renyi_grad(probs, step.chosen_action_id, alpha)
    dlogits = probs * (g - np.dot(g, probs))
    grads = zero_grads(params)
    dx, _, _ = _accumulate_step_backward(params, cache, dlogits, np.zeros(params.hidden_size), np.zeros(params.hidden_size), grads)
    return logits, dx[: len(omega)], new_state


def adapt_online(
    params: LstmParams,
    stream: Sequence[DemoStep],
    cfg: TrainConfig,
    num_slots: int,
) -> list[tuple[np.ndarray, np.ndarray]]:
    """Embedding-only test-time adaptation; mirrors the feed-forward variant."""
    omega = new_embedding(cfg)
    state = LstmState.zeros(params.hidden_size)
    out = []
    for step in stream:
        logits, omega_grad, state = step_omega_gradient(
            params, state, step, num_slots, omega, cfg.renyi_alpha
        )
        prediction = candidate_distribution(logits, step.action_ids)
        if cfg.lr_omega > 0.0:
            omega = omega - cfg.lr_omega * omega_grad
        out.append((prediction, omega.copy()))
    return out
