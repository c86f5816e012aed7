"""Input encodings shared by every slot-based policy learner.

A decision step is encoded as a fixed-width vector: an optional embedding
slice first, then the state features, then one feature block per action slot
(zeros for slots that are not currently legal), then any extra tail (e.g. a
cluster posterior). The action-slot layout is task-major with WAIT last,
matching jobshop.action_to_id.
"""

from __future__ import annotations

import numpy as np

from .errors import UsageError
from .jobshop import ACTION_FEATURE_DIM, STATE_FEATURE_DIM, DemoStep


def slot_block(step: DemoStep, num_slots: int) -> np.ndarray:
    """Per-slot features flattened, zeros at slots without a legal action."""
    block = np.zeros(num_slots * ACTION_FEATURE_DIM, dtype=np.float64)
    for aid, feats in zip(step.action_ids, step.action_features):
        if aid >= num_slots:
            raise UsageError(f"action id {aid} exceeds slot count {num_slots}")
        block[aid * ACTION_FEATURE_DIM : (aid + 1) * ACTION_FEATURE_DIM] = feats
    return block


def policy_input(
    step: DemoStep,
    num_slots: int,
    omega: np.ndarray | None = None,
    extra: np.ndarray | None = None,
) -> np.ndarray:
    parts = []
    if omega is not None:
        parts.append(np.asarray(omega, dtype=np.float64))
    parts.append(np.asarray(step.state_features, dtype=np.float64))
    parts.append(slot_block(step, num_slots))
    if extra is not None:
        parts.append(np.asarray(extra, dtype=np.float64))
    return np.concatenate(parts)


def policy_input_dim(num_slots: int, embed_dim: int = 0, extra_dim: int = 0) -> int:
    return embed_dim + STATE_FEATURE_DIM + num_slots * ACTION_FEATURE_DIM + extra_dim


def candidate_distribution(slot_logits: np.ndarray, candidate_ids: list[int]) -> np.ndarray:
    """Probabilities over the candidate list: softmax of the candidate slots'
    logits (equal to the renormalized full softmax restricted to them)."""
    if not candidate_ids:
        raise UsageError("no candidate actions to rank")
    logits = np.asarray(slot_logits, dtype=np.float64)[candidate_ids]
    shifted = logits - logits.max()
    exps = np.exp(shifted)
    return exps / exps.sum()


def rank_candidates(probs: np.ndarray, candidate_ids: list[int]) -> list[int]:
    """Candidate ids best-first; exact ties resolve to the lower id."""
    order = sorted(range(len(candidate_ids)), key=lambda i: (-probs[i], candidate_ids[i]))
    return [candidate_ids[i] for i in order]
