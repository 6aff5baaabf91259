"""Output-based uncertainty scores computed from next-token logits."""

from __future__ import annotations

import numpy as np

P_TRUE_SUFFIX = "\nIs the answer correct? Answer Yes or No:"
YES = " Yes"


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def entropy(probs: np.ndarray) -> np.ndarray:
    """Shannon entropy in nats along the last axis; 0 log 0 counts as 0."""
    p = np.asarray(probs, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, -p * np.log(p), 0.0)
    return terms.sum(axis=-1)


def entropy_from_logits(logits: np.ndarray) -> np.ndarray:
    lp = log_softmax(logits)
    p = np.exp(lp)
    return -(np.where(p > 0, p * lp, 0.0)).sum(axis=-1)


def answer_scores(logits: np.ndarray, ids: np.ndarray, answer_start: int) -> tuple:
    """Mean per-token NLL of `ids[answer_start:]` and mean entropy of the
    distributions that predict them.

    `logits[t]` is the distribution over token `t + 1`.
    """
    ids = np.asarray(ids)
    if not 0 < answer_start < len(ids):
        raise ValueError(f"answer_start {answer_start} outside 1..{len(ids) - 1}")
    pred = np.asarray(logits)[answer_start - 1 : len(ids) - 1]
    lp = log_softmax(pred)
    nll = -lp[np.arange(len(pred)), ids[answer_start:]].mean()
    return float(nll), float(entropy_from_logits(pred).mean())


def p_true(last_logits: np.ndarray, yes_id: int) -> float:
    return float(np.exp(log_softmax(last_logits)[yes_id]))
