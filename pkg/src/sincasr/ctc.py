"""Connectionist temporal classification: exact loss and gradient via the
forward-backward algorithm on the blank-extended label lattice.

Conventions: class 0 is the blank. A label of length m is extended to
S = 2m + 1 states (blank, l1, blank, l2, ..., blank). State s may be entered
from s, s-1, or, when it is a label state differing from the label two states
back, from s-2. All recursions run in log space with logaddexp, so very long
sequences cannot underflow. The gradient returned is with respect to the raw
log_probs tensor treated as free variables (no implicit softmax coupling).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

BLANK = 0

NEG_INF = -np.inf


@dataclass(frozen=True)
class Alphabet:
    """Output alphabet: ids 0..size-1 with 0 reserved for the blank."""

    size: int

    def __post_init__(self):
        if self.size < 2:
            raise ValueError(f"alphabet needs the blank plus at least one label, got size {self.size}")

    @property
    def blank(self) -> int:
        return BLANK


def validate_label(label, num_classes: int) -> list[int]:
    out = [int(v) for v in label]
    for v in out:
        if not 1 <= v < num_classes:
            raise ValueError(f"label id {v} outside the valid range [1, {num_classes - 1}]")
    return out


def min_frames(label) -> int:
    """Shortest frame count that can emit the label: its length plus one
    mandatory blank between each adjacent repeated pair."""
    label = list(label)
    repeats = sum(1 for a, b in zip(label, label[1:]) if a == b)
    return len(label) + repeats


def collapse_path(path) -> list[int]:
    """Merge consecutive duplicates, then drop blanks."""
    out = []
    prev = None
    for p in path:
        p = int(p)
        if p != prev and p != BLANK:
            out.append(p)
        prev = p
    return out


def _extend(label: list[int]) -> np.ndarray:
    ext = np.zeros(2 * len(label) + 1, dtype=np.int64)
    ext[1::2] = label
    return ext


def _forward_backward(lp: np.ndarray, label: list[int]):
    """lp: (T, K) log scores for one utterance. Returns (logp, grad)."""
    steps, num_classes = lp.shape
    ext = _extend(label)
    n_states = ext.size
    # skip transition s-2 -> s allowed into label states that differ from the
    # label two back
    can_skip = np.zeros(n_states, dtype=bool)
    if n_states > 2:
        can_skip[2:] = (ext[2:] != BLANK) & (ext[2:] != ext[:-2])

    lp_ext = lp[:, ext]  # (T, S)

    alpha = np.full((steps, n_states), NEG_INF)
    alpha[0, 0] = lp_ext[0, 0]
    if n_states > 1:
        alpha[0, 1] = lp_ext[0, 1]
    for t in range(1, steps):
        prev = alpha[t - 1]
        stay = prev
        step1 = np.concatenate(([NEG_INF], prev))[:n_states]
        step2 = np.concatenate(([NEG_INF, NEG_INF], prev))[:n_states]
        step2 = np.where(can_skip, step2, NEG_INF)
        alpha[t] = np.logaddexp(np.logaddexp(stay, step1), step2) + lp_ext[t]

    if n_states > 1:
        logp = np.logaddexp(alpha[-1, -1], alpha[-1, -2])
    else:
        logp = alpha[-1, -1]

    beta = np.full((steps, n_states), NEG_INF)
    beta[-1, -1] = lp_ext[-1, -1]
    if n_states > 1:
        beta[-1, -2] = lp_ext[-1, -2]
    for t in range(steps - 2, -1, -1):
        nxt = beta[t + 1]
        stay = nxt
        step1 = np.concatenate((nxt[1:], [NEG_INF]))
        step2 = np.concatenate((nxt[2:], [NEG_INF, NEG_INF]))[:n_states]
        skip_from = np.concatenate((can_skip[2:], [False, False]))[:n_states]
        beta[t] = np.logaddexp(np.logaddexp(stay, step1), np.where(skip_from, step2, NEG_INF)) + lp_ext[t]

    # state occupancies; alpha and beta both include lp at t, divide one out
    vals = alpha + beta - lp_ext  # (T, S)
    acc = np.full((steps, num_classes), NEG_INF)
    for s in range(n_states):
        k = ext[s]
        acc[:, k] = np.logaddexp(acc[:, k], vals[:, s])
    grad = -np.exp(acc - logp)
    return logp, grad


def ctc_loss_and_grad(log_probs, labels, frame_lengths, label_lengths=None):
    """Mean negative log-likelihood over the batch and its exact gradient.

    log_probs: (B, T, K) with class 0 the blank; labels: one id sequence per
    utterance; frame_lengths: valid frames per utterance. Returns
    (loss, grad) where grad has the shape of log_probs and is zero at padded
    frames. Infeasible label/frame combinations raise, naming the utterance.
    """
    log_probs = np.asarray(log_probs)
    if log_probs.ndim != 3:
        raise ValueError(f"expected (B, T, K) log_probs, got shape {log_probs.shape}")
    if not np.all(np.isfinite(log_probs)):
        raise ValueError("log_probs contain non-finite values")
    batch, steps, num_classes = log_probs.shape
    frame_lengths = np.asarray(frame_lengths)
    if len(labels) != batch or frame_lengths.shape[0] != batch:
        raise ValueError("labels and frame_lengths must match the batch size")
    if label_lengths is None:
        label_lengths = [len(l) for l in labels]

    grad = np.zeros_like(log_probs, dtype=np.float64)
    total = 0.0
    for b in range(batch):
        t_b = int(frame_lengths[b])
        if not 1 <= t_b <= steps:
            raise ValueError(f"utterance {b}: frame length {t_b} outside [1, {steps}]")
        label = validate_label(list(labels[b])[: int(label_lengths[b])], num_classes)
        need = min_frames(label)
        if t_b < need:
            raise ValueError(
                f"utterance {b}: label of length {len(label)} needs at least "
                f"{need} frames, got {t_b}"
            )
        logp, g = _forward_backward(log_probs[b, :t_b].astype(np.float64), label)
        total -= logp
        grad[b, :t_b] = g
    loss = total / batch
    grad /= batch
    return loss, grad.astype(log_probs.dtype)


def brute_force_ctc(log_probs, label) -> float:
    """Oracle: total probability of the label by summing every alignment path.

    Enumerates all K^T frame-label paths, so it refuses instances beyond
    10^6 paths.
    """
    lp = np.asarray(log_probs, dtype=np.float64)
    steps, num_classes = lp.shape
    if num_classes**steps > 1e6:
        raise ValueError(f"{num_classes}^{steps} paths is too many to enumerate")
    target = [int(v) for v in label]
    total = 0.0
    for path in itertools.product(range(num_classes), repeat=steps):
        if collapse_path(path) == target:
            total += math.exp(sum(lp[t, k] for t, k in enumerate(path)))
    return total


def greedy_decode(log_probs, frame_lengths) -> list[list[int]]:
    """Best-path decoding: per-frame argmax (ties to the lowest id), then
    collapse. log_probs: (B, T, K)."""
    log_probs = np.asarray(log_probs)
    frame_lengths = np.asarray(frame_lengths)
    best = np.argmax(log_probs, axis=2)
    return [collapse_path(best[b, : int(frame_lengths[b])]) for b in range(log_probs.shape[0])]
