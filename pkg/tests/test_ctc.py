"""CTC tests. The exact-enumeration oracle is the ground truth for the
forward-backward loss; gradients are checked by central finite differences."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sincasr import ctc, nn


def _random_instance(rng, max_t=6, max_k=4, normalized=True):
    steps = int(rng.integers(1, max_t + 1))
    num_classes = int(rng.integers(2, max_k + 1))
    x = rng.normal(size=(steps, num_classes))
    lp = nn.log_softmax(x) if normalized else x - 2.0
    max_len = steps  # may be infeasible if repeats appear; filtered below
    label = [int(v) for v in rng.integers(1, num_classes, size=rng.integers(0, max_len + 1))]
    return lp, label, num_classes


# ---------------------------------------------------------------------------
# collapse


def test_collapse_blank_separated():
    # 0 is blank: "X _ Y Y _ Z" -> XYZ
    assert ctc.collapse_path([1, 0, 2, 2, 0, 3]) == [1, 2, 3]


def test_collapse_leading_trailing_blanks():
    # "_ X Y _ Z _" -> XYZ
    assert ctc.collapse_path([0, 1, 2, 0, 3, 0]) == [1, 2, 3]


def test_collapse_repeat_needs_blank():
    assert ctc.collapse_path([1, 1]) == [1]
    assert ctc.collapse_path([1, 0, 1]) == [1, 1]


def test_collapse_empty_and_all_blank():
    assert ctc.collapse_path([]) == []
    assert ctc.collapse_path([0, 0, 0]) == []


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(0, 4), max_size=16))
def test_collapse_blank_free_and_no_longer(path):
    out = ctc.collapse_path(path)
    assert ctc.BLANK not in out
    assert len(out) <= len(path)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(1, 4), max_size=10))
def test_collapse_roundtrip_blank_interleaved(label):
    """Any label survives a pass through its blank-separated alignment."""
    path = [ctc.BLANK]
    for v in label:
        path += [v, ctc.BLANK]
    assert ctc.collapse_path(path) == label


# ---------------------------------------------------------------------------
# min_frames


def test_min_frames():
    assert ctc.min_frames([]) == 0
    assert ctc.min_frames([1, 2]) == 2
    assert ctc.min_frames([1, 1]) == 3
    assert ctc.min_frames([1, 1, 1]) == 5
    assert ctc.min_frames([1, 1, 2, 2]) == 6


# ---------------------------------------------------------------------------
# forward probability against the enumeration oracle


def test_uniform_two_frame_example():
    """T = 2, K = 2, all probabilities 1/2: paths AA, A_, _A give the single
    label A, so p = 3/4."""
    lp = np.log(np.full((2, 2), 0.5))
    p = ctc.brute_force_ctc(lp, [1])
    assert np.isclose(p, 0.75)
    loss, _ = ctc.ctc_loss_and_grad(lp[None], [[1]], [2])
    assert np.isclose(loss, -math.log(0.75), atol=1e-12)


def test_blank_only_label():
    rng = np.random.default_rng(0)
    lp = nn.log_softmax(rng.normal(size=(4, 3)))
    loss, _ = ctc.ctc_loss_and_grad(lp[None], [[]], [4])
    assert np.isclose(loss, -lp[:, 0].sum(), atol=1e-12)


def test_matches_oracle_on_random_instances():
    rng = np.random.default_rng(42)
    checked = 0
    while checked < 60:
        lp, label, _ = _random_instance(rng)
        if lp.shape[0] < ctc.min_frames(label):
            continue
        p_oracle = ctc.brute_force_ctc(lp, label)
        loss, _ = ctc.ctc_loss_and_grad(lp[None], [label], [lp.shape[0]])
        assert abs(loss - (-math.log(p_oracle))) < 1e-9
        checked += 1


def test_oracle_refuses_huge_instances():
    with pytest.raises(ValueError, match="too many"):
        ctc.brute_force_ctc(np.zeros((30, 10)), [1])


def test_total_probability_normalizes():
    """Summing p over every feasible label must give exactly 1 when the
    per-frame scores are a proper distribution."""
    import itertools as it

    rng = np.random.default_rng(7)
    for _ in range(5):
        steps = int(rng.integers(1, 5))
        num_classes = int(rng.integers(2, 4))
        lp = nn.log_softmax(rng.normal(size=(steps, num_classes)) * 2)
        total = 0.0
        for length in range(0, steps + 1):
            for label in it.product(range(1, num_classes), repeat=length):
                label = list(label)
                if ctc.min_frames(label) > steps:
                    continue
                loss, _ = ctc.ctc_loss_and_grad(lp[None], [label], [steps])
                total += math.exp(-loss)
        assert abs(total - 1.0) < 1e-9


def test_loss_nonnegative_on_distributions():
    rng = np.random.default_rng(3)
    for _ in range(20):
        lp, label, _ = _random_instance(rng)
        if lp.shape[0] < ctc.min_frames(label):
            continue
        loss, _ = ctc.ctc_loss_and_grad(lp[None], [label], [lp.shape[0]])
        assert loss >= -1e-12


# ---------------------------------------------------------------------------
# errors


def test_infeasible_label_names_utterance():
    lp = np.log(np.full((2, 3), 1 / 3))
    batch = np.stack([lp, lp])
    with pytest.raises(ValueError, match="utterance 1"):
        ctc.ctc_loss_and_grad(batch, [[1], [2, 2]], [2, 2])


def test_non_finite_log_probs_rejected():
    lp = np.zeros((1, 2, 2))
    lp[0, 0, 0] = np.nan
    with pytest.raises(ValueError, match="non-finite"):
        ctc.ctc_loss_and_grad(lp, [[1]], [2])


def test_label_id_out_of_range():
    lp = np.log(np.full((1, 3, 3), 1 / 3))
    with pytest.raises(ValueError, match="outside the valid range"):
        ctc.ctc_loss_and_grad(lp, [[3]], [3])
    with pytest.raises(ValueError, match="outside the valid range"):
        ctc.ctc_loss_and_grad(lp, [[0]], [3])


def test_alphabet_requires_blank_plus_one():
    with pytest.raises(ValueError, match="size"):
        ctc.Alphabet(1)
    assert ctc.Alphabet(5).blank == 0


# ---------------------------------------------------------------------------
# gradient


@pytest.mark.parametrize("seed", range(5))
def test_gradient_matches_finite_differences(seed):
    rng = np.random.default_rng(200 + seed)
    steps = int(rng.integers(3, 7))
    num_classes = int(rng.integers(2, 5))
    lp = rng.normal(size=(2, steps, num_classes)) - 1.0  # free variables, not normalized
    labels = []
    for _ in range(2):
        while True:
            label = [int(v) for v in rng.integers(1, num_classes, size=rng.integers(1, steps + 1))]
            if ctc.min_frames(label) <= steps - 1:
                break
        labels.append(label)
    frame_lengths = [steps, steps - 1]

    def loss():
        return ctc.ctc_loss_and_grad(lp, labels, frame_lengths)[0]

    _, grad = ctc.ctc_loss_and_grad(lp, labels, frame_lengths)
    report = nn.grad_check(loss, {"lp": lp}, {"lp": grad})
    assert report.passed, report


def test_gradient_zero_on_padded_frames():
    rng = np.random.default_rng(9)
    lp = nn.log_softmax(rng.normal(size=(2, 6, 3)))
    _, grad = ctc.ctc_loss_and_grad(lp, [[1], [2]], [6, 3])
    assert np.all(grad[1, 3:, :] == 0.0)
    assert np.any(grad[1, :3, :] != 0.0)


def test_loss_is_batch_mean():
    rng = np.random.default_rng(10)
    lp1 = nn.log_softmax(rng.normal(size=(4, 3)))
    lp2 = nn.log_softmax(rng.normal(size=(4, 3)))
    l1, _ = ctc.ctc_loss_and_grad(lp1[None], [[1]], [4])
    l2, _ = ctc.ctc_loss_and_grad(lp2[None], [[2, 1]], [4])
    both, _ = ctc.ctc_loss_and_grad(np.stack([lp1, lp2]), [[1], [2, 1]], [4, 4])
    assert np.isclose(both, (l1 + l2) / 2, atol=1e-12)


# ---------------------------------------------------------------------------
# greedy decoding


def test_greedy_decode_collapses_best_path():
    # frame argmaxes: 1, 1, 0, 2 -> [1, 2]
    lp = np.log(
        np.array(
            [
                [[0.1, 0.8, 0.1], [0.2, 0.6, 0.2], [0.9, 0.05, 0.05], [0.1, 0.2, 0.7]],
            ]
        )
    )
    assert ctc.greedy_decode(lp, [4]) == [[1, 2]]


def test_greedy_decode_ties_take_lowest_id():
    lp = np.log(np.full((1, 3, 3), 1 / 3))
    assert ctc.greedy_decode(lp, [3]) == [[]]  # blank (id 0) wins every tie


def test_greedy_decode_respects_frame_lengths():
    lp = np.zeros((1, 4, 2))
    lp[0, :, 1] = 1.0  # label 1 wins everywhere
    assert ctc.greedy_decode(lp, [2]) == [[1]]
