"""Gradient verification suite.

Every differentiable operation gets a named check that builds a small random
instance in double precision, computes the analytic gradient, and compares it
against central finite differences. `run_suite` drives all checks over a set
of seeds; the command line exposes it as `grad-check`. The end-to-end check
pushes a micro model (2 channels, one BiLSTM layer of width 2) through the
CTC loss and verifies every parameter group at a looser tolerance, since
thousands of accumulated float ops amplify rounding in the FD baseline.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable

import numpy as np

from . import ctc, nn
from .model import ModelConfig, build_model
from .sinc import SincLayerConfig, SincParams, sinc_conv_backward, sinc_conv_forward

OP_TOLERANCE = 1e-4
END_TO_END_TOLERANCE = 1e-3


def _rng(seed: int, salt: int) -> np.random.Generator:
    return np.random.default_rng([salt, seed])


def _spread(rng: np.random.Generator, shape, gap: float = 0.1) -> np.ndarray:
    """Random values with pairwise gaps well above the FD step so argmax
    routing and ReLU kinks cannot flip under perturbation."""
    n = int(np.prod(shape))
    vals = (np.arange(n) - n / 2) * gap + rng.uniform(-0.02, 0.02)
    return rng.permutation(vals).reshape(shape)


def check_linear(seed: int) -> nn.GradCheckReport:
    rng = _rng(seed, 1)
    x = rng.normal(size=(3, 4))
    w = rng.normal(size=(5, 4))
    b = rng.normal(size=5)
    proj = rng.normal(size=(3, 5))

    def loss():
        return float(np.sum(nn.linear(x, w, b) * proj))

    gx, gw, gb = nn.linear_backward(proj, x, w)
    return nn.grad_check(loss, {"x": x, "w": w, "b": b},
                         {"x": gx, "w": gw, "b": gb}, tolerance=OP_TOLERANCE)


def check_conv1d(seed: int) -> nn.GradCheckReport:
    rng = _rng(seed, 2)
    stride = int(rng.integers(1, 4))
    x = rng.normal(size=(2, 2, 14))
    w = rng.normal(size=(3, 2, 4))
    proj = rng.normal(size=nn.conv1d(x, w, stride).shape)

    def loss():
        return float(np.sum(nn.conv1d(x, w, stride) * proj))

    gx, gw = nn.conv1d_backward(proj, x, w, stride)
    return nn.grad_check(loss, {"x": x, "w": w}, {"x": gx, "w": gw},
                         tolerance=OP_TOLERANCE)


def check_maxpool(seed: int) -> nn.GradCheckReport:
    rng = _rng(seed, 3)
    x = _spread(rng, (2, 2, 13))
    proj = rng.normal(size=(2, 2, 4))

    def loss():
        return float(np.sum(nn.maxpool1d(x, 3) * proj))

    gx = nn.maxpool1d_backward(proj, x, 3)
    return nn.grad_check(loss, {"x": x}, {"x": gx}, tolerance=OP_TOLERANCE)


def check_relu(seed: int) -> nn.GradCheckReport:
    rng = _rng(seed, 4)
    x = _spread(rng, (3, 8))
    proj = rng.normal(size=(3, 8))

    def loss():
        return float(np.sum(nn.relu(x) * proj))

    gx = nn.relu_backward(proj, x)
    return nn.grad_check(loss, {"x": x}, {"x": gx}, tolerance=OP_TOLERANCE)


def check_batchnorm(seed: int) -> nn.GradCheckReport:
    rng = _rng(seed, 5)
    bn = nn.BatchNorm1d(2, dtype=np.float64)
    bn.gamma[:] = rng.normal(size=2)
    bn.beta[:] = rng.normal(size=2)
    x = rng.normal(size=(3, 2, 5))
    lengths = np.array([5, 3, 4])
    proj = rng.normal(size=(3, 2, 5))

    def loss():
        return float(np.sum(bn.forward(x, lengths=lengths, train=True) * proj))

    loss()  # populate the cache at the unperturbed point
    bn.zero_grads()
    gx = bn.backward(proj)
    return nn.grad_check(
        loss,
        {"x": x, "gamma": bn.gamma, "beta": bn.beta},
        {"x": gx, "gamma": bn.grad_gamma.copy(), "beta": bn.grad_beta.copy()},
        tolerance=OP_TOLERANCE,
    )


def check_bilstm(seed: int) -> nn.GradCheckReport:
    rng = _rng(seed, 6)
    layer = nn.BiLSTM(2, 2, rng, dtype=np.float64)
    x = rng.normal(size=(2, 3, 2))
    lengths = np.array([3, 2])
    proj = rng.normal(size=(2, 3, 4))

    def loss():
        return float(np.sum(layer.forward(x, lengths) * proj))

    loss()
    layer.zero_grads()
    gx = layer.backward(proj)
    return nn.grad_check(
        loss,
        {"x": x, **layer.params},
        {"x": gx, **{k: v.copy() for k, v in layer.grads.items()}},
        tolerance=OP_TOLERANCE,
    )


def check_log_softmax(seed: int) -> nn.GradCheckReport:
    rng = _rng(seed, 7)
    x = rng.normal(size=(2, 3, 5)) * 3.0
    proj = rng.normal(size=(2, 3, 5))

    def loss():
        return float(np.sum(nn.log_softmax(x) * proj))

    y = nn.log_softmax(x)
    gx = nn.log_softmax_backward(proj, y)
    return nn.grad_check(loss, {"x": x}, {"x": gx}, tolerance=OP_TOLERANCE)


def check_dropout(seed: int) -> nn.GradCheckReport:
    rng = _rng(seed, 8)
    x = rng.normal(size=(3, 6))
    _, mask = nn.dropout(x, 0.4, rng=np.random.default_rng(seed), train=True)
    proj = rng.normal(size=(3, 6))

    def loss():
        return float(np.sum(x * mask * proj))

    gx = nn.dropout_backward(proj, mask)
    return nn.grad_check(loss, {"x": x}, {"x": gx}, tolerance=OP_TOLERANCE)


def check_sinc(seed: int) -> nn.GradCheckReport:
    rng = _rng(seed, 9)
    fs = 8000.0
    config = SincLayerConfig(num_filters=3, kernel_length=31, sample_rate=fs)
    # cutoffs well inside (0, fs/2): keeps |.| and Nyquist-clamp kinks away
    # from the FD perturbation
    params = SincParams(
        low_hz=rng.uniform(0.05 * fs, 0.3 * fs, size=3),
        band_hz=rng.uniform(0.05 * fs, 0.15 * fs, size=3),
    )
    x = rng.normal(size=(2, 1, 80))
    proj = rng.normal(size=(2, 3, 50))

    def loss():
        return float(np.sum(sinc_conv_forward(x, params, config) * proj))

    gx, glow, gband = sinc_conv_backward(proj, x, params, config)
    return nn.grad_check(
        loss,
        {"x": x, "low_hz": params.low_hz, "band_hz": params.band_hz},
        {"x": gx, "low_hz": glow, "band_hz": gband},
        tolerance=OP_TOLERANCE,
    )


def check_ctc(seed: int) -> nn.GradCheckReport:
    rng = _rng(seed, 10)
    frames, classes = 6, 4
    log_probs = rng.normal(size=(2, frames, classes))  # unnormalized is fine
    labels = [[1, 2], [3, 3]]
    frame_lengths = np.array([frames, frames - 1])

    def loss():
        return ctc.ctc_loss_and_grad(log_probs, labels, frame_lengths)[0]

    _, grad = ctc.ctc_loss_and_grad(log_probs, labels, frame_lengths)
    return nn.grad_check(loss, {"log_probs": log_probs}, {"log_probs": grad},
                         tolerance=OP_TOLERANCE)


def check_end_to_end(seed: int) -> nn.GradCheckReport:
    config = ModelConfig(vocab_size=3, channels=2, lstm_layers=1,
                         lstm_hidden=2, dropout=0.0)
    model = build_model(config, seed=seed, dtype=np.float64)
    rng = _rng(seed, 11)
    x = rng.normal(size=(2, 1, 700)) * 0.1
    lengths = [700, 700]
    labels = [[1], [2]]

    def loss():
        lp, fl = model.forward(x, lengths, train=True)
        return ctc.ctc_loss_and_grad(lp, labels, fl)[0]

    lp, fl = model.forward(x, lengths, train=True)
    _, grad = ctc.ctc_loss_and_grad(lp, labels, fl)
    model.zero_grads()
    model.backward(grad)
    analytic = {k: v.copy() for k, v in model.named_grads().items()}
    return nn.grad_check(loss, model.named_params(), analytic,
                         tolerance=END_TO_END_TOLERANCE)


OP_CHECKS: dict[str, Callable[[int], nn.GradCheckReport]] = {
    "linear": check_linear,
    "conv1d": check_conv1d,
    "maxpool": check_maxpool,
    "relu": check_relu,
    "batchnorm": check_batchnorm,
    "bilstm": check_bilstm,
    "log_softmax": check_log_softmax,
    "dropout": check_dropout,
    "sinc": check_sinc,
    "ctc": check_ctc,
}

ALL_CHECKS: dict[str, Callable[[int], nn.GradCheckReport]] = {
    **OP_CHECKS,
    "end_to_end": check_end_to_end,
}


@dataclass
class CheckResult:
    name: str
    seed: int
    report: nn.GradCheckReport

    def line(self) -> str:
        status = "PASS" if self.report.passed else "FAIL"
        return (f"{self.name:<12s} seed {self.seed:>3d}: {status}  "
                f"max rel err {self.report.max_rel_err:.3e} "
                f"(tol {self.report.tolerance:.0e}, worst {self.report.worst})")


def run_suite(seeds: Iterable[int], names: Iterable[str] | None = None) -> list[CheckResult]:
    """Run the named checks (default: all of them) for every seed."""
    chosen = list(ALL_CHECKS) if names is None else list(names)
    unknown = [n for n in chosen if n not in ALL_CHECKS]
    if unknown:
        raise ValueError(f"unknown check names {unknown}; "
                         f"available: {sorted(ALL_CHECKS)}")
    results = []
    for name in chosen:
        for seed in seeds:
            results.append(CheckResult(name, seed, ALL_CHECKS[name](seed)))
    return results


def all_passed(results: Iterable[CheckResult]) -> bool:
    return all(r.report.passed for r in results)
