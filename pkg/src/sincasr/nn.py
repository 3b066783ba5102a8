"""Differentiable 1-D network primitives with explicit analytic backward passes.

Everything operates on plain numpy arrays: float32 for training runs, float64
for verification. Convolutions are always valid (no padding), so sequence
lengths shrink deterministically; `output_length` reproduces that arithmetic
for an arbitrary conv/pool chain. `grad_check` compares any analytic gradient
against central finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def _sigmoid(z: np.ndarray) -> np.ndarray:
    # Split by sign so exp never overflows.
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _im2col(x: np.ndarray, kernel_size: int, stride: int) -> np.ndarray:
    """Unfold (B, C, L) into (B*Lout, C*K) rows of strided windows."""
    windows = np.lib.stride_tricks.sliding_window_view(x, kernel_size, axis=2)
    windows = windows[:, :, ::stride, :]  # (B, C, Lout, K)
    b, c, lout, k = windows.shape
    return np.ascontiguousarray(windows.transpose(0, 2, 1, 3)).reshape(b * lout, c * k)


def conv1d(x: np.ndarray, kernel: np.ndarray, stride: int = 1) -> np.ndarray:
    """Valid (unpadded) cross-correlation.

    x: (B, C, L), kernel: (Cout, C, K) -> (B, Cout, floor((L - K) / stride) + 1).
    """
    batch, channels, length = x.shape
    out_channels, in_channels, kernel_size = kernel.shape
    if in_channels != channels:
        raise ValueError(f"kernel expects {in_channels} input channels, got {channels}")
    if stride < 1:
        raise ValueError(f"stride must be positive, got {stride}")
    if length < kernel_size:
        raise ValueError(f"input length {length} is shorter than kernel size {kernel_size}")
    out_length = (length - kernel_size) // stride + 1
    cols = _im2col(x, kernel_size, stride)
    y = cols @ kernel.reshape(out_channels, channels * kernel_size).T
    return np.ascontiguousarray(y.reshape(batch, out_length, out_channels).transpose(0, 2, 1))


def conv1d_backward(
    gy: np.ndarray, x: np.ndarray, kernel: np.ndarray, stride: int = 1
) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of conv1d w.r.t. input and kernel. gy: (B, Cout, Lout)."""
    batch, channels, length = x.shape
    out_channels, _, kernel_size = kernel.shape
    out_length = gy.shape[2]
    gy2 = np.ascontiguousarray(gy.transpose(0, 2, 1)).reshape(batch * out_length, out_channels)
    cols = _im2col(x, kernel_size, stride)
    gkernel = (gy2.T @ cols).reshape(out_channels, channels, kernel_size)
    gcols = gy2 @ kernel.reshape(out_channels, channels * kernel_size)
    gwin = gcols.reshape(batch, out_length, channels, kernel_size)
    gx = np.zeros_like(x)
    for k in range(kernel_size):
        # Window position j reads x[.., j*stride + k]; scatter-add per tap.
        gx[:, :, k : k + stride * out_length : stride] += gwin[:, :, :, k].transpose(0, 2, 1)
    return gx, gkernel


def maxpool1d(x: np.ndarray, window: int) -> np.ndarray:
    """Non-overlapping max pooling along time; a trailing partial window is dropped."""
    batch, channels, length = x.shape
    if window < 1:
        raise ValueError(f"pool window must be positive, got {window}")
    if length < window:
        raise ValueError(f"input length {length} is shorter than pool window {window}")
    n = length // window
    return x[:, :, : n * window].reshape(batch, channels, n, window).max(axis=3)


def maxpool1d_backward(gy: np.ndarray, x: np.ndarray, window: int) -> np.ndarray:
    """Routes each window's gradient to the first maximum in that window."""
    batch, channels, length = x.shape
    n = length // window
    xw = x[:, :, : n * window].reshape(batch, channels, n, window)
    idx = np.argmax(xw, axis=3)
    gwin = np.zeros_like(xw)
    np.put_along_axis(gwin, idx[..., None], gy[..., None], axis=3)
    gx = np.zeros_like(x)
    gx[:, :, : n * window] = gwin.reshape(batch, channels, n * window)
    return gx


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def relu_backward(gy: np.ndarray, x: np.ndarray) -> np.ndarray:
    # Subgradient 0 at x == 0.
    return gy * (x > 0)


def linear(x: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """x: (..., F), weight: (O, F), bias: (O,) -> (..., O)."""
    if x.shape[-1] != weight.shape[1]:
        raise ValueError(f"input features {x.shape[-1]} do not match weight {weight.shape}")
    return x @ weight.T + bias


def linear_backward(
    gy: np.ndarray, x: np.ndarray, weight: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    out_features, in_features = weight.shape
    gy2 = gy.reshape(-1, out_features)
    x2 = x.reshape(-1, in_features)
    return gy @ weight, gy2.T @ x2, gy2.sum(axis=0)


def log_softmax(x: np.ndarray) -> np.ndarray:
    """Numerically stable log-softmax over the last axis."""
    z = x - x.max(axis=-1, keepdims=True)
    return z - np.log(np.sum(np.exp(z), axis=-1, keepdims=True))


def log_softmax_backward(gy: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Backward through log-softmax; y must be the forward output."""
    return gy - np.exp(y) * gy.sum(axis=-1, keepdims=True)


def dropout(
    x: np.ndarray,
    rate: float,
    rng: np.random.Generator | int | None = None,
    train: bool = True,
) -> tuple[np.ndarray, np.ndarray | None]:
    """Inverted dropout. Returns (y, mask); mask is None when inactive.

    Training mode zeroes each element with probability `rate` and scales
    survivors by 1/(1-rate), so eval mode is the plain identity.
    """
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not train or rate == 0.0:
        return x, None
    if rng is None:
        raise ValueError("training-mode dropout needs a seed or a Generator")
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(int(rng))
    mask = (rng.random(x.shape) >= rate).astype(x.dtype) / (1.0 - rate)
    return x * mask, mask


def dropout_backward(gy: np.ndarray, mask: np.ndarray | None) -> np.ndarray:
    return gy if mask is None else gy * mask


class BatchNorm1d:
    """Per-channel batch normalization over (batch, time) on (B, C, L) inputs.

    An optional per-sequence valid-length vector keeps right-padding out of
    the batch statistics, and the output at padded positions is forced to
    zero. Eval mode is a fixed affine map from the running statistics;
    backward is only defined for the most recent training-mode forward.
    """

    def __init__(self, channels: int, eps: float = 1e-5, momentum: float = 0.1,
                 dtype=np.float32):
        self.channels = channels
        self.eps = eps
        self.momentum = momentum
        self.gamma = np.ones(channels, dtype=dtype)
        self.beta = np.zeros(channels, dtype=dtype)
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self.grad_gamma = np.zeros(channels, dtype=dtype)
        self.grad_beta = np.zeros(channels, dtype=dtype)
        self._cache = None

    def _mask(self, x: np.ndarray, lengths) -> np.ndarray:
        batch, _, length = x.shape
        if lengths is None:
            return np.ones((batch, 1, length), dtype=x.dtype)
        lengths = np.asarray(lengths)
        if np.any(lengths > length):
            raise ValueError("valid length exceeds the time axis")
        return (np.arange(length)[None, None, :] < lengths[:, None, None]).astype(x.dtype)

    def forward(self, x: np.ndarray, lengths=None, train: bool = True) -> np.ndarray:
        if x.shape[1] != self.channels:
            raise ValueError(f"expected {self.channels} channels, got {x.shape[1]}")
        mask = self._mask(x, lengths)
        if not train:
            self._cache = None
            inv = 1.0 / np.sqrt(self.running_var + self.eps)
            scale = (self.gamma * inv)[None, :, None]
            return (scale * (x - self.running_mean[None, :, None]) + self.beta[None, :, None]) * mask
        count = float(mask.sum())
        if count <= 1:
            raise ValueError("training-mode batch normalization needs more than one valid element")
        mean = (x * mask).sum(axis=(0, 2)) / count
        xc = (x - mean[None, :, None]) * mask
        var = (xc * xc).sum(axis=(0, 2)) / count
        inv = 1.0 / np.sqrt(var + self.eps)
        xhat = xc * inv[None, :, None]
        y = (self.gamma[None, :, None] * xhat + self.beta[None, :, None]) * mask
        m = self.momentum
        self.running_mean[:] = (1.0 - m) * self.running_mean + m * mean
        self.running_var[:] = (1.0 - m) * self.running_var + m * var * (count / (count - 1.0))
        self._cache = (xhat, inv, mask, count)
        return y

    def backward(self, gy: np.ndarray) -> np.ndarray:
        if self._cache is None:
            raise RuntimeError("backward requires a preceding training-mode forward")
        xhat, inv, mask, count = self._cache
        g = gy * mask
        self.grad_gamma += (g * xhat).sum(axis=(0, 2))
        self.grad_beta += g.sum(axis=(0, 2))
        gxhat = g * self.gamma[None, :, None]
        s1 = gxhat.sum(axis=(0, 2), keepdims=True)
        s2 = (gxhat * xhat).sum(axis=(0, 2), keepdims=True)
        return inv[None, :, None] * (gxhat - s1 / count - xhat * s2 / count) * mask

    def named_params(self) -> dict[str, np.ndarray]:
        return {"gamma": self.gamma, "beta": self.beta}

    def named_grads(self) -> dict[str, np.ndarray]:
        return {"gamma": self.grad_gamma, "beta": self.grad_beta}

    def named_buffers(self) -> dict[str, np.ndarray]:
        return {"running_mean": self.running_mean, "running_var": self.running_var}

    def zero_grads(self) -> None:
        self.grad_gamma[:] = 0
        self.grad_beta[:] = 0


class BiLSTM:
    """Bidirectional LSTM layer over (B, T, F) with right-padded sequences.

    Gate layout along the 4H axis is input, forget, cell, output. Padded
    timesteps (t >= lengths[b]) neither advance the recurrent state nor emit
    output, so the backward direction effectively starts at each sequence's
    true end. Output is the concatenation (B, T, 2H); weight gradients
    accumulate across calls until `zero_grads`.
    """

    def __init__(self, input_size: int, hidden_size: int, rng: np.random.Generator,
                 dtype=np.float32):
        self.input_size = input_size
        self.hidden_size = hidden_size
        bound = 1.0 / np.sqrt(hidden_size)
        h = hidden_size

        def uniform(*shape):
            return rng.uniform(-bound, bound, size=shape).astype(dtype)

        self.params = {
            "w_ih_f": uniform(4 * h, input_size),
            "w_hh_f": uniform(4 * h, h),
            "b_f": np.zeros(4 * h, dtype=dtype),
            "w_ih_b": uniform(4 * h, input_size),
            "w_hh_b": uniform(4 * h, h),
            "b_b": np.zeros(4 * h, dtype=dtype),
        }
        self.grads = {k: np.zeros_like(v) for k, v in self.params.items()}
        self._cache = None

    def forward(self, x: np.ndarray, lengths=None) -> np.ndarray:
        batch, steps, features = x.shape
        if features != self.input_size:
            raise ValueError(f"expected {self.input_size} input features, got {features}")
        if lengths is None:
            lengths = np.full(batch, steps)
        lengths = np.asarray(lengths)
        if np.any(lengths > steps):
            raise ValueError(f"sequence length exceeds the time axis ({steps})")
        mask = (np.arange(steps)[None, :] < lengths[:, None]).astype(x.dtype)
        out_f, cache_f = self._run(x, mask, "f", reverse=False)
        out_b, cache_b = self._run(x, mask, "b", reverse=True)
        self._cache = (x, mask, cache_f, cache_b)
        return np.concatenate([out_f, out_b], axis=2)

    def _run(self, x, mask, tag, reverse):
        batch, steps, _ = x.shape
        h_size = self.hidden_size
        w_hh = self.params[f"w_hh_{tag}"]
        zx = x @ self.params[f"w_ih_{tag}"].T + self.params[f"b_{tag}"]
        order = range(steps - 1, -1, -1) if reverse else range(steps)
        h = np.zeros((batch, h_size), dtype=x.dtype)
        c = np.zeros_like(h)
        out = np.zeros((batch, steps, h_size), dtype=x.dtype)
        gates = np.zeros((batch, steps, 4 * h_size), dtype=x.dtype)
        tanh_c = np.zeros((batch, steps, h_size), dtype=x.dtype)
        h_prev = np.zeros_like(tanh_c)
        c_prev = np.zeros_like(tanh_c)
        for t in order:
            m = mask[:, t : t + 1]
            z = zx[:, t] + h @ w_hh.T
            gi = _sigmoid(z[:, :h_size])
            gf = _sigmoid(z[:, h_size : 2 * h_size])
            gg = np.tanh(z[:, 2 * h_size : 3 * h_size])
            go = _sigmoid(z[:, 3 * h_size :])
            c_new = gf * c + gi * gg
            tc = np.tanh(c_new)
            h_new = go * tc
            h_prev[:, t] = h
            c_prev[:, t] = c
            gates[:, t, :h_size] = gi
            gates[:, t, h_size : 2 * h_size] = gf
            gates[:, t, 2 * h_size : 3 * h_size] = gg
            gates[:, t, 3 * h_size :] = go
            tanh_c[:, t] = tc
            out[:, t] = m * h_new
            h = m * h_new + (1.0 - m) * h
            c = m * c_new + (1.0 - m) * c
        return out, (gates, tanh_c, h_prev, c_prev, order)

    def backward(self, gy: np.ndarray) -> np.ndarray:
        """gy: (B, T, 2H) -> gx: (B, T, F); accumulates weight gradients."""
        if self._cache is None:
            raise RuntimeError("backward requires a preceding forward")
        x, mask, cache_f, cache_b = self._cache
        h_size = self.hidden_size
        gx = self._run_backward(gy[:, :, :h_size], x, mask, "f", cache_f)
        gx += self._run_backward(gy[:, :, h_size:], x, mask, "b", cache_b)
        return gx

    def _run_backward(self, gy, x, mask, tag, cache):
        gates, tanh_c, h_prev, c_prev, order = cache
        batch, steps, features = x.shape
        h_size = self.hidden_size
        w_ih = self.params[f"w_ih_{tag}"]
        w_hh = self.params[f"w_hh_{tag}"]
        dz_all = np.zeros((batch, steps, 4 * h_size), dtype=x.dtype)
        dh = np.zeros((batch, h_size), dtype=x.dtype)
        dc = np.zeros_like(dh)
        for t in reversed(order):
            m = mask[:, t : t + 1]
            gi = gates[:, t, :h_size]
            gf = gates[:, t, h_size : 2 * h_size]
            gg = gates[:, t, 2 * h_size : 3 * h_size]
            go = gates[:, t, 3 * h_size :]
            tc = tanh_c[:, t]
            dh_new = m * (gy[:, t] + dh)
            dc_new = m * dc + dh_new * go * (1.0 - tc * tc)
            dz = dz_all[:, t]
            dz[:, :h_size] = dc_new * gg * gi * (1.0 - gi)
            dz[:, h_size : 2 * h_size] = dc_new * c_prev[:, t] * gf * (1.0 - gf)
            dz[:, 2 * h_size : 3 * h_size] = dc_new * gi * (1.0 - gg * gg)
            dz[:, 3 * h_size :] = dh_new * tc * go * (1.0 - go)
            dh = dz @ w_hh + (1.0 - m) * dh
            dc = gf * dc_new + (1.0 - m) * dc
        dz2 = dz_all.reshape(-1, 4 * h_size)
        self.grads[f"w_ih_{tag}"] += dz2.T @ x.reshape(-1, features)
        self.grads[f"w_hh_{tag}"] += dz2.T @ h_prev.reshape(-1, h_size)
        self.grads[f"b_{tag}"] += dz2.sum(axis=0)
        return dz_all @ w_ih

    def named_params(self) -> dict[str, np.ndarray]:
        return dict(self.params)

    def named_grads(self) -> dict[str, np.ndarray]:
        return dict(self.grads)

    def zero_grads(self) -> None:
        for g in self.grads.values():
            g[:] = 0


class Adam:
    """Adam with bias correction over a named parameter dict, updated in place."""

    def __init__(self, params: dict[str, np.ndarray], lr: float = 1e-4,
                 beta1: float = 0.9, beta2: float = 0.999, epsilon: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.step_count = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, grads: dict[str, np.ndarray]) -> None:
        self.step_count += 1
        bc1 = 1.0 - self.beta1 ** self.step_count
        bc2 = 1.0 - self.beta2 ** self.step_count
        for name, p in self.params.items():
            g = grads[name]
            if not np.all(np.isfinite(g)):
                raise FloatingPointError(f"non-finite gradient for parameter '{name}'")
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.epsilon)


def output_length(input_length: int, layer_chain) -> int:
    """Sequence length after a chain of valid convs and non-overlapping pools.

    layer_chain entries are (kind, kernel, stride, pool); a pool of 0 or None
    means no pooling after that layer. Raises if any intermediate length
    vanishes, naming the offending layer.
    """
    n = int(input_length)
    for depth, (kind, kernel, stride, pool) in enumerate(layer_chain):
        if n < kernel:
            raise ValueError(f"layer {depth} ({kind}): input length {n} is shorter than kernel {kernel}")
        n = (n - kernel) // stride + 1
        if pool:
            n = n // pool
        if n < 1:
            raise ValueError(f"layer {depth} ({kind}): sequence length vanished after pooling by {pool}")
    return n


@dataclass
class GradCheckReport:
    max_rel_err: float
    tolerance: float
    passed: bool
    worst: str = ""
    per_param: dict = field(default_factory=dict)


def grad_check(loss_fn, params: dict[str, np.ndarray], analytic_grads: dict[str, np.ndarray],
               tolerance: float = 1e-4, step: float = 1e-5) -> GradCheckReport:
    """Central finite-difference check of analytic gradients.

    loss_fn() returns the scalar loss at the current parameter values;
    `params` maps names to the live float64 arrays loss_fn reads, which are
    perturbed in place and restored. Relative error uses a unit floor:
    |a - n| / max(1, |a|, |n|).
    """
    max_err = 0.0
    worst = ""
    per_param: dict[str, float] = {}
    for name, p in params.items():
        g = np.asarray(analytic_grads[name])
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter '{name}' {p.shape}")
        worst_here = 0.0
        for idx in np.ndindex(p.shape):
            orig = p[idx]
            p[idx] = orig + step
            loss_plus = loss_fn()
            p[idx] = orig - step
            loss_minus = loss_fn()
            p[idx] = orig
            numeric = (loss_plus - loss_minus) / (2.0 * step)
            analytic = float(g[idx])
            err = abs(analytic - numeric) / max(1.0, abs(analytic), abs(numeric))
            if err > worst_here:
                worst_here = err
            if err > max_err:
                max_err = err
                worst = f"{name}{list(idx)}"
        per_param[name] = worst_here
    return GradCheckReport(
        max_rel_err=max_err,
        tolerance=tolerance,
        passed=max_err < tolerance,
        worst=worst,
        per_param=per_param,
    )
