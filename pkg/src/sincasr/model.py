"""Acoustic model: raw waveform in, per-frame log class probabilities out.

The frontend runs one or two feature paths over the waveform and stacks
their channels. A path is five blocks of conv -> maxpool(3) -> batchnorm ->
ReLU; its first convolution is either a learnable sinc filterbank or a plain
wide convolution (the remaining four always use kernel 3). Both path types
share the same length arithmetic, so any combination concatenates cleanly.
The backbone transposes to (B, T, F) and applies stacked bidirectional LSTM
layers with batchnorm and dropout between them (not after the last), then a
linear projection and log-softmax over the output alphabet.

Parameters live in per-layer dicts addressed by dotted names such as
"path0.sinc.low_hz" or "lstm3.w_hh_b", which is what the optimizer and the
checkpoint format consume.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .sinc import (
    SincLayerConfig,
    SincParams,
    init_sinc_params,
    sinc_conv_backward,
    sinc_conv_forward,
)

POOL = 3
CONV_KERNEL = 3
BLOCKS_PER_PATH = 5

PATH_STRUCTURES = ("sinc+cnn", "sinc1", "sinc2", "cnn1")

PRESETS = {
    "paper-sinc-cnn-129": {"path_structure": "sinc+cnn", "first_kernel": 129},
    "ablation-k251": {"path_structure": "sinc+cnn", "first_kernel": 251},
    "ablation-k65": {"path_structure": "sinc+cnn", "first_kernel": 65},
    "cnn1": {"path_structure": "cnn1", "first_kernel": 129},
    "sinc1": {"path_structure": "sinc1", "first_kernel": 129},
    "sinc2": {"path_structure": "sinc2", "first_kernel": 129},
}


@dataclass
class ModelConfig:
    vocab_size: int
    preset: str = "paper-sinc-cnn-129"
    path_structure: str = "sinc+cnn"
    first_kernel: int = 129
    channels: int = 64
    lstm_layers: int = 7
    lstm_hidden: int = 256
    dropout: float = 0.1
    sample_rate: float = 8000.0
    window_mode: str = "standard-hamming"

    def __post_init__(self):
        if self.vocab_size < 2:
            raise ValueError(f"vocab_size must be at least 2, got {self.vocab_size}")
        if self.path_structure not in PATH_STRUCTURES:
            raise ValueError(
                f"unknown path_structure {self.path_structure!r}, expected one of {PATH_STRUCTURES}"
            )
        if self.first_kernel < 3 or self.first_kernel % 2 == 0:
            raise ValueError(f"first_kernel must be odd and >= 3, got {self.first_kernel}")
        if self.channels < 1 or self.lstm_layers < 1 or self.lstm_hidden < 1:
            raise ValueError("channels, lstm_layers, and lstm_hidden must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")

    @classmethod
    def from_preset(cls, preset: str, vocab_size: int, **overrides) -> "ModelConfig":
        if preset not in PRESETS:
            raise ValueError(f"unknown preset {preset!r}, expected one of {sorted(PRESETS)}")
        pinned = PRESETS[preset]
        clash = set(overrides) & set(pinned)
        if clash:
            raise ValueError(f"preset {preset!r} already fixes {sorted(clash)}")
        return cls(vocab_size=vocab_size, preset=preset, **pinned, **overrides)

    def path_kinds(self) -> list[str]:
        return {
            "sinc+cnn": ["sinc", "conv"],
            "sinc1": ["sinc"],
            "sinc2": ["sinc", "sinc"],
            "cnn1": ["conv"],
        }[self.path_structure]

    def layer_chain(self) -> list[tuple]:
        chain = [("first", self.first_kernel, 1, POOL)]
        chain += [("conv", CONV_KERNEL, 1, POOL)] * (BLOCKS_PER_PATH - 1)
        return chain

    def min_input_samples(self) -> int:
        """Smallest waveform length that still yields one output frame."""
        n = 1
        for _, kernel, stride, pool in reversed(self.layer_chain()):
            if pool:
                n = n * pool
            n = (n - 1) * stride + kernel
        return n

    def frame_count(self, n_samples: int) -> int:
        return nn.output_length(n_samples, self.layer_chain())


class ConvBlock:
    """conv -> maxpool -> batchnorm -> ReLU with valid-length tracking."""

    def __init__(self, in_channels, out_channels, kernel, rng, dtype):
        bound = 1.0 / np.sqrt(in_channels * kernel)
        self.weight = rng.uniform(-bound, bound, size=(out_channels, in_channels, kernel)).astype(dtype)
        self.bias = np.zeros(out_channels, dtype=dtype)
        self.grad_weight = np.zeros_like(self.weight)
        self.grad_bias = np.zeros_like(self.bias)
        self.bn = nn.BatchNorm1d(out_channels, dtype=dtype)
        self.kernel = kernel
        self._cache = None

    def forward(self, x, lengths, train):
        conv_out = nn.conv1d(x, self.weight) + self.bias[None, :, None]
        pooled = nn.maxpool1d(conv_out, POOL)
        lengths = (lengths - self.kernel + 1) // POOL
        normed = self.bn.forward(pooled, lengths=lengths, train=train)
        self._cache = (x, conv_out, normed)
        return nn.relu(normed), lengths

    def backward(self, gy):
        x, conv_out, normed = self._cache
        gy = nn.relu_backward(gy, normed)
        gy = self.bn.backward(gy)
        gy = nn.maxpool1d_backward(gy, conv_out, POOL)
        self.grad_bias += gy.sum(axis=(0, 2))
        gx, gw = nn.conv1d_backward(gy, x, self.weight)
        self.grad_weight += gw
        return gx

    def named_params(self):
        out = {"weight": self.weight, "bias": self.bias}
        out.update({f"bn.{k}": v for k, v in self.bn.named_params().items()})
        return out

    def named_grads(self):
        out = {"weight": self.grad_weight, "bias": self.grad_bias}
        out.update({f"bn.{k}": v for k, v in self.bn.named_grads().items()})
        return out

    def named_buffers(self):
        return {f"bn.{k}": v for k, v in self.bn.named_buffers().items()}

    def zero_grads(self):
        self.grad_weight[:] = 0
        self.grad_bias[:] = 0
        self.bn.zero_grads()


class SincBlock:
    """sinc filterbank conv -> maxpool -> batchnorm -> ReLU."""

    def __init__(self, config: ModelConfig, rng, dtype):
        self.layer_config = SincLayerConfig(
            num_filters=config.channels,
            kernel_length=config.first_kernel,
            sample_rate=config.sample_rate,
            window_mode=config.window_mode,
        )
        self.params = init_sinc_params(self.layer_config, rng, dtype=dtype)
        self.grad_low = np.zeros_like(self.params.low_hz)
        self.grad_band = np.zeros_like(self.params.band_hz)
        self.bn = nn.BatchNorm1d(config.channels, dtype=dtype)
        self.kernel = config.first_kernel
        self._cache = None

    def forward(self, x, lengths, train):
        conv_out = sinc_conv_forward(x, self.params, self.layer_config)
        pooled = nn.maxpool1d(conv_out, POOL)
        lengths = (lengths - self.kernel + 1) // POOL
        normed = self.bn.forward(pooled, lengths=lengths, train=train)
        self._cache = (x, conv_out, normed)
        return nn.relu(normed), lengths

    def backward(self, gy):
        x, conv_out, normed = self._cache
        gy = nn.relu_backward(gy, normed)
        gy = self.bn.backward(gy)
        gy = nn.maxpool1d_backward(gy, conv_out, POOL)
        gx, glow, gband = sinc_conv_backward(gy, x, self.params, self.layer_config)
        self.grad_low += glow
        self.grad_band += gband
        return gx

    def named_params(self):
        out = {"low_hz": self.params.low_hz, "band_hz": self.params.band_hz}
        out.update({f"bn.{k}": v for k, v in self.bn.named_params().items()})
        return out

    def named_grads(self):
        out = {"low_hz": self.grad_low, "band_hz": self.grad_band}
        out.update({f"bn.{k}": v for k, v in self.bn.named_grads().items()})
        return out

    def named_buffers(self):
        return {f"bn.{k}": v for k, v in self.bn.named_buffers().items()}

    def zero_grads(self):
        self.grad_low[:] = 0
        self.grad_band[:] = 0
        self.bn.zero_grads()


class FeaturePath:
    """Five conv blocks; the first is sinc or plain depending on `kind`."""

    def __init__(self, kind: str, config: ModelConfig, rng, dtype):
        self.kind = kind
        if kind == "sinc":
            first = SincBlock(config, rng, dtype)
        else:
            first = ConvBlock(1, config.channels, config.first_kernel, rng, dtype)
        rest = [
            ConvBlock(config.channels, config.channels, CONV_KERNEL, rng, dtype)
            for _ in range(BLOCKS_PER_PATH - 1)
        ]
        self.blocks = [first] + rest

    def forward(self, x, lengths, train):
        for block in self.blocks:
            x, lengths = block.forward(x, lengths, train)
        return x, lengths

    def backward(self, gy):
        for block in reversed(self.blocks):
            gy = block.backward(gy)
        return gy

    def _named(self, method):
        out = {}
        for i, block in enumerate(self.blocks):
            name = "sinc" if (i == 0 and self.kind == "sinc") else f"conv{i}"
            for key, val in getattr(block, method)().items():
                out[f"{name}.{key}"] = val
        return out

    def named_params(self):
        return self._named("named_params")

    def named_grads(self):
        return self._named("named_grads")

    def named_buffers(self):
        return self._named("named_buffers")

    def zero_grads(self):
        for block in self.blocks:
            block.zero_grads()


class Backbone:
    """Stacked BiLSTMs with inter-layer batchnorm + dropout, then projection."""

    def __init__(self, input_size: int, config: ModelConfig, rng, dtype):
        self.config = config
        self.lstms = []
        self.bns = []
        size = input_size
        for _ in range(config.lstm_layers):
            self.lstms.append(nn.BiLSTM(size, config.lstm_hidden, rng, dtype))
            size = 2 * config.lstm_hidden
        for _ in range(config.lstm_layers - 1):
            self.bns.append(nn.BatchNorm1d(size, dtype=dtype))
        bound = 1.0 / np.sqrt(size)
        self.proj_weight = rng.uniform(-bound, bound, size=(config.vocab_size, size)).astype(dtype)
        self.proj_bias = np.zeros(config.vocab_size, dtype=dtype)
        self.grad_proj_weight = np.zeros_like(self.proj_weight)
        self.grad_proj_bias = np.zeros_like(self.proj_bias)
        self._cache = None

    def forward(self, x, lengths, train, rng):
        masks = []
        for i, lstm in enumerate(self.lstms):
            x = lstm.forward(x, lengths)
            if i < len(self.bns):
                xt = np.ascontiguousarray(x.transpose(0, 2, 1))
                xt = self.bns[i].forward(xt, lengths=lengths, train=train)
                x = np.ascontiguousarray(xt.transpose(0, 2, 1))
                x, mask = nn.dropout(x, self.config.dropout, rng=rng, train=train)
                masks.append(mask)
        logits = nn.linear(x, self.proj_weight, self.proj_bias)
        log_probs = nn.log_softmax(logits)
        self._cache = (x, masks, log_probs)
        return log_probs

    def backward(self, g_log_probs):
        x, masks, log_probs = self._cache
        gy = nn.log_softmax_backward(g_log_probs, log_probs)
        gy, gw, gb = nn.linear_backward(gy, x, self.proj_weight)
        self.grad_proj_weight += gw
        self.grad_proj_bias += gb
        for i in range(len(self.lstms) - 1, -1, -1):
            if i < len(self.bns):
                gy = nn.dropout_backward(gy, masks[i])
                gyt = np.ascontiguousarray(gy.transpose(0, 2, 1))
                gyt = self.bns[i].backward(gyt)
                gy = np.ascontiguousarray(gyt.transpose(0, 2, 1))
            gy = self.lstms[i].backward(gy)
        return gy

    def _named(self, method):
        out = {}
        for i, lstm in enumerate(self.lstms):
            for key, val in getattr(lstm, method)().items():
                out[f"lstm{i}.{key}"] = val
        for i, bn in enumerate(self.bns):
            for key, val in getattr(bn, method)().items():
                out[f"lstm_bn{i}.{key}"] = val
        return out

    def named_params(self):
        out = self._named("named_params")
        out["proj.weight"] = self.proj_weight
        out["proj.bias"] = self.proj_bias
        return out

    def named_grads(self):
        out = self._named("named_grads")
        out["proj.weight"] = self.grad_proj_weight
        out["proj.bias"] = self.grad_proj_bias
        return out

    def named_buffers(self):
        out = {}
        for i, bn in enumerate(self.bns):
            for key, val in bn.named_buffers().items():
                out[f"lstm_bn{i}.{key}"] = val
        return out

    def zero_grads(self):
        for lstm in self.lstms:
            lstm.zero_grads()
        for bn in self.bns:
            bn.zero_grads()
        self.grad_proj_weight[:] = 0
        self.grad_proj_bias[:] = 0


class Model:
    def __init__(self, config: ModelConfig, seed: int, dtype=np.float32):
        self.config = config
        self.dtype = dtype
        root = np.random.SeedSequence(seed)
        kinds = config.path_kinds()
        streams = root.spawn(len(kinds) + 1)
        self.paths = [
            FeaturePath(kind, config, np.random.default_rng(stream), dtype)
            for kind, stream in zip(kinds, streams)
        ]
        feature_size = len(kinds) * config.channels
        self.backbone = Backbone(feature_size, config, np.random.default_rng(streams[-1]), dtype)
        self._split = None

    def feature_block_forward(self, waveforms, sample_lengths, train=False):
        """Frontend only: (B, 1, N) -> ((B, paths*channels, T), frame_lengths)."""
        x = np.ascontiguousarray(np.asarray(waveforms), dtype=self.dtype)
        if x.ndim != 3 or x.shape[1] != 1:
            raise ValueError(f"expected (B, 1, N) waveforms, got shape {x.shape}")
        sample_lengths = np.asarray(sample_lengths, dtype=np.int64)
        minimum = self.config.min_input_samples()
        for b, n in enumerate(sample_lengths):
            if n < minimum:
                raise ValueError(
                    f"utterance {b}: {int(n)} samples is too short; this model needs "
                    f"at least {minimum} samples to produce one output frame"
                )
        outputs = []
        frame_lengths = None
        for path in self.paths:
            y, lengths = path.forward(x, sample_lengths, train)
            outputs.append(y)
            frame_lengths = lengths
        self._split = [y.shape[1] for y in outputs]
        return np.concatenate(outputs, axis=1), frame_lengths

    def forward(self, waveforms, sample_lengths, train=False, rng=None):
        """Returns (log_probs (B, T, K), frame_lengths (B,))."""
        features, frame_lengths = self.feature_block_forward(waveforms, sample_lengths, train)
        x = np.ascontiguousarray(features.transpose(0, 2, 1))
        log_probs = self.backbone.forward(x, frame_lengths, train, rng)
        return log_probs, frame_lengths

    def backward(self, g_log_probs):
        """Propagates to every parameter; returns the waveform gradient."""
        gx = self.backbone.backward(np.asarray(g_log_probs, dtype=self.dtype))
        g_features = np.ascontiguousarray(gx.transpose(0, 2, 1))
        offsets = np.cumsum([0] + self._split)
        g_wave = None
        for path, start, stop in zip(self.paths, offsets[:-1], offsets[1:]):
            g = path.backward(np.ascontiguousarray(g_features[:, start:stop, :]))
            g_wave = g if g_wave is None else g_wave + g
        return g_wave

    def named_params(self):
        out = {}
        for p, path in enumerate(self.paths):
            for key, val in path.named_params().items():
                out[f"path{p}.{key}"] = val
        out.update(self.backbone.named_params())
        return out

    def named_grads(self):
        out = {}
        for p, path in enumerate(self.paths):
            for key, val in path.named_grads().items():
                out[f"path{p}.{key}"] = val
        out.update(self.backbone.named_grads())
        return out

    def named_buffers(self):
        out = {}
        for p, path in enumerate(self.paths):
            for key, val in path.named_buffers().items():
                out[f"path{p}.{key}"] = val
        out.update(self.backbone.named_buffers())
        return out

    def zero_grads(self):
        for path in self.paths:
            path.zero_grads()
        self.backbone.zero_grads()

    def param_count(self) -> int:
        return sum(v.size for v in self.named_params().values())


def build_model(config: ModelConfig, seed: int, dtype=np.float32) -> Model:
    return Model(config, seed, dtype)
