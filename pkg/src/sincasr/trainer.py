"""Training loop, edit-distance evaluation, and checkpointing.

Training is plain CTC + Adam with per-epoch checkpoints and a CSV log.
Utterances whose waveform is too short for the model or whose label cannot
fit in the available output frames are dropped up front with a warning.
Everything random flows from the single config seed, so one seed pins the
whole run: batch order, dropout masks, parameter trajectory.

Checkpoints are a single binary file: the magic "SWA1", a u32 little-endian
metadata length, UTF-8 JSON metadata (model config, vocabulary, epoch,
precision, optimizer scalars), then one record per tensor: u32 name length,
name bytes, u8 dtype tag (0 = float32, 1 = float64), u32 rank, u64 dims,
raw little-endian data. Tensors are sorted by name. A reload reproduces
forward passes and optimizer state bit for bit.
"""

from __future__ import annotations

import csv
import json
import logging
import struct
import time
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import ctc, nn
from .data import Manifest, make_batches, pad_batch
from .model import Model, ModelConfig, build_model
from .vocab import TokenVocabulary, tokenize

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"SWA1"
FORMAT_VERSION = 1
_DTYPE_TAGS = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
_TAG_DTYPES = {0: np.dtype(np.float32), 1: np.dtype(np.float64)}


@dataclass
class TrainConfig:
    lr: float = 1e-4
    batch_size: int = 32
    max_epochs: int = 1
    seed: int = 0
    checkpoint_dir: str | None = None
    eval_interval: int = 1
    grad_clip: float | None = None

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if self.batch_size < 1 or self.max_epochs < 1 or self.eval_interval < 1:
            raise ValueError("batch_size, max_epochs, and eval_interval must be positive")


@dataclass
class EpochRecord:
    epoch: int
    mean_loss: float
    dev_cer: float | None
    seconds: float


def edit_distance(ref, hyp) -> int:
    """Levenshtein distance between two id sequences."""
    ref = list(ref)
    hyp = list(hyp)
    if not ref:
        return len(hyp)
    if not hyp:
        return len(ref)
    previous = list(range(len(hyp) + 1))
    for i, r in enumerate(ref, start=1):
        current = [i] + [0] * len(hyp)
        for j, h in enumerate(hyp, start=1):
            current[j] = min(
                previous[j] + 1,  # deletion
                current[j - 1] + 1,  # insertion
                previous[j - 1] + (r != h),  # substitution or match
            )
        previous = current
    return previous[-1]


def _feasible(model: Model, utterance, vocab: TokenVocabulary) -> tuple[bool, str]:
    minimum = model.config.min_input_samples()
    if utterance.n_samples < minimum:
        return False, f"{utterance.n_samples} samples < the model minimum of {minimum}"
    frames = model.config.frame_count(utterance.n_samples)
    label = tokenize(utterance.transcript, vocab)
    need = ctc.min_frames(label)
    if frames < need:
        return False, f"label needs {need} frames but the waveform yields only {frames}"
    return True, ""


def filter_feasible(model: Model, manifest: Manifest, vocab: TokenVocabulary) -> Manifest:
    """Drops utterances the model cannot train on, warning per drop."""
    kept = []
    for utterance in manifest:
        ok, reason = _feasible(model, utterance, vocab)
        if ok:
            kept.append(utterance)
        else:
            log.warning("skipping %s: %s", utterance.audio_path, reason)
    return Manifest(kept)


def _clip_grads(grads: dict[str, np.ndarray], max_norm: float) -> None:
    total = np.sqrt(sum(float((g.astype(np.float64) ** 2).sum()) for g in grads.values()))
    if total > max_norm:
        scale = max_norm / total
        for g in grads.values():
            g *= scale


def evaluate_cer(model: Model, manifest: Manifest, vocab: TokenVocabulary,
                 batch_size: int = 8) -> float:
    """Corpus character error rate: total edit distance over total reference
    length, greedy decoding, eval mode."""
    if len(manifest) == 0:
        raise ValueError("cannot evaluate on an empty manifest")
    total_edits = 0
    total_chars = 0
    utterances = list(manifest)
    for start in range(0, len(utterances), batch_size):
        chunk = utterances[start : start + batch_size]
        waves, lengths, labels, _ = pad_batch(chunk, vocab)
        log_probs, frame_lengths = model.forward(waves, lengths, train=False)
        hyps = ctc.greedy_decode(log_probs, frame_lengths)
        for ref, hyp in zip(labels, hyps):
            total_edits += edit_distance(ref, hyp)
            total_chars += len(ref)
    if total_chars == 0:
        raise ValueError("reference transcripts are empty; CER is undefined")
    return total_edits / total_chars


def train(
    model: Model,
    manifest: Manifest,
    vocab: TokenVocabulary,
    config: TrainConfig,
    dev_manifest: Manifest | None = None,
    log_path=None,
) -> list[EpochRecord]:
    """Runs max_epochs of CTC training; returns one record per epoch.

    Writes a checkpoint per epoch when checkpoint_dir is set and a CSV log
    (epoch, mean_loss, dev_cer, seconds) when log_path is set.
    """
    manifest = filter_feasible(model, manifest, vocab)
    if len(manifest) == 0:
        raise ValueError("no trainable utterances remain after feasibility filtering")
    for utterance in manifest:
        if utterance.sample_rate != model.config.sample_rate:
            raise ValueError(
                f"{utterance.audio_path}: sample rate {utterance.sample_rate} does not "
                f"match the model's {model.config.sample_rate}"
            )
    dev = None
    if dev_manifest is not None:
        dev = filter_feasible(model, dev_manifest, vocab)
        if len(dev) == 0:
            raise ValueError("no usable utterances in the dev manifest")

    optimizer = nn.Adam(model.named_params(), lr=config.lr)
    rng = np.random.default_rng(config.seed)
    checkpoint_dir = Path(config.checkpoint_dir) if config.checkpoint_dir else None
    if checkpoint_dir:
        checkpoint_dir.mkdir(parents=True, exist_ok=True)

    records: list[EpochRecord] = []
    for epoch in range(config.max_epochs):
        started = time.monotonic()
        batches = make_batches(manifest, config.batch_size, epoch, config.seed)
        losses = []
        for index, batch in enumerate(batches):
            waves, lengths, labels, label_lengths = pad_batch(batch, vocab)
            log_probs, frame_lengths = model.forward(waves, lengths, train=True, rng=rng)
            loss, grad = ctc.ctc_loss_and_grad(log_probs, labels, frame_lengths, label_lengths)
            if not np.isfinite(loss):
                raise FloatingPointError(f"non-finite loss in epoch {epoch} batch {index}")
            model.zero_grads()
            model.backward(grad)
            grads = model.named_grads()
            if config.grad_clip is not None:
                _clip_grads(grads, config.grad_clip)
            optimizer.step(grads)
            losses.append(loss)
        mean_loss = float(np.mean(losses))
        dev_cer = None
        if dev is not None and (epoch + 1) % config.eval_interval == 0:
            dev_cer = evaluate_cer(model, dev, vocab)
        seconds = time.monotonic() - started
        records.append(EpochRecord(epoch=epoch, mean_loss=mean_loss, dev_cer=dev_cer, seconds=seconds))
        log.info(
            "epoch %d: loss %.4f%s (%.1fs)",
            epoch,
            mean_loss,
            "" if dev_cer is None else f", dev CER {dev_cer:.4f}",
            seconds,
        )
        if checkpoint_dir:
            path = checkpoint_dir / f"epoch_{epoch:04d}.ckpt"
            save_checkpoint(model, vocab, path, epoch=epoch, optimizer=optimizer)
            save_checkpoint(model, vocab, checkpoint_dir / "last.ckpt", epoch=epoch, optimizer=optimizer)
    if log_path is not None:
        _write_log_csv(log_path, records)
    return records


def _write_log_csv(path, records: list[EpochRecord]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "mean_loss", "dev_cer", "seconds"])
        for r in records:
            writer.writerow(
                [r.epoch, f"{r.mean_loss:.6f}", "" if r.dev_cer is None else f"{r.dev_cer:.6f}", f"{r.seconds:.3f}"]
            )


# ---------------------------------------------------------------------------
# checkpoint format


def _collect_tensors(model: Model, optimizer: nn.Adam | None) -> dict[str, np.ndarray]:
    tensors = dict(model.named_params())
    tensors.update(model.named_buffers())
    if optimizer is not None:
        tensors.update({f"optim.m.{k}": v for k, v in optimizer.m.items()})
        tensors.update({f"optim.v.{k}": v for k, v in optimizer.v.items()})
    return tensors


def save_checkpoint(model: Model, vocab: TokenVocabulary, path, epoch: int = 0,
                    optimizer: nn.Adam | None = None) -> None:
    precision = "double" if model.dtype == np.float64 else "single"
    metadata = {
        "format_version": FORMAT_VERSION,
        "model_config": asdict(model.config),
        "vocab_digest": vocab.digest(),
        "vocab_tokens": vocab.tokens,
        "epoch": int(epoch),
        "precision": precision,
        "optimizer": None
        if optimizer is None
        else {
            "step_count": optimizer.step_count,
            "lr": optimizer.lr,
            "beta1": optimizer.beta1,
            "beta2": optimizer.beta2,
            "epsilon": optimizer.epsilon,
        },
    }
    blob = json.dumps(metadata, ensure_ascii=False).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for name, tensor in sorted(_collect_tensors(model, optimizer).items()):
            dtype = np.dtype(tensor.dtype)
            if dtype not in _DTYPE_TAGS:
                raise ValueError(f"tensor {name!r} has unsupported dtype {dtype}")
            name_bytes = name.encode("utf-8")
            fh.write(struct.pack("<I", len(name_bytes)))
            fh.write(name_bytes)
            fh.write(struct.pack("<B", _DTYPE_TAGS[dtype]))
            fh.write(struct.pack("<I", tensor.ndim))
            for dim in tensor.shape:
                fh.write(struct.pack("<Q", dim))
            fh.write(np.ascontiguousarray(tensor).astype(dtype.newbyteorder("<")).tobytes())


def _read_exact(fh, n: int, what: str) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise ValueError(f"truncated checkpoint file while reading {what}")
    return data


def load_checkpoint(path) -> tuple[Model, TokenVocabulary, nn.Adam | None, dict]:
    """Rebuilds the model (and optimizer when saved) from a checkpoint."""
    with open(path, "rb") as fh:
        magic = _read_exact(fh, 4, "magic")
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"not a checkpoint file: bad magic {magic!r}")
        (meta_len,) = struct.unpack("<I", _read_exact(fh, 4, "metadata length"))
        metadata = json.loads(_read_exact(fh, meta_len, "metadata").decode("utf-8"))
        if metadata.get("format_version") != FORMAT_VERSION:
            raise ValueError(f"unsupported checkpoint version {metadata.get('format_version')!r}")
        tensors: dict[str, np.ndarray] = {}
        while True:
            head = fh.read(4)
            if not head:
                break
            if len(head) != 4:
                raise ValueError("truncated checkpoint file while reading a tensor header")
            (name_len,) = struct.unpack("<I", head)
            name = _read_exact(fh, name_len, "tensor name").decode("utf-8")
            (tag,) = struct.unpack("<B", _read_exact(fh, 1, f"dtype of {name}"))
            if tag not in _TAG_DTYPES:
                raise ValueError(f"tensor {name!r} has unknown dtype tag {tag}")
            dtype = _TAG_DTYPES[tag]
            (rank,) = struct.unpack("<I", _read_exact(fh, 4, f"rank of {name}"))
            shape = tuple(
                struct.unpack("<Q", _read_exact(fh, 8, f"dims of {name}"))[0] for _ in range(rank)
            )
            count = int(np.prod(shape, dtype=np.int64)) if shape else 1
            raw = _read_exact(fh, count * dtype.itemsize, f"data of {name}")
            tensors[name] = np.frombuffer(raw, dtype=dtype.newbyteorder("<")).astype(dtype).reshape(shape)

    vocab = TokenVocabulary(metadata["vocab_tokens"])
    if vocab.digest() != metadata["vocab_digest"]:
        raise ValueError("vocabulary digest mismatch; checkpoint metadata is inconsistent")
    config = ModelConfig(**metadata["model_config"])
    dtype = np.float64 if metadata["precision"] == "double" else np.float32
    model = build_model(config, seed=0, dtype=dtype)

    def restore(target: dict[str, np.ndarray], prefix: str = ""):
        for name, array in target.items():
            key = prefix + name
            if key not in tensors:
                raise ValueError(f"checkpoint is missing tensor {key!r}")
            stored = tensors[key]
            if stored.shape != array.shape:
                raise ValueError(
                    f"tensor {key!r} has shape {stored.shape}, expected {array.shape}"
                )
            array[...] = stored

    restore(model.named_params())
    restore(model.named_buffers())

    optimizer = None
    saved = metadata.get("optimizer")
    if saved is not None:
        optimizer = nn.Adam(
            model.named_params(),
            lr=saved["lr"],
            beta1=saved["beta1"],
            beta2=saved["beta2"],
            epsilon=saved["epsilon"],
        )
        optimizer.step_count = int(saved["step_count"])
        restore(optimizer.m, prefix="optim.m.")
        restore(optimizer.v, prefix="optim.v.")
    return model, vocab, optimizer, metadata
