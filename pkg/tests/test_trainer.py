"""Trainer tests: edit distance metric axioms, CER semantics via a canned
decoder, the training loop on a synthetic corpus, determinism, and the
checkpoint binary format."""

import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sincasr import trainer
from sincasr.data import load_manifest, synth_corpus, write_wav
from sincasr.model import ModelConfig, build_model
from sincasr.trainer import (
    TrainConfig,
    edit_distance,
    evaluate_cer,
    filter_feasible,
    load_checkpoint,
    save_checkpoint,
    train,
)
from sincasr.vocab import load_vocab, tokenize


def micro_config(vocab_size, **kw):
    base = dict(
        vocab_size=vocab_size,
        channels=4,
        lstm_layers=2,
        lstm_hidden=8,
        dropout=0.0,
    )
    base.update(kw)
    return ModelConfig(**base)


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    manifest_path, vocab_path = synth_corpus(root, seed=5, n_utterances=8)
    return load_manifest(manifest_path), load_vocab(vocab_path)


# ---------------------------------------------------------------------------
# edit distance


def test_edit_distance_known_values():
    assert edit_distance([], []) == 0
    assert edit_distance([1, 2, 3], [1, 2, 3]) == 0
    assert edit_distance([1, 2, 3], [1, 3]) == 1  # deletion
    assert edit_distance([1, 2], [1, 4, 2]) == 1  # insertion
    assert edit_distance([1, 2, 3], [1, 9, 3]) == 1  # substitution
    assert edit_distance([1, 2, 3], []) == 3
    assert edit_distance([1, 2, 3, 4], [4, 3, 2, 1]) == 4


seqs = st.lists(st.integers(1, 5), max_size=12)


@settings(max_examples=60, deadline=None)
@given(seqs, seqs)
def test_edit_distance_symmetric(a, b):
    assert edit_distance(a, b) == edit_distance(b, a)


@settings(max_examples=60, deadline=None)
@given(seqs)
def test_edit_distance_identity(a):
    assert edit_distance(a, a) == 0


@settings(max_examples=40, deadline=None)
@given(seqs, seqs, seqs)
def test_edit_distance_triangle(a, b, c):
    assert edit_distance(a, c) <= edit_distance(a, b) + edit_distance(b, c)


@settings(max_examples=60, deadline=None)
@given(seqs, seqs)
def test_edit_distance_bounds(a, b):
    d = edit_distance(a, b)
    assert abs(len(a) - len(b)) <= d <= max(len(a), len(b))


# ---------------------------------------------------------------------------
# CER via a canned decoder


class _CannedModel:
    """Stands in for a Model: emits a fixed frame path per utterance, in
    manifest order, so the decoded hypotheses are fully controlled."""

    def __init__(self, paths, num_classes):
        self.paths = list(paths)
        self.num_classes = num_classes
        self.cursor = 0

    def forward(self, waves, lengths, train=False, rng=None):
        batch = waves.shape[0]
        chunk = self.paths[self.cursor : self.cursor + batch]
        self.cursor += batch
        steps = max(len(p) for p in chunk)
        log_probs = np.full((batch, max(steps, 1), self.num_classes), -20.0)
        frame_lengths = []
        for b, path in enumerate(chunk):
            for t, k in enumerate(path):
                log_probs[b, t, k] = 0.0
            frame_lengths.append(max(len(path), 1))
            if not path:
                log_probs[b, 0, 0] = 0.0  # pure blank frame
        return log_probs, np.array(frame_lengths)


def _blank_interleaved(ids):
    path = [0]
    for i in ids:
        path += [i, 0]
    return path


def test_cer_zero_when_hypotheses_match(corpus):
    manifest, vocab = corpus
    paths = [_blank_interleaved(tokenize(u.transcript, vocab)) for u in manifest]
    model = _CannedModel(paths, len(vocab))
    assert evaluate_cer(model, manifest, vocab) == 0.0


def test_cer_one_when_hypotheses_empty(corpus):
    manifest, vocab = corpus
    model = _CannedModel([[] for _ in manifest], len(vocab))
    assert evaluate_cer(model, manifest, vocab) == 1.0


def test_cer_micro_average(corpus):
    """One substituted character in one utterance: CER = 1 / total chars."""
    manifest, vocab = corpus
    paths = []
    for i, utterance in enumerate(manifest):
        ids = tokenize(utterance.transcript, vocab)
        if i == 0:
            ids = list(ids)
            ids[0] = ids[0] % (len(vocab) - 1) + 1  # different valid id
        paths.append(_blank_interleaved(ids))
    model = _CannedModel(paths, len(vocab))
    total = sum(len(tokenize(u.transcript, vocab)) for u in manifest)
    assert np.isclose(evaluate_cer(model, manifest, vocab), 1.0 / total)


def test_cer_rejects_empty_manifest(corpus):
    _, vocab = corpus
    from sincasr.data import Manifest

    with pytest.raises(ValueError, match="empty"):
        evaluate_cer(_CannedModel([], 3), Manifest([]), vocab)


# ---------------------------------------------------------------------------
# feasibility filtering


def test_filter_drops_short_and_overlong(tmp_path, caplog, corpus):
    import json

    _, vocab = corpus
    # 500 samples is below the model minimum; 1600 samples yields 5 frames,
    # too few for a 6-character transcript
    write_wav(tmp_path / "short.wav", np.zeros(500), 8000)
    write_wav(tmp_path / "tight.wav", np.full(1600, 0.1), 8000)
    write_wav(tmp_path / "fine.wav", np.full(1600, 0.1), 8000)
    rows = [
        {"audio": "short.wav", "text": "AB"},
        {"audio": "tight.wav", "text": "ABABAB"},
        {"audio": "fine.wav", "text": "AB"},
    ]
    with open(tmp_path / "m.jsonl", "w") as fh:
        for row in rows:
            fh.write(json.dumps(row) + "\n")
    manifest = load_manifest(tmp_path / "m.jsonl")
    model = build_model(micro_config(len(vocab)), seed=0)
    with caplog.at_level(logging.WARNING):
        kept = filter_feasible(model, manifest, vocab)
    assert [u.audio_path.split("/")[-1] for u in kept] == ["fine.wav"]
    assert "short.wav" in caplog.text and "tight.wav" in caplog.text


# ---------------------------------------------------------------------------
# training loop


def test_training_reduces_loss_and_logs(tmp_path, corpus):
    manifest, vocab = corpus
    model = build_model(micro_config(len(vocab)), seed=1)
    config = TrainConfig(lr=1e-3, batch_size=4, max_epochs=3, seed=0,
                         checkpoint_dir=str(tmp_path / "ckpt"))
    records = train(model, manifest, vocab, config,
                    dev_manifest=manifest, log_path=tmp_path / "log.csv")
    assert len(records) == 3
    assert all(np.isfinite(r.mean_loss) and r.mean_loss > 0 for r in records)
    assert records[-1].mean_loss < records[0].mean_loss
    assert all(r.dev_cer is not None for r in records)
    # per-epoch checkpoints plus the rolling copy
    names = sorted(p.name for p in (tmp_path / "ckpt").iterdir())
    assert names == ["epoch_0000.ckpt", "epoch_0001.ckpt", "epoch_0002.ckpt", "last.ckpt"]
    lines = (tmp_path / "log.csv").read_text().strip().split("\n")
    assert lines[0] == "epoch,mean_loss,dev_cer,seconds"
    assert len(lines) == 4


def test_training_is_deterministic(corpus):
    manifest, vocab = corpus

    def run():
        model = build_model(micro_config(len(vocab), dropout=0.3), seed=2)
        config = TrainConfig(lr=1e-3, batch_size=4, max_epochs=2, seed=7)
        records = train(model, manifest, vocab, config)
        return [r.mean_loss for r in records], model

    losses_a, model_a = run()
    losses_b, model_b = run()
    assert losses_a == losses_b  # bitwise: same floats, not just close
    for name, p in model_a.named_params().items():
        assert np.array_equal(p, model_b.named_params()[name])


def test_training_rejects_sample_rate_mismatch(corpus):
    manifest, vocab = corpus
    model = build_model(micro_config(len(vocab), sample_rate=16000.0), seed=0)
    with pytest.raises(ValueError, match="sample rate"):
        train(model, manifest, vocab, TrainConfig(max_epochs=1))


# ---------------------------------------------------------------------------
# checkpoints


def test_checkpoint_round_trip_bitwise(tmp_path, corpus):
    manifest, vocab = corpus
    model = build_model(micro_config(len(vocab)), seed=4)
    config = TrainConfig(lr=1e-3, batch_size=4, max_epochs=1, seed=1)
    train(model, manifest, vocab, config)
    opt = trainer.nn.Adam(model.named_params(), lr=1e-3)
    opt.step({k: np.ones_like(v) for k, v in model.named_grads().items()})
    path = tmp_path / "model.ckpt"
    save_checkpoint(model, vocab, path, epoch=12, optimizer=opt)

    loaded, vocab2, opt2, metadata = load_checkpoint(path)
    assert vocab2 == vocab
    assert metadata["epoch"] == 12
    assert metadata["precision"] == "single"
    for name, p in model.named_params().items():
        assert np.array_equal(p, loaded.named_params()[name]), name
    for name, b in model.named_buffers().items():
        assert np.array_equal(b, loaded.named_buffers()[name]), name
    assert opt2 is not None and opt2.step_count == opt.step_count
    for name in opt.m:
        assert np.array_equal(opt.m[name], opt2.m[name])
        assert np.array_equal(opt.v[name], opt2.v[name])

    x = np.random.default_rng(0).normal(size=(2, 1, 800)).astype(np.float32) * 0.1
    lp_a, fl_a = model.forward(x, [800, 700], train=False)
    lp_b, fl_b = loaded.forward(x, [800, 700], train=False)
    assert np.array_equal(lp_a, lp_b)
    assert np.array_equal(fl_a, fl_b)


def test_checkpoint_preserves_double_precision(tmp_path, corpus):
    _, vocab = corpus
    model = build_model(micro_config(len(vocab)), seed=0, dtype=np.float64)
    path = tmp_path / "d.ckpt"
    save_checkpoint(model, vocab, path)
    loaded, _, opt, metadata = load_checkpoint(path)
    assert metadata["precision"] == "double"
    assert opt is None
    assert loaded.dtype == np.float64
    assert loaded.named_params()["proj.weight"].dtype == np.float64


def test_checkpoint_rejects_bad_magic(tmp_path):
    path = tmp_path / "bad.ckpt"
    path.write_bytes(b"NOPE" + b"\x00" * 16)
    with pytest.raises(ValueError, match="bad magic"):
        load_checkpoint(path)


def test_checkpoint_rejects_truncation(tmp_path, corpus):
    _, vocab = corpus
    model = build_model(micro_config(len(vocab)), seed=0)
    path = tmp_path / "t.ckpt"
    save_checkpoint(model, vocab, path)
    blob = path.read_bytes()
    path.write_bytes(blob[: len(blob) - 7])
    with pytest.raises(ValueError, match="truncated"):
        load_checkpoint(path)


def test_checkpoint_rejects_unknown_dtype_tag(tmp_path, corpus):
    _, vocab = corpus
    model = build_model(micro_config(len(vocab)), seed=0)
    path = tmp_path / "x.ckpt"
    save_checkpoint(model, vocab, path)
    blob = bytearray(path.read_bytes())
    # first tensor record begins after magic + metadata; its dtype byte sits
    # right after the u32 name length and the name
    import struct as _struct

    offset = 4 + 4 + _struct.unpack("<I", blob[4:8])[0]
    (name_len,) = _struct.unpack("<I", blob[offset : offset + 4])
    dtype_pos = offset + 4 + name_len
    blob[dtype_pos] = 209
    path.write_bytes(bytes(blob))
    with pytest.raises(ValueError, match="dtype tag"):
        load_checkpoint(path)
