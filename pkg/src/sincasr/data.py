"""Audio and manifest handling plus the synthetic tone corpus.

WAV support covers exactly what the pipeline needs: RIFF PCM, 16-bit, mono.
Samples are scaled by 1/32768 into [-1, 1). Manifests are JSON lines, one
utterance per line with keys "audio", "text", and optional "duration";
audio paths are resolved relative to the manifest file. Transcripts are
normalized at load time.

The synthetic corpus maps token i of the chosen subset to a pure tone at
300 + 80*i Hz, concatenates 100 ms segments per character, adds Gaussian
noise, and writes WAV files, a manifest, and a vocabulary. Everything is
drawn from one seeded generator, so a seed pins the corpus bit for bit.
"""

from __future__ import annotations

import json
import wave
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .vocab import TokenVocabulary, build_vocab, normalize_text, save_vocab

INT16_SCALE = 32768.0
DURATION_TOLERANCE = 0.010  # seconds of slack between manifest and header


def read_wav(path) -> tuple[np.ndarray, int]:
    """Returns (samples in [-1, 1) as float64, sample_rate)."""
    with wave.open(str(path), "rb") as fh:
        if fh.getnchannels() != 1:
            raise ValueError(f"{path}: expected mono audio, got {fh.getnchannels()} channels")
        if fh.getsampwidth() != 2:
            raise ValueError(f"{path}: expected 16-bit PCM, got {8 * fh.getsampwidth()}-bit")
        if fh.getcomptype() != "NONE":
            raise ValueError(f"{path}: compressed WAV ({fh.getcomptype()}) is not supported")
        frames = fh.readframes(fh.getnframes())
        rate = fh.getframerate()
    samples = np.frombuffer(frames, dtype="<i2").astype(np.float64) / INT16_SCALE
    return samples, rate


def write_wav(path, samples: np.ndarray, sample_rate: int) -> None:
    """Quantizes to 16-bit PCM with rounding and saturation."""
    quantized = np.clip(np.rint(np.asarray(samples) * INT16_SCALE), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(int(sample_rate))
        fh.writeframes(quantized.tobytes())


def _wav_header_info(path) -> tuple[int, int]:
    with wave.open(str(path), "rb") as fh:
        return fh.getnframes(), fh.getframerate()


@dataclass
class Utterance:
    audio_path: str
    transcript: str
    duration: float
    sample_rate: int
    n_samples: int

    def load_samples(self) -> np.ndarray:
        samples, rate = read_wav(self.audio_path)
        if rate != self.sample_rate:
            raise ValueError(f"{self.audio_path}: sample rate changed on disk")
        return samples


@dataclass
class Manifest:
    utterances: list[Utterance] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.utterances)

    def __iter__(self):
        return iter(self.utterances)

    def __getitem__(self, i):
        return self.utterances[i]


def load_manifest(path) -> Manifest:
    """Parses a JSON-lines manifest, checking files, durations, transcripts."""
    path = Path(path)
    base = path.parent
    utterances = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"manifest line {lineno}: invalid JSON ({exc})") from None
            if not isinstance(record, dict):
                raise ValueError(f"manifest line {lineno}: expected an object")
            for key in ("audio", "text"):
                if key not in record:
                    raise ValueError(f"manifest line {lineno}: missing key {key!r}")
            audio = base / record["audio"]
            if not audio.is_file():
                raise ValueError(f"manifest line {lineno}: audio file not found: {audio}")
            n_frames, rate = _wav_header_info(audio)
            header_duration = n_frames / rate
            duration = record.get("duration")
            if duration is not None:
                if abs(float(duration) - header_duration) > DURATION_TOLERANCE:
                    raise ValueError(
                        f"manifest line {lineno}: duration {duration} disagrees with the "
                        f"WAV header ({header_duration:.3f} s)"
                    )
                duration = float(duration)
            else:
                duration = header_duration
            transcript = normalize_text(str(record["text"]))
            if not transcript:
                raise ValueError(f"manifest line {lineno}: transcript is empty after normalization")
            utterances.append(
                Utterance(
                    audio_path=str(audio),
                    transcript=transcript,
                    duration=duration,
                    sample_rate=rate,
                    n_samples=n_frames,
                )
            )
    return Manifest(utterances)


def make_batches(manifest: Manifest, batch_size: int, epoch: int, seed: int) -> list[list[Utterance]]:
    """Epoch 0 sorts by duration, longest first (stable on ties), so peak
    padded batch memory appears immediately; later epochs shuffle with a
    generator seeded by seed XOR epoch."""
    if len(manifest) == 0:
        raise ValueError("cannot batch an empty manifest")
    if batch_size < 1:
        raise ValueError(f"batch_size must be positive, got {batch_size}")
    n = len(manifest)
    if epoch == 0:
        order = sorted(range(n), key=lambda i: -manifest[i].duration)
    else:
        order = list(np.random.default_rng(seed ^ epoch).permutation(n))
    return [
        [manifest[i] for i in order[start : start + batch_size]]
        for start in range(0, n, batch_size)
    ]


def pad_batch(utterances, vocab: TokenVocabulary):
    """Loads and right-pads a batch with zeros.

    Returns (waveforms (B, 1, Nmax) float64, sample_lengths (B,),
    labels list of id lists, label_lengths (B,)).
    """
    from .vocab import tokenize

    if not utterances:
        raise ValueError("empty batch")
    rates = {u.sample_rate for u in utterances}
    if len(rates) != 1:
        raise ValueError(f"mixed sample rates in one batch: {sorted(rates)}")
    waves = [u.load_samples() for u in utterances]
    lengths = np.array([len(w) for w in waves], dtype=np.int64)
    out = np.zeros((len(waves), 1, int(lengths.max())), dtype=np.float64)
    for i, w in enumerate(waves):
        out[i, 0, : len(w)] = w
    labels = [tokenize(u.transcript, vocab) for u in utterances]
    label_lengths = np.array([len(l) for l in labels], dtype=np.int64)
    return out, lengths, labels, label_lengths


TONE_BASE_HZ = 300.0
TONE_STEP_HZ = 80.0
TONE_SECONDS = 0.1


def synth_corpus(
    out_dir,
    seed: int,
    n_utterances: int,
    token_subset: str = "ABCDEF",
    sample_rate: int = 8000,
    noise_sigma: float = 0.01,
    min_tokens: int = 2,
    max_tokens: int = 8,
) -> tuple[Path, Path]:
    """Writes WAVs plus manifest.jsonl and vocab.txt under out_dir.

    Token i of the subset becomes a 100 ms sine at 300 + 80*i Hz with
    amplitude 0.5; an utterance is a uniform-random token string with
    Gaussian noise on top. Returns (manifest_path, vocab_path).
    """
    tokens = list(token_subset)
    if len(tokens) < 2:
        raise ValueError("need at least two tokens")
    if len(set(tokens)) != len(tokens):
        raise ValueError("token subset contains duplicates")
    top_tone = TONE_BASE_HZ + TONE_STEP_HZ * (len(tokens) - 1)
    if top_tone >= sample_rate / 2:
        raise ValueError(
            f"tone for the last token ({top_tone:.0f} Hz) reaches the Nyquist "
            f"frequency of {sample_rate} Hz audio; use fewer tokens or a higher rate"
        )
    if n_utterances < 1:
        raise ValueError("n_utterances must be positive")

    out_dir = Path(out_dir)
    wav_dir = out_dir / "wav"
    wav_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    seg_len = int(round(TONE_SECONDS * sample_rate))
    t = np.arange(seg_len) / sample_rate

    manifest_path = out_dir / "manifest.jsonl"
    records = []
    for u in range(n_utterances):
        count = int(rng.integers(min_tokens, max_tokens + 1))
        idx = rng.integers(0, len(tokens), size=count)
        text = "".join(tokens[i] for i in idx)
        segments = [
            0.5 * np.sin(2.0 * np.pi * (TONE_BASE_HZ + TONE_STEP_HZ * i) * t) for i in idx
        ]
        signal = np.concatenate(segments)
        if noise_sigma > 0:
            signal = signal + rng.normal(0.0, noise_sigma, size=signal.shape)
        rel = f"wav/utt_{u:05d}.wav"
        write_wav(out_dir / rel, signal, sample_rate)
        records.append(
            {"audio": rel, "text": text, "duration": len(signal) / sample_rate}
        )
    with open(manifest_path, "w", encoding="utf-8", newline="\n") as fh:
        for record in records:
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")

    # include the full subset so the table is complete even if a token was
    # never drawn
    vocabulary = build_vocab(["".join(tokens)] + [r["text"] for r in records])
    vocab_path = out_dir / "vocab.txt"
    save_vocab(vocabulary, vocab_path)
    return manifest_path, vocab_path
