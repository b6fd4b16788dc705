"""Deterministic synthetic-language generator for end-to-end testing.

Each grapheme maps to a distinct bundle of sinusoids (~100 ms).  Words are
concatenated bundles; phrases and long-form recordings insert silence
gaps between words.  Everything is seeded, and ground-truth boundaries
are returned alongside the audio, so pipeline claims (alignment accuracy,
segmentation boundaries, WER) can be checked against construction.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus import Utterance, write_manifest, write_wav_pcm16

SAMPLE_RATE = 16000

DEFAULT_GRAPHEMES = ("A", "B", "D", "E", "K", "L", "M", "O", "S", "U")


@dataclass(frozen=True)
class SynthSpec:
    graphemes: tuple[str, ...] = DEFAULT_GRAPHEMES
    unit_duration: float = 0.10  # nominal seconds per grapheme
    duration_jitter: float = 0.2  # +- fraction of unit_duration
    snr_db: float = 20.0
    seed: int = 0
    word_gap: tuple[float, float] = (0.25, 0.45)  # silence between words
    utterance_gap: tuple[float, float] = (0.45, 0.7)  # silence between utterances
    clip_pad: float = 0.15  # leading/trailing silence per clip
    amplitude: float = 0.3

    def signature_frequencies(self) -> dict[str, tuple[float, float]]:
        """Two sinusoid frequencies per grapheme, spread over the mel range."""
        n = len(self.graphemes)
        lo, hi = 400.0, 5200.0
        out = {}
        for i, g in enumerate(self.graphemes):
            f1 = lo * (hi / lo) ** (i / max(n - 1, 1))
            f2 = min(f1 * 1.5, 7600.0)
            out[g] = (f1, f2)
        return out

    def min_signature_distance(self) -> float:
        """Smallest pairwise spectral distance between grapheme signatures."""
        freqs = self.signature_frequencies()
        bins = np.linspace(0.0, 8000.0, 257)
        spectra = []
        for g in self.graphemes:
            spec = np.zeros(len(bins))
            for f in freqs[g]:
                spec += np.exp(-0.5 * ((bins - f) / 100.0) ** 2)
            spectra.append(spec / np.linalg.norm(spec))
        worst = math.inf
        for i in range(len(spectra)):
            for j in range(i + 1, len(spectra)):
                worst = min(worst, float(np.linalg.norm(spectra[i] - spectra[j])))
        return worst


SIGNATURE_DISTANCE_FLOOR = 0.2


@dataclass(frozen=True)
class Boundary:
    label: str
    start: float
    end: float


@dataclass
class LongFormTruth:
    recording_id: str
    audio: str
    transcript: str  # path to the transcript text file
    utterances: list[dict]  # {"tokens": [...], "start": s, "end": e}
    corrupted_line_indices: list[int] = field(default_factory=list)


@dataclass
class SynthCorpus:
    out_dir: str
    short_manifest: str
    test_manifest: str
    longform: list[LongFormTruth]
    lm_text: str
    vocabulary: list[str]

    def ground_truth_path(self) -> str:
        return str(Path(self.out_dir) / "ground_truth.json")


class SynthError(ValueError):
    pass


def _unit_samples(spec: SynthSpec, rng: np.random.Generator) -> int:
    jitter = 1.0 + spec.duration_jitter * (2.0 * rng.random() - 1.0)
    return max(1, int(round(spec.unit_duration * jitter * SAMPLE_RATE)))


def _signature(grapheme: str, n: int, spec: SynthSpec) -> np.ndarray:
    freqs = spec.signature_frequencies()
    if grapheme not in freqs:
        raise SynthError(f"unknown grapheme {grapheme!r}")
    t = np.arange(n) / SAMPLE_RATE
    x = np.zeros(n)
    for f in freqs[grapheme]:
        x += spec.amplitude * np.sin(2 * np.pi * f * t)
    ramp = min(int(0.005 * SAMPLE_RATE), n // 2)
    if ramp > 0:
        env = np.ones(n)
        fade = 0.5 * (1 - np.cos(np.pi * np.arange(ramp) / ramp))
        env[:ramp] = fade
        env[-ramp:] = fade[::-1]
        x *= env
    return x


def synth_word(
    word: str, spec: SynthSpec, rng: np.random.Generator | None = None
) -> tuple[np.ndarray, list[Boundary]]:
    """Audio for one word plus per-grapheme boundaries (noise not added)."""
    if rng is None:
        rng = np.random.default_rng(spec.seed)
    pieces = []
    boundaries = []
    cursor = 0
    for grapheme in word:
        n = _unit_samples(spec, rng)
        pieces.append(_signature(grapheme, n, spec))
        boundaries.append(
            Boundary(grapheme, cursor / SAMPLE_RATE, (cursor + n) / SAMPLE_RATE)
        )
        cursor += n
    return np.concatenate(pieces), boundaries


def add_noise(
    x: np.ndarray, snr_db: float, rng: np.random.Generator
) -> np.ndarray:
    """White noise at the requested SNR relative to nonzero-signal power."""
    if math.isinf(snr_db):
        return x
    active = x[np.abs(x) > 1e-9]
    power = float(np.mean(active**2)) if active.size else 1e-6
    noise_power = power / (10.0 ** (snr_db / 10.0))
    return x + rng.normal(0.0, math.sqrt(noise_power), size=len(x))


def _silence(seconds: float) -> np.ndarray:
    return np.zeros(int(round(seconds * SAMPLE_RATE)))


def synth_phrase(
    words: Sequence[str], spec: SynthSpec, rng: np.random.Generator,
    gap_range: tuple[float, float] | None = None,
) -> tuple[np.ndarray, list[Boundary]]:
    """Words separated by silence gaps; boundaries are word-level."""
    if gap_range is None:
        gap_range = spec.word_gap
    pieces = [_silence(spec.clip_pad)]
    cursor = pieces[0].size
    boundaries = []
    for k, word in enumerate(words):
        if k > 0:
            gap = _silence(rng.uniform(*gap_range))
            pieces.append(gap)
            cursor += gap.size
        audio, _ = synth_word(word, spec, rng)
        boundaries.append(
            Boundary(word, cursor / SAMPLE_RATE, (cursor + len(audio)) / SAMPLE_RATE)
        )
        pieces.append(audio)
        cursor += len(audio)
    pieces.append(_silence(spec.clip_pad))
    return np.concatenate(pieces), boundaries


def make_vocabulary(
    spec: SynthSpec, size: int, rng: np.random.Generator,
    min_len: int = 2, max_len: int = 5,
) -> list[str]:
    """Distinct random words over the grapheme inventory."""
    vocab: list[str] = []
    seen = set()
    guard = 0
    while len(vocab) < size:
        guard += 1
        if guard > 50 * size:
            raise SynthError("vocabulary too large for the grapheme inventory")
        length = int(rng.integers(min_len, max_len + 1))
        word = "".join(
            spec.graphemes[int(rng.integers(0, len(spec.graphemes)))]
            for _ in range(length)
        )
        if word not in seen:
            seen.add(word)
            vocab.append(word)
    return vocab


def synth_corpus(
    spec: SynthSpec,
    out_dir,
    n_shortform: int = 60,
    longform_minutes: float = 30.0,
    n_test: int = 30,
    vocabulary_size: int = 100,
    shortform_words: tuple[int, int] = (8, 14),
    utterance_words: tuple[int, int] = (3, 8),
    test_words: tuple[int, int] = (2, 6),
    longform_recording_minutes: float = 5.0,
    corruption_rate: float = 0.0,
    corruption_span: tuple[int, int] = (6, 12),
) -> SynthCorpus:
    """Generate short-form clips, long-form recordings, and a test set.

    ``corruption_rate`` inserts that fraction of off-script lines into the
    long-form transcripts (text with no matching audio); the ground truth
    records which transcript lines are corrupted.
    """
    if spec.min_signature_distance() < SIGNATURE_DISTANCE_FLOOR:
        raise SynthError("grapheme signatures are not distinguishable enough")
    out = Path(out_dir)
    (out / "audio").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(spec.seed)
    vocab = make_vocabulary(spec, vocabulary_size, rng)

    def pick_words(lo: int, hi: int) -> list[str]:
        k = int(rng.integers(lo, hi + 1))
        return [vocab[int(rng.integers(0, len(vocab)))] for _ in range(k)]

    # short-form clips: brief phrases with verbatim text
    short_utts = []
    for i in range(n_shortform):
        words = pick_words(*shortform_words)
        audio, _ = synth_phrase(words, spec, rng)
        audio = add_noise(audio, spec.snr_db, rng)
        path = out / "audio" / f"short{i:04d}.wav"
        write_wav_pcm16(path, audio)
        short_utts.append(
            Utterance(id=f"short{i:04d}", audio=str(path), text=" ".join(words))
        )
    short_manifest = out / "short.jsonl"
    write_manifest(short_utts, short_manifest)

    # long-form recordings with one transcript file each
    longform: list[LongFormTruth] = []
    total_needed = longform_minutes * 60.0
    total_done = 0.0
    rec_index = 0
    per_rec = longform_recording_minutes * 60.0
    while total_done < total_needed - 1e-9:
        target = min(per_rec, total_needed - total_done)
        rec_id = f"long{rec_index:03d}"
        pieces = [_silence(spec.clip_pad)]
        cursor = pieces[0].size
        truth_utts = []
        lines: list[str] = []
        corrupted_lines: list[int] = []
        while cursor / SAMPLE_RATE < target:
            words = pick_words(*utterance_words)
            audio, bounds = synth_phrase(words, spec, rng)
            # synth_phrase pads both ends; strip to keep utterance gaps controlled
            pad = int(round(spec.clip_pad * SAMPLE_RATE))
            audio = audio[pad:-pad] if pad else audio
            start = cursor / SAMPLE_RATE
            pieces.append(audio)
            cursor += len(audio)
            truth_utts.append(
                {
                    "tokens": words,
                    "start": start,
                    "end": cursor / SAMPLE_RATE,
                    "words": [
                        {
                            "word": b.label,
                            "start": start + b.start - spec.clip_pad,
                            "end": start + b.end - spec.clip_pad,
                        }
                        for b in bounds
                    ],
                }
            )
            lines.append(" ".join(words))
            if corruption_rate > 0 and rng.random() < corruption_rate:
                corrupted_lines.append(len(lines))
                lines.append(" ".join(pick_words(*corruption_span)))
            gap = _silence(rng.uniform(*spec.utterance_gap))
            pieces.append(gap)
            cursor += gap.size
        signal = np.concatenate(pieces)
        signal = add_noise(signal, spec.snr_db, rng)
        audio_path = out / "audio" / f"{rec_id}.wav"
        write_wav_pcm16(audio_path, signal)
        transcript_path = out / f"{rec_id}.txt"
        transcript_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        longform.append(
            LongFormTruth(
                recording_id=rec_id,
                audio=str(audio_path),
                transcript=str(transcript_path),
                utterances=truth_utts,
                corrupted_line_indices=corrupted_lines,
            )
        )
        total_done += cursor / SAMPLE_RATE
        rec_index += 1

    # held-out test set
    test_utts = []
    for i in range(n_test):
        words = pick_words(*test_words)
        audio, _ = synth_phrase(words, spec, rng)
        audio = add_noise(audio, spec.snr_db, rng)
        path = out / "audio" / f"test{i:04d}.wav"
        write_wav_pcm16(path, audio)
        test_utts.append(
            Utterance(id=f"test{i:04d}", audio=str(path), text=" ".join(words))
        )
    test_manifest = out / "test.jsonl"
    write_manifest(test_utts, test_manifest)

    # LM text: long-form transcripts plus extra sampled sentences
    lm_lines = []
    for rec in longform:
        lm_lines.extend(
            Path(rec.transcript).read_text(encoding="utf-8").splitlines()
        )
    for _ in range(400):
        lm_lines.append(" ".join(pick_words(*utterance_words)))
    lm_text = out / "lm_text.txt"
    lm_text.write_text("\n".join(lm_lines) + "\n", encoding="utf-8")

    result = SynthCorpus(
        out_dir=str(out),
        short_manifest=str(short_manifest),
        test_manifest=str(test_manifest),
        longform=longform,
        lm_text=str(lm_text),
        vocabulary=vocab,
    )
    truth = {
        "longform": [
            {
                "recording_id": rec.recording_id,
                "audio": rec.audio,
                "transcript": rec.transcript,
                "utterances": rec.utterances,
                "corrupted_line_indices": rec.corrupted_line_indices,
            }
            for rec in longform
        ],
        "vocabulary": vocab,
    }
    with open(result.ground_truth_path(), "w", encoding="utf-8") as fh:
        json.dump(truth, fh, indent=1, sort_keys=True)
    return result
