"""Corpus data model: manifests, audio canonicalization, subsetting.

Manifests are UTF-8 JSON Lines with fields ``id``, ``audio``, ``text`` and
optional ``start``/``end`` seconds.  Audio is canonicalized to 16 kHz mono
16-bit PCM WAV.  Subsetting by a minute budget is nested: with a fixed
seed, a smaller budget is always a prefix of a larger one.
"""

from __future__ import annotations

import json
import logging
import math
import random
import shutil
import wave
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.io import wavfile
from scipy.signal import firwin, resample_poly

logger = logging.getLogger(__name__)

CANONICAL_RATE = 16000

SHORT_FORM = "short_form"
LONG_FORM = "long_form"


class ManifestError(ValueError):
    """Raised for malformed manifests (carries the offending line number)."""


class AudioFormatError(ValueError):
    """Raised for audio the canonicalizer cannot handle."""


@dataclass(frozen=True)
class Recording:
    """One audio file, short-form or long-form."""

    id: str
    audio_path: str
    sample_rate: int
    channels: int
    duration: float
    kind: str = SHORT_FORM


@dataclass(frozen=True)
class Utterance:
    """A transcribed span: a whole recording or a [start, end) slice of one."""

    id: str
    audio: str
    text: str
    start: float | None = None
    end: float | None = None

    @property
    def recording_id(self) -> str:
        return Path(self.audio).stem

    def tokens(self) -> tuple[str, ...]:
        return tuple(self.text.split())

    def span_duration(self) -> float | None:
        if self.start is not None and self.end is not None:
            return self.end - self.start
        return None


@dataclass(frozen=True)
class CorpusStats:
    n_recordings: int
    n_utterances: int
    total_minutes: float
    minutes_by_kind: dict[str, float]


@dataclass(frozen=True)
class SubsetResult:
    utterances: list[Utterance]
    requested_minutes: float
    selected_minutes: float
    shortfall: bool


# ---------------------------------------------------------------------------
# manifest I/O

def load_manifest(path) -> list[Utterance]:
    """Read a JSONL manifest; rejects duplicate ids and bad spans."""
    utterances: list[Utterance] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestError(f"{path}:{lineno}: invalid JSON: {exc}") from None
            for field in ("id", "audio", "text"):
                if field not in record:
                    raise ManifestError(f"{path}:{lineno}: missing field {field!r}")
            utt_id = record["id"]
            if utt_id in seen:
                raise ManifestError(f"{path}:{lineno}: duplicate id {utt_id!r}")
            seen.add(utt_id)
            start = record.get("start")
            end = record.get("end")
            if (start is None) != (end is None):
                raise ManifestError(
                    f"{path}:{lineno}: start and end must be given together"
                )
            if start is not None:
                if not 0 <= start < end:
                    raise ManifestError(
                        f"{path}:{lineno}: need 0 <= start < end, "
                        f"got start={start} end={end}"
                    )
            utterances.append(
                Utterance(
                    id=utt_id,
                    audio=record["audio"],
                    text=record["text"],
                    start=start,
                    end=end,
                )
            )
    return utterances


def write_manifest(utterances: Iterable[Utterance], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for utt in utterances:
            record: dict = {"id": utt.id, "audio": utt.audio, "text": utt.text}
            if utt.start is not None:
                record["start"] = utt.start
                record["end"] = utt.end
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")


def export_kaldi(utterances: Sequence[Utterance], out_dir) -> None:
    """Write wav.scp / text / segments for toolkit interoperability."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    recordings: dict[str, str] = {}
    for utt in utterances:
        recordings.setdefault(utt.recording_id, utt.audio)
    with open(out / "wav.scp", "w", encoding="utf-8") as fh:
        for rec_id in sorted(recordings):
            fh.write(f"{rec_id} {recordings[rec_id]}\n")
    with open(out / "text", "w", encoding="utf-8") as fh:
        for utt in utterances:
            fh.write(f"{utt.id} {utt.text}\n")
    with open(out / "segments", "w", encoding="utf-8") as fh:
        for utt in utterances:
            if utt.start is not None:
                fh.write(
                    f"{utt.id} {utt.recording_id} {utt.start:.3f} {utt.end:.3f}\n"
                )


# ---------------------------------------------------------------------------
# audio

def wav_duration(path) -> float:
    """Duration in seconds from the WAV header alone."""
    with wave.open(str(path), "rb") as wf:
        return wf.getnframes() / wf.getframerate()


def read_wav(path) -> tuple[int, np.ndarray]:
    """Read a RIFF/WAVE file into (rate, float64 samples in [-1, 1])."""
    try:
        rate, data = wavfile.read(path)
    except ValueError as exc:
        raise AudioFormatError(f"{path}: {exc}") from None
    if data.size == 0:
        raise AudioFormatError(f"{path}: zero-length audio")
    if data.ndim == 2 and data.shape[1] > 2:
        raise AudioFormatError(f"{path}: {data.shape[1]} channels unsupported")
    if data.dtype == np.int16:
        x = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        x = data.astype(np.float64) / 2147483648.0
    elif data.dtype == np.uint8:
        x = (data.astype(np.float64) - 128.0) / 128.0
    elif data.dtype in (np.float32, np.float64):
        x = data.astype(np.float64)
    else:
        raise AudioFormatError(f"{path}: unsupported sample format {data.dtype}")
    return rate, x


def write_wav_pcm16(path, samples: np.ndarray, rate: int = CANONICAL_RATE) -> None:
    """Write int16 samples (float inputs are scaled and clipped)."""
    if samples.dtype != np.int16:
        scaled = np.rint(np.asarray(samples, dtype=np.float64) * 32768.0)
        samples = np.clip(scaled, -32768, 32767).astype(np.int16)
    wavfile.write(str(path), rate, samples)


def _resample_filter(up: int, down: int) -> np.ndarray:
    # polyphase windowed-sinc prototype: 64 taps per phase, Kaiser window
    factor = max(up, down)
    numtaps = 2 * 32 * factor + 1
    return firwin(numtaps, 1.0 / factor, window=("kaiser", 8.555))


def resample(samples: np.ndarray, rate: int, target_rate: int = CANONICAL_RATE) -> np.ndarray:
    """Polyphase windowed-sinc resampling to the target rate."""
    if rate == target_rate:
        return samples
    g = math.gcd(rate, target_rate)
    up, down = target_rate // g, rate // g
    return resample_poly(samples, up, down, window=_resample_filter(up, down))


def canonicalize_audio(
    input_path, out_path, rec_id: str | None = None, kind: str = SHORT_FORM
) -> Recording:
    """Convert any supported WAV to 16 kHz mono 16-bit PCM.

    Already-canonical input is copied byte-for-byte (so canonicalization
    is idempotent bit-exactly).  Stereo is downmixed by averaging.
    """
    input_path = Path(input_path)
    out_path = Path(out_path)
    if rec_id is None:
        rec_id = out_path.stem

    rate, raw = wavfile.read(str(input_path))
    if raw.size == 0:
        raise AudioFormatError(f"{input_path}: zero-length audio")
    if rate == CANONICAL_RATE and raw.ndim == 1 and raw.dtype == np.int16:
        if input_path.resolve() != out_path.resolve():
            shutil.copyfile(input_path, out_path)
        return Recording(
            id=rec_id,
            audio_path=str(out_path),
            sample_rate=CANONICAL_RATE,
            channels=1,
            duration=len(raw) / CANONICAL_RATE,
            kind=kind,
        )

    _, x = read_wav(input_path)
    if x.ndim == 2:
        x = x.mean(axis=1)
    y = resample(x, rate)
    write_wav_pcm16(out_path, y)
    return Recording(
        id=rec_id,
        audio_path=str(out_path),
        sample_rate=CANONICAL_RATE,
        channels=1,
        duration=len(y) / CANONICAL_RATE,
        kind=kind,
    )


# ---------------------------------------------------------------------------
# durations, stats, subsetting

def utterance_duration(utt: Utterance, cache: dict[str, float] | None = None) -> float:
    """Utterance duration in seconds; whole-file utterances read the header."""
    span = utt.span_duration()
    if span is not None:
        return span
    if cache is not None and utt.audio in cache:
        return cache[utt.audio]
    duration = wav_duration(utt.audio)
    if cache is not None:
        cache[utt.audio] = duration
    return duration


def corpus_stats(
    utterances: Sequence[Utterance],
    kinds: dict[str, str] | None = None,
) -> CorpusStats:
    """Exact duration sums; minutes reported to 2 decimals.

    ``kinds`` optionally maps recording_id -> short_form/long_form for the
    per-kind breakdown; unlisted recordings count as short_form.
    """
    cache: dict[str, float] = {}
    total = 0.0
    by_kind: dict[str, float] = {}
    recordings = set()
    for utt in utterances:
        dur = utterance_duration(utt, cache)
        total += dur
        kind = (kinds or {}).get(utt.recording_id, SHORT_FORM)
        by_kind[kind] = by_kind.get(kind, 0.0) + dur
        recordings.add(utt.recording_id)
    return CorpusStats(
        n_recordings=len(recordings),
        n_utterances=len(utterances),
        total_minutes=round(total / 60.0, 2),
        minutes_by_kind={k: round(v / 60.0, 2) for k, v in sorted(by_kind.items())},
    )


def subset_by_duration(
    utterances: Sequence[Utterance], minutes: float, seed: int
) -> SubsetResult:
    """Greedy prefix of a seeded shuffle reaching the minute budget.

    The same seed yields the same shuffle for every budget, so subsets are
    nested: the 5-minute subset is a prefix of the 10-minute one.
    """
    order = list(utterances)
    random.Random(seed).shuffle(order)
    cache: dict[str, float] = {}
    target_seconds = minutes * 60.0
    selected: list[Utterance] = []
    total = 0.0
    for utt in order:
        if total >= target_seconds:
            break
        selected.append(utt)
        total += utterance_duration(utt, cache)
    shortfall = total < target_seconds
    if shortfall:
        logger.warning(
            "subset_by_duration: only %.2f of %.2f minutes available",
            total / 60.0,
            minutes,
        )
    return SubsetResult(
        utterances=selected,
        requested_minutes=minutes,
        selected_minutes=total / 60.0,
        shortfall=shortfall,
    )


def validate_against_recordings(
    utterances: Sequence[Utterance], recordings: dict[str, Recording]
) -> None:
    """Check recording references and time bounds; raises ManifestError."""
    for utt in utterances:
        rec = recordings.get(utt.recording_id)
        if rec is None:
            raise ManifestError(
                f"utterance {utt.id!r}: dangling recording "
                f"reference {utt.recording_id!r}"
            )
        if utt.end is not None and utt.end > rec.duration + 1e-6:
            raise ManifestError(
                f"utterance {utt.id!r}: end {utt.end} exceeds recording "
                f"duration {rec.duration}"
            )


def relocate(utt: Utterance, audio: str) -> Utterance:
    """Copy of the utterance pointing at a different audio file."""
    return replace(utt, audio=audio)
