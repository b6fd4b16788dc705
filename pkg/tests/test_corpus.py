import json
import struct

import numpy as np
import pytest
from scipy.io import wavfile
from scipy.signal import resample as fft_resample

from asrboot.corpus import (
    AudioFormatError,
    ManifestError,
    Recording,
    Utterance,
    canonicalize_audio,
    corpus_stats,
    export_kaldi,
    load_manifest,
    subset_by_duration,
    validate_against_recordings,
    wav_duration,
    write_manifest,
)


def make_utt(i, dur_s, text="A B"):
    return Utterance(id=f"u{i}", audio=f"rec{i}.wav", text=text, start=0.0, end=dur_s)


class TestManifest:
    def test_empty_file(self, tmp_path):
        path = tmp_path / "m.jsonl"
        path.write_text("", encoding="utf-8")
        assert load_manifest(path) == []

    def test_two_lines_in_order(self, tmp_path):
        path = tmp_path / "m.jsonl"
        path.write_text(
            '{"id": "a", "audio": "a.wav", "text": "HELLO"}\n'
            '{"id": "b", "audio": "b.wav", "text": "WORLD", "start": 1.0, "end": 2.5}\n',
            encoding="utf-8",
        )
        utts = load_manifest(path)
        assert [u.id for u in utts] == ["a", "b"]
        assert utts[1].start == 1.0 and utts[1].end == 2.5

    def test_end_before_start_names_line(self, tmp_path):
        path = tmp_path / "m.jsonl"
        path.write_text(
            '{"id": "a", "audio": "a.wav", "text": "X"}\n'
            '{"id": "b", "audio": "b.wav", "text": "Y", "start": 2.0, "end": 1.0}\n',
            encoding="utf-8",
        )
        with pytest.raises(ManifestError, match=":2"):
            load_manifest(path)

    def test_duplicate_id(self, tmp_path):
        path = tmp_path / "m.jsonl"
        path.write_text(
            '{"id": "a", "audio": "a.wav", "text": "X"}\n'
            '{"id": "a", "audio": "b.wav", "text": "Y"}\n',
            encoding="utf-8",
        )
        with pytest.raises(ManifestError, match="duplicate id"):
            load_manifest(path)

    def test_parse_error_names_line(self, tmp_path):
        path = tmp_path / "m.jsonl"
        path.write_text('{"id": "a"\n', encoding="utf-8")
        with pytest.raises(ManifestError, match=":1"):
            load_manifest(path)

    def test_round_trip(self, tmp_path):
        utts = [
            Utterance(id="a", audio="x.wav", text="HELLO THERE"),
            Utterance(id="b", audio="y.wav", text="HI", start=0.25, end=3.5),
        ]
        path = tmp_path / "m.jsonl"
        write_manifest(utts, path)
        assert load_manifest(path) == utts
        # a second write is byte-identical
        first = path.read_bytes()
        write_manifest(load_manifest(path), path)
        assert path.read_bytes() == first

    def test_dangling_reference(self):
        utts = [Utterance(id="a", audio="missing.wav", text="X")]
        with pytest.raises(ManifestError, match="dangling"):
            validate_against_recordings(utts, {})

    def test_kaldi_export(self, tmp_path):
        utts = [
            Utterance(id="u1", audio="/data/rec1.wav", text="A B", start=0.0, end=1.5),
            Utterance(id="u2", audio="/data/rec1.wav", text="C", start=2.0, end=3.0),
        ]
        export_kaldi(utts, tmp_path)
        assert (tmp_path / "wav.scp").read_text() == "rec1 /data/rec1.wav\n"
        assert (tmp_path / "text").read_text() == "u1 A B\nu2 C\n"
        assert (
            tmp_path / "segments"
        ).read_text() == "u1 rec1 0.000 1.500\nu2 rec1 2.000 3.000\n"


def write_tone(path, rate, freq=1000.0, seconds=1.0, amplitude=0.5, channels=1):
    n = int(round(rate * seconds))
    t = np.arange(n) / rate
    x = amplitude * np.sin(2 * np.pi * freq * t)
    data = np.rint(x * 32767).astype(np.int16)
    if channels == 2:
        data = np.stack([data, data], axis=1)
    wavfile.write(str(path), rate, data)
    return n


def peak_frequency(x, rate):
    n = len(x)
    spec = np.abs(np.fft.rfft(np.hanning(n) * x, 4 * n))
    k = int(np.argmax(spec))
    delta = 0.0
    if 0 < k < len(spec) - 1:
        a, b, c = spec[k - 1], spec[k], spec[k + 1]
        denom = a - 2 * b + c
        if denom != 0:
            delta = 0.5 * (a - c) / denom
    return (k + delta) * rate / (4 * n)


class TestCanonicalize:
    def test_pass_through_byte_identical(self, tmp_path):
        src = tmp_path / "in.wav"
        out = tmp_path / "out.wav"
        write_tone(src, 16000)
        rec = canonicalize_audio(src, out)
        assert out.read_bytes() == src.read_bytes()
        assert rec.sample_rate == 16000 and rec.channels == 1
        assert rec.duration == pytest.approx(1.0)

    def test_idempotent_bit_exact(self, tmp_path):
        src = tmp_path / "in.wav"
        once = tmp_path / "once.wav"
        twice = tmp_path / "twice.wav"
        write_tone(src, 44100)
        canonicalize_audio(src, once)
        canonicalize_audio(once, twice)
        assert once.read_bytes() == twice.read_bytes()

    @pytest.mark.parametrize("n_extra", [0, 1])
    def test_downsample_length(self, tmp_path, n_extra):
        src = tmp_path / "in.wav"
        out = tmp_path / "out.wav"
        n = write_tone(src, 32000, seconds=1.0 + n_extra / 32000.0)
        rec = canonicalize_audio(src, out)
        _, y = wavfile.read(str(out))
        assert abs(len(y) - round(n / 2)) <= 1
        assert abs(rec.duration - n / 32000.0) <= 1.0 / 16000.0

    def test_tone_peak_preserved_vs_independent_resampler(self, tmp_path):
        src = tmp_path / "in.wav"
        out = tmp_path / "out.wav"
        write_tone(src, 32000, freq=1000.0)
        canonicalize_audio(src, out)
        _, y = wavfile.read(str(out))
        got = peak_frequency(y.astype(np.float64), 16000)
        assert abs(got - 1000.0) < 1.0
        # independent oracle: Fourier-domain resampler on the same tone
        _, x = wavfile.read(str(src))
        oracle = fft_resample(x.astype(np.float64), len(x) // 2)
        assert abs(got - peak_frequency(oracle, 16000)) < 1.0

    def test_upsample_8k(self, tmp_path):
        src = tmp_path / "in.wav"
        out = tmp_path / "out.wav"
        n = write_tone(src, 8000, freq=800.0)
        rec = canonicalize_audio(src, out)
        _, y = wavfile.read(str(out))
        assert abs(len(y) - 2 * n) <= 1
        assert abs(peak_frequency(y.astype(np.float64), 16000) - 800.0) < 1.0
        assert rec.sample_rate == 16000

    def test_stereo_opposite_channels_cancel(self, tmp_path):
        src = tmp_path / "in.wav"
        out = tmp_path / "out.wav"
        n = 44100
        t = np.arange(n) / 44100.0
        left = np.rint(0.4 * 32767 * np.sin(2 * np.pi * 500 * t)).astype(np.int16)
        data = np.stack([left, -left], axis=1)
        wavfile.write(str(src), 44100, data)
        canonicalize_audio(src, out)
        _, y = wavfile.read(str(out))
        assert np.all(y == 0)

    def test_stereo_downmix_average(self, tmp_path):
        src = tmp_path / "in.wav"
        out = tmp_path / "out.wav"
        write_tone(src, 16000, channels=2)
        canonicalize_audio(src, out)
        _, y = wavfile.read(str(out))
        _, mono = wavfile.read(str(src))
        assert np.max(np.abs(y.astype(int) - mono[:, 0].astype(int))) <= 1

    def test_float32_input(self, tmp_path):
        src = tmp_path / "in.wav"
        out = tmp_path / "out.wav"
        t = np.arange(16000) / 16000.0
        wavfile.write(str(src), 16000, (0.25 * np.sin(2 * np.pi * 440 * t)).astype(np.float32))
        rec = canonicalize_audio(src, out)
        _, y = wavfile.read(str(out))
        assert y.dtype == np.int16
        assert abs(peak_frequency(y.astype(np.float64), 16000) - 440.0) < 1.0
        assert rec.duration == pytest.approx(1.0)

    def test_uint8_input(self, tmp_path):
        src = tmp_path / "in.wav"
        out = tmp_path / "out.wav"
        t = np.arange(8000) / 8000.0
        x = np.rint(128 + 100 * np.sin(2 * np.pi * 440 * t)).astype(np.uint8)
        wavfile.write(str(src), 8000, x)
        canonicalize_audio(src, out)
        _, y = wavfile.read(str(out))
        assert y.dtype == np.int16 and len(y) == 16000

    def test_24bit_input(self, tmp_path):
        src = tmp_path / "in.wav"
        out = tmp_path / "out.wav"
        n = 16000
        t = np.arange(n) / 16000.0
        samples = np.rint(0.3 * 8388607 * np.sin(2 * np.pi * 650 * t)).astype(np.int64)
        payload = b"".join(struct.pack("<i", int(s) << 8)[1:4] for s in samples)
        header = b"RIFF" + struct.pack("<I", 36 + len(payload)) + b"WAVE"
        header += b"fmt " + struct.pack("<IHHIIHH", 16, 1, 1, 16000, 48000, 3, 24)
        header += b"data" + struct.pack("<I", len(payload))
        src.write_bytes(header + payload)
        canonicalize_audio(src, out)
        _, y = wavfile.read(str(out))
        assert y.dtype == np.int16
        assert abs(peak_frequency(y.astype(np.float64), 16000) - 650.0) < 1.0

    def test_zero_length_rejected(self, tmp_path):
        src = tmp_path / "in.wav"
        wavfile.write(str(src), 16000, np.zeros(0, dtype=np.int16))
        with pytest.raises(AudioFormatError, match="zero-length"):
            canonicalize_audio(src, tmp_path / "out.wav")

    def test_wav_duration(self, tmp_path):
        src = tmp_path / "in.wav"
        write_tone(src, 16000, seconds=2.5)
        assert wav_duration(src) == pytest.approx(2.5)


class TestSubset:
    def test_target_zero(self):
        utts = [make_utt(i, 60.0) for i in range(10)]
        result = subset_by_duration(utts, 0.0, seed=1)
        assert result.utterances == []
        assert not result.shortfall

    def test_exact_count(self):
        utts = [make_utt(i, 60.0) for i in range(10)]
        result = subset_by_duration(utts, 5.0, seed=1)
        assert len(result.utterances) == 5
        assert result.selected_minutes == pytest.approx(5.0)

    def test_deterministic(self):
        utts = [make_utt(i, 30.0) for i in range(20)]
        a = subset_by_duration(utts, 4.0, seed=7)
        b = subset_by_duration(utts, 4.0, seed=7)
        assert a.utterances == b.utterances

    def test_nested_subsets(self):
        utts = [make_utt(i, 45.0) for i in range(40)]
        small = subset_by_duration(utts, 5.0, seed=3).utterances
        large = subset_by_duration(utts, 10.0, seed=3).utterances
        assert large[: len(small)] == small

    def test_monotone_in_target(self):
        utts = [make_utt(i, 37.0) for i in range(40)]
        durations = []
        for minutes in [1.0, 3.0, 7.0, 11.0]:
            result = subset_by_duration(utts, minutes, seed=5)
            durations.append(result.selected_minutes)
        assert durations == sorted(durations)

    def test_shortfall_flagged(self):
        utts = [make_utt(i, 60.0) for i in range(3)]
        result = subset_by_duration(utts, 10.0, seed=1)
        assert result.shortfall
        assert len(result.utterances) == 3


class TestStats:
    def test_empty(self):
        stats = corpus_stats([])
        assert stats.n_recordings == 0
        assert stats.n_utterances == 0
        assert stats.total_minutes == 0.0

    def test_minimal_regime_shape(self):
        # 433 files totalling 8.5 minutes
        per_utt = 510.0 / 433.0
        utts = [make_utt(i, per_utt) for i in range(433)]
        stats = corpus_stats(utts)
        assert stats.n_utterances == 433
        assert stats.total_minutes == 8.5

    def test_two_half_minute_utterances(self):
        utts = [make_utt(0, 30.0), make_utt(1, 30.0)]
        assert corpus_stats(utts).total_minutes == 1.0

    def test_kind_breakdown(self):
        utts = [make_utt(0, 60.0), make_utt(1, 120.0)]
        stats = corpus_stats(utts, kinds={"rec1": "long_form"})
        assert stats.minutes_by_kind == {"long_form": 2.0, "short_form": 1.0}
