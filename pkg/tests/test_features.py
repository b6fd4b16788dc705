import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from asrboot.features import (
    AudioTooShortError,
    FrontendConfig,
    cmvn,
    compute_mfcc,
    frame_count,
    mel_filterbank,
    read_feature_dump,
    silence_mask,
    silence_runs,
    slice_frames,
    write_feature_dump,
)

CFG = FrontendConfig()


def tone(freq, seconds, rate=16000, amplitude=0.5):
    t = np.arange(int(round(rate * seconds))) / rate
    return amplitude * np.sin(2 * np.pi * freq * t)


class TestFraming:
    def test_one_second_is_98_frames(self):
        f = compute_mfcc(tone(440, 1.0))
        assert f.n_frames == 98

    def test_too_short_raises(self):
        with pytest.raises(AudioTooShortError):
            compute_mfcc(np.zeros(399))

    @settings(max_examples=200, deadline=None)
    @given(st.integers(min_value=400, max_value=1_000_000))
    def test_frame_count_formula(self, n):
        expected = 1 + (n - 400) // 160
        assert frame_count(n, CFG) == expected

    def test_dim_is_39_with_deltas(self):
        f = compute_mfcc(tone(440, 0.5))
        assert f.dim == 39

    def test_dim_without_deltas(self):
        f = compute_mfcc(tone(440, 0.5), FrontendConfig(add_deltas=False))
        assert f.dim == 13


class TestMfcc:
    def test_constant_zero_audio_constant_cepstra(self):
        f = compute_mfcc(np.zeros(16000))
        assert np.allclose(f.frames, f.frames[0], atol=1e-12)

    def test_tone_peaks_in_nearest_mel_bin(self):
        cfg = FrontendConfig(add_deltas=False)
        x = tone(1000, 1.0)
        frames = x[: cfg.window_samples] * np.hamming(cfg.window_samples)
        # oracle: direct DFT magnitude of one windowed frame
        spectrum = np.abs(np.fft.rfft(frames, cfg.n_fft))
        peak_hz = np.argmax(spectrum) * cfg.sample_rate / cfg.n_fft
        assert abs(peak_hz - 1000.0) <= cfg.sample_rate / cfg.n_fft

        power = spectrum**2 / cfg.n_fft
        mel_resp = power @ mel_filterbank(cfg).T
        centers_mel = np.linspace(
            2595 * np.log10(1 + cfg.fmin / 700),
            2595 * np.log10(1 + cfg.fmax / 700),
            cfg.n_mels + 2,
        )[1:-1]
        tone_mel = 2595 * np.log10(1 + 1000.0 / 700)
        assert np.argmax(mel_resp) == np.argmin(np.abs(centers_mel - tone_mel))

    def test_amplitude_scale_touches_only_c0(self):
        rng = np.random.default_rng(0)
        x = 0.3 * rng.standard_normal(8000)
        a = compute_mfcc(x).frames
        b = compute_mfcc(2.0 * x).frames
        diff = np.abs(a - b)
        keep = np.ones(39, dtype=bool)
        keep[0] = False
        assert np.max(diff[:, keep]) < 1e-6
        # C0 itself shifts by 2*log(2)
        assert np.allclose(b[:, 0] - a[:, 0], 2 * np.log(2.0), atol=1e-9)


class TestCmvn:
    def test_post_stats(self):
        rng = np.random.default_rng(1)
        f = compute_mfcc(0.2 * rng.standard_normal(16000 + 400))
        g = cmvn(f)
        assert np.max(np.abs(g.frames.mean(axis=0))) < 1e-6
        assert np.max(np.abs(g.frames.var(axis=0) - 1.0)) < 1e-4

    def test_idempotent(self):
        rng = np.random.default_rng(2)
        f = compute_mfcc(0.2 * rng.standard_normal(8000))
        once = cmvn(f)
        twice = cmvn(once)
        assert np.allclose(once.frames, twice.frames, atol=1e-9)

    def test_constant_column_zeroed_without_blowup(self):
        from asrboot.features import FeatureMatrix

        frames = np.random.default_rng(3).standard_normal((50, 4))
        frames[:, 2] = 7.5
        f = FeatureMatrix(frames=frames, frame_shift=0.01, frame_length=0.025,
                          log_energy=frames[:, 0].copy())
        g = cmvn(f)
        assert np.allclose(g.frames[:, 2], 0.0)
        assert np.all(np.isfinite(g.frames))


class TestSilenceMask:
    def test_all_zero_is_all_silence(self):
        f = compute_mfcc(np.zeros(16000))
        assert silence_mask(f).all()

    def test_leading_silence_boundary(self):
        x = np.concatenate([np.zeros(8000), tone(800, 1.0)])
        f = compute_mfcc(x)
        mask = silence_mask(f)
        first_speech = int(np.argmin(mask))
        assert abs(first_speech - 48) <= 3
        assert mask[:first_speech].all()

    def test_infinite_margin_all_silence(self):
        f = compute_mfcc(tone(500, 1.0))
        assert silence_mask(f, margin_db=np.inf).all()

    def test_short_runs_merged(self):
        from asrboot.features import FeatureMatrix

        log_energy = np.array([-230.0] * 20 + [-2.0] * 2 + [-230.0] * 20)
        frames = np.zeros((42, 13))
        f = FeatureMatrix(frames=frames, frame_shift=0.01, frame_length=0.025,
                          log_energy=log_energy)
        mask = silence_mask(f)
        # the 2-frame speech blip is swallowed; everything is one silence run
        assert silence_runs(mask) == [(0, 42)]

    def test_cmvn_does_not_break_silence_mask(self):
        x = np.concatenate([np.zeros(4800), tone(800, 0.5), np.zeros(4800)])
        f = compute_mfcc(x)
        assert np.array_equal(silence_mask(cmvn(f)), silence_mask(f))


class TestDump:
    def test_round_trip(self, tmp_path):
        f = compute_mfcc(tone(600, 0.3))
        path = tmp_path / "f.bin"
        write_feature_dump(f, path)
        g = read_feature_dump(path)
        assert g.n_frames == f.n_frames and g.dim == f.dim
        assert g.frame_shift == pytest.approx(f.frame_shift)
        assert np.allclose(g.frames, f.frames, atol=1e-6)

    def test_header_is_16_bytes(self, tmp_path):
        f = compute_mfcc(tone(600, 0.1))
        path = tmp_path / "f.bin"
        write_feature_dump(f, path)
        raw = path.read_bytes()
        assert raw[:4] == b"ABFT"
        assert len(raw) == 16 + f.n_frames * f.dim * 4

    def test_slice(self):
        f = compute_mfcc(tone(600, 0.5))
        g = slice_frames(f, 10, 20)
        assert g.n_frames == 10
        assert np.array_equal(g.frames, f.frames[10:20])
