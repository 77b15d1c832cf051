import math
import struct
import wave

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mcspex.audio import (AudioBuffer, GeneratorConfig, MixtureRecord, SynthSpeakerSpec, generate_corpus,
                          make_mixture, make_speakers, quantize, read_manifest, read_wav, segment,
                          synth_utterance, write_manifest, write_wav)
from mcspex.errors import ConfigError, DegenerateInputError, FormatError


class TestWav:
    def test_round_trip_exact(self, tmp_path, rng):
        q = rng.integers(-32768, 32768, size=1000)
        buf = AudioBuffer(q / 32768.0)
        write_wav(tmp_path / "a.wav", buf)
        back = read_wav(tmp_path / "a.wav")
        assert np.array_equal(back.samples, buf.samples)

    def test_full_scale_negative(self, tmp_path):
        write_wav(tmp_path / "a.wav", AudioBuffer([-1.0, 0.0]))
        with wave.open(str(tmp_path / "a.wav")) as w:
            assert struct.unpack("<2h", w.readframes(2)) == (-32768, 0)
        assert read_wav(tmp_path / "a.wav").samples[0] == -1.0

    def test_one_second_file_size(self, tmp_path):
        write_wav(tmp_path / "a.wav", AudioBuffer(np.zeros(8000)))
        assert (tmp_path / "a.wav").stat().st_size == 16044

    def test_round_half_away_from_zero(self):
        assert quantize(np.array([0.5, -0.5, 1.5, -1.5, 2.4]) / 32768).tolist() == [1, -1, 2, -2, 2]

    def test_clipping(self):
        assert quantize(np.array([1.5, -1.5])).tolist() == [32767, -32768]

    def _raw(self, path, channels=1, width=2, rate=8000):
        with wave.open(str(path), "wb") as w:
            w.setnchannels(channels)
            w.setsampwidth(width)
            w.setframerate(rate)
            w.writeframes(b"\x00" * (width * channels * 10))

    def test_rejects_stereo(self, tmp_path):
        self._raw(tmp_path / "s.wav", channels=2)
        with pytest.raises(FormatError, match="channels"):
            read_wav(tmp_path / "s.wav")

    def test_rejects_wrong_rate(self, tmp_path):
        self._raw(tmp_path / "r.wav", rate=16000)
        with pytest.raises(FormatError, match="sample_rate"):
            read_wav(tmp_path / "r.wav")

    def test_rejects_8bit(self, tmp_path):
        self._raw(tmp_path / "b.wav", width=1)
        with pytest.raises(FormatError, match="bits_per_sample"):
            read_wav(tmp_path / "b.wav")

    def test_rejects_float_format(self, tmp_path):
        data = struct.pack("<4f", 0, 0.1, 0.2, 0.3)
        fmt = struct.pack("<HHIIHH", 3, 1, 8000, 32000, 4, 32)
        body = b"WAVE" + b"fmt " + struct.pack("<I", 16) + fmt + b"data" + struct.pack("<I", len(data)) + data
        (tmp_path / "f.wav").write_bytes(b"RIFF" + struct.pack("<I", len(body)) + body)
        with pytest.raises(FormatError, match="format"):
            read_wav(tmp_path / "f.wav")


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(-32768, 32767), min_size=1, max_size=300))
def test_wav_round_trip_property(tmp_path_factory, values):
    path = tmp_path_factory.mktemp("wav") / "x.wav"
    buf = AudioBuffer(np.array(values) / 32768.0)
    write_wav(path, buf)
    assert np.array_equal(read_wav(path).samples, buf.samples)


class TestSynth:
    spec = SynthSpeakerSpec(0, 200.0, (1.0, 0.5, 0.25), 3.0)

    def test_deterministic(self):
        a = synth_utterance(self.spec, 1.0, 42)
        b = synth_utterance(self.spec, 1.0, 42)
        assert np.array_equal(a.samples, b.samples)
        assert not np.array_equal(a.samples, synth_utterance(self.spec, 1.0, 43).samples)

    def test_pure_sinusoid(self):
        spec = SynthSpeakerSpec(0, 250.0, (1.0,), 0.0)
        x = synth_utterance(spec, 1.0, 3).samples
        assert np.max(np.abs(x)) == pytest.approx(0.7, abs=1e-12)
        t = np.arange(x.size) / 8000
        basis = np.stack([np.sin(2 * np.pi * 250 * t), np.cos(2 * np.pi * 250 * t)], axis=1)
        coef, *_ = np.linalg.lstsq(basis, x, rcond=None)
        assert np.max(np.abs(basis @ coef - x)) < 1e-9
        # 32 samples per period: sampled peak sits within cos(pi/32) of the true amplitude
        assert 0.7 - 1e-9 <= np.hypot(*coef) <= 0.7 / np.cos(np.pi / 32)

    def test_spectral_peak_at_fundamental(self):
        x = synth_utterance(self.spec, 2.0, 5).samples
        spec = np.abs(np.fft.rfft(x))
        freqs = np.fft.rfftfreq(x.size, 1 / 8000)
        bin_width = freqs[1]
        assert abs(freqs[np.argmax(spec)] - 200.0) <= bin_width

    def test_speaker_grid_spacing(self):
        specs = make_speakers(8, seed=0)
        f0 = sorted(s.fundamental_hz for s in specs)
        assert all(80 <= f <= 400 for f in f0)
        assert min(np.diff(f0)) >= 20.0

    def test_f0_range_enforced(self):
        with pytest.raises(ConfigError):
            SynthSpeakerSpec(0, 50.0)


class TestMixture:
    def test_zero_db_equal_norms(self, rng):
        a = rng.normal(size=100)
        b = rng.normal(size=100)
        b *= np.linalg.norm(a) / np.linalg.norm(b)
        mix = make_mixture(AudioBuffer(a), AudioBuffer(b), 0.0)
        np.testing.assert_allclose(mix.samples, a + b, atol=1e-12)

    def test_minimum_mode(self, rng):
        mix = make_mixture(AudioBuffer(rng.normal(size=24000)), AudioBuffer(rng.normal(size=20000)), 0.0)
        assert len(mix) == 20000

    def test_six_db(self, rng):
        a, b = rng.normal(size=500), rng.normal(size=500)
        mix = make_mixture(AudioBuffer(a), AudioBuffer(b), 6.0)
        b_scaled = mix.samples - a
        assert np.dot(b_scaled, b_scaled) == pytest.approx(np.dot(a, a) / 10 ** 0.6, rel=1e-12)

    def test_silent_input(self):
        with pytest.raises(DegenerateInputError):
            make_mixture(AudioBuffer(np.zeros(10)), AudioBuffer(np.ones(10)), 0.0)

    @settings(max_examples=50, deadline=None)
    @given(snr=st.floats(-20, 20), seed=st.integers(0, 2**16), na=st.integers(10, 400), nb=st.integers(10, 400))
    def test_snr_property(self, snr, seed, na, nb):
        r = np.random.default_rng(seed)
        a, b = r.normal(size=na), r.normal(size=nb)
        mix = make_mixture(AudioBuffer(a), AudioBuffer(b), snr)
        n = min(na, nb)
        noise = mix.samples - a[:n]
        got = 10 * math.log10(np.dot(a[:n], a[:n]) / np.dot(noise, noise))
        assert abs(got - snr) < 0.01


class TestSegment:
    def buf(self, seconds):
        return AudioBuffer(np.ones(int(seconds * 8000)))

    def test_exact_multiple(self):
        assert len(segment(self.buf(9))) == 3

    def test_training_pads_remainder(self):
        segs = segment(self.buf(7), mode="train")
        assert len(segs) == 3
        assert all(len(s) == 24000 for s in segs)
        assert segs[-1].samples[8000:].sum() == 0 and segs[-1].samples[:8000].sum() == 8000

    def test_validation_drops_remainder(self):
        assert segment(self.buf(2), mode="validation") == []
        assert len(segment(self.buf(7), mode="validation")) == 2

    @settings(max_examples=50, deadline=None)
    @given(n=st.integers(1, 100_000))
    def test_count_property(self, n):
        buf = AudioBuffer(np.ones(n))
        full = n // 24000
        assert len(segment(buf, mode="validation")) == full
        assert len(segment(buf, mode="train")) == full + (1 if n % 24000 else 0)


class TestManifest:
    def test_round_trip(self, tmp_path):
        recs = [MixtureRecord(tmp_path / "m.wav", tmp_path / "r.wav", tmp_path / "t.wav", 3)]
        write_manifest(tmp_path / "x.tsv", recs)
        text = (tmp_path / "x.tsv").read_text()
        assert text == "m.wav\tr.wav\tt.wav\t3\n"
        assert read_manifest(tmp_path / "x.tsv") == recs

    def test_bad_lines(self, tmp_path):
        (tmp_path / "x.tsv").write_text("a\tb\tc\n")
        with pytest.raises(FormatError, match=":1:"):
            read_manifest(tmp_path / "x.tsv")
        (tmp_path / "y.tsv").write_text("a\tb\tc\t9\n")
        with pytest.raises(FormatError):
            read_manifest(tmp_path / "y.tsv", num_speakers=4)


class TestCorpus:
    def test_structure(self, corpus):
        train = read_manifest(corpus.train_manifest)
        dev = read_manifest(corpus.dev_manifest)
        assert len(train) == 9 and len(dev) == 6
        for rec in train + dev:
            assert rec.reference_path != rec.target_path
            assert rec.reference_path.name.startswith(f"spk{rec.speaker_id:02d}")
            mix, tgt = read_wav(rec.mixture_path), read_wav(rec.target_path)
            assert len(mix) == len(tgt) and np.max(np.abs(mix.samples)) < 1.0
        train_utts = {r.target_path.name for r in train}
        dev_refs = {r.reference_path.name for r in dev}
        assert all(not n.startswith("dev") for n in train_utts)
        assert not dev_refs & {r.reference_path.name for r in train}

    def test_idempotent(self, tmp_path):
        cfg = GeneratorConfig(speakers=2, utts=8, seed=3, duration_s=0.5)
        generate_corpus(tmp_path / "a", cfg)
        generate_corpus(tmp_path / "b", cfg)
        files_a = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
        files_b = sorted(p.relative_to(tmp_path / "b") for p in (tmp_path / "b").rglob("*") if p.is_file())
        assert files_a == files_b
        for rel in files_a:
            assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()

    def test_generator_config_text(self):
        cfg = GeneratorConfig(speakers=4, utts=40, seed=9)
        assert GeneratorConfig.from_text(cfg.to_text()) == cfg
        with pytest.raises(ConfigError, match="line 1"):
            GeneratorConfig.from_text("bogus=1\n")

    def test_single_speaker_rejected(self):
        with pytest.raises(ConfigError):
            GeneratorConfig(speakers=1)
