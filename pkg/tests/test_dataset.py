"""Tests for ingestion, segmentation, and the feature map."""

import json
import struct

import numpy as np
import pytest

from vibroaudit.dataset import (
    FeatureConfig,
    FeatureTable,
    Manifest,
    SessionRecord,
    extract_features,
    extract_table,
    ingest_wav,
    load_manifest,
    minimum_segment_samples,
    save_manifest,
    segment_repetitions,
    write_wav,
)
from vibroaudit.dsp import Signal
from vibroaudit.errors import FormatError, ManifestError, ParameterError

FS = 100_000.0


def small_wav(path, n=2_000, fs=1_000.0, seed=0):
    rng = np.random.default_rng(seed)
    write_wav(path, Signal(0.1 * rng.normal(size=n), fs))


def manifest_payload(sessions):
    return {"sessions": sessions}


def session_obj(i, health="Healthy", **over):
    obj = {
        "session_id": f"s{i:03d}",
        "subject_id": f"subj{i:03d}",
        "side": "left",
        "device_id": "D0",
        "health_label": health,
        "wav_path": f"s{i:03d}.wav",
        "n_repetitions": 2,
    }
    obj.update(over)
    return obj


# ---------------------------------------------------------------------------
# manifest


class TestManifest:
    def test_load_valid(self, tmp_path):
        for i in range(2):
            small_wav(tmp_path / f"s{i:03d}.wav")
        payload = manifest_payload([session_obj(0), session_obj(1, health="Unhealthy")])
        (tmp_path / "manifest.json").write_text(json.dumps(payload))
        man = load_manifest(tmp_path / "manifest.json")
        assert len(man.sessions) == 2
        assert man.class_counts() == {"Healthy": 1, "Unhealthy": 1}

    def test_clinical_scale_class_counts(self, tmp_path):
        # 43 sessions, 18 Healthy / 25 Unhealthy
        sessions = []
        for i in range(43):
            health = "Healthy" if i < 18 else "Unhealthy"
            small_wav(tmp_path / f"s{i:03d}.wav", n=50)
            sessions.append(session_obj(i, health=health))
        (tmp_path / "manifest.json").write_text(json.dumps(manifest_payload(sessions)))
        man = load_manifest(tmp_path / "manifest.json")
        assert man.class_counts() == {"Healthy": 18, "Unhealthy": 25}

    def test_empty_is_valid(self, tmp_path):
        (tmp_path / "manifest.json").write_text(json.dumps(manifest_payload([])))
        man = load_manifest(tmp_path / "manifest.json")
        assert man.sessions == []

    def test_duplicate_id_named(self, tmp_path):
        small_wav(tmp_path / "s000.wav")
        sessions = [session_obj(0), session_obj(0)]
        (tmp_path / "manifest.json").write_text(json.dumps(manifest_payload(sessions)))
        with pytest.raises(ManifestError, match="s000"):
            load_manifest(tmp_path / "manifest.json")

    def test_missing_wav_named(self, tmp_path):
        (tmp_path / "manifest.json").write_text(
            json.dumps(manifest_payload([session_obj(7)]))
        )
        with pytest.raises(ManifestError, match="s007"):
            load_manifest(tmp_path / "manifest.json")

    def test_bad_health_label(self, tmp_path):
        small_wav(tmp_path / "s000.wav")
        sessions = [session_obj(0, health_label="sick") | {"health_label": "sick"}]
        (tmp_path / "manifest.json").write_text(json.dumps(manifest_payload(sessions)))
        with pytest.raises(ManifestError, match="health_label"):
            load_manifest(tmp_path / "manifest.json")

    def test_missing_field_reported(self, tmp_path):
        obj = session_obj(0)
        del obj["side"]
        (tmp_path / "manifest.json").write_text(json.dumps(manifest_payload([obj])))
        with pytest.raises(ManifestError, match="side"):
            load_manifest(tmp_path / "manifest.json")

    def test_not_json(self, tmp_path):
        (tmp_path / "manifest.json").write_text("not json {")
        with pytest.raises(ManifestError):
            load_manifest(tmp_path / "manifest.json")

    def test_save_round_trip(self, tmp_path):
        small_wav(tmp_path / "s000.wav")
        (tmp_path / "manifest.json").write_text(
            json.dumps(manifest_payload([session_obj(0)]))
        )
        man = load_manifest(tmp_path / "manifest.json")
        save_manifest(man, tmp_path / "again.json")
        again = load_manifest(tmp_path / "again.json")
        assert again.sessions[0].session_id == "s000"
        save_manifest(again, tmp_path / "third.json")
        assert (tmp_path / "again.json").read_bytes() == (tmp_path / "third.json").read_bytes()


# ---------------------------------------------------------------------------
# WAV I/O


class TestWav:
    def test_pcm16_full_scale_square(self, tmp_path):
        square = np.array([32767, -32767] * 50, dtype="<i2")
        body = square.tobytes()
        raw = (
            b"RIFF" + struct.pack("<I", 36 + len(body)) + b"WAVE"
            + b"fmt " + struct.pack("<IHHIIHH", 16, 1, 1, 1000, 2000, 2, 16)
            + b"data" + struct.pack("<I", len(body)) + body
        )
        path = tmp_path / "sq.wav"
        path.write_bytes(raw)
        sig = ingest_wav(path)
        assert np.all(np.abs(sig.samples) == pytest.approx(32767 / 32768))

    def test_float32_bit_exact(self, tmp_path):
        rng = np.random.default_rng(1)
        x = rng.normal(size=500).astype(np.float32).astype(np.float64)
        path = tmp_path / "f.wav"
        write_wav(path, Signal(x, 48_000.0), encoding="float32")
        sig = ingest_wav(path)
        assert sig.sample_rate == 48_000.0
        np.testing.assert_array_equal(sig.samples, x)

    def test_pcm24(self, tmp_path):
        vals = [0, 1 << 22, -(1 << 22), (1 << 23) - 1, -(1 << 23)]
        body = b"".join(struct.pack("<i", v)[:3] for v in vals)
        raw = (
            b"RIFF" + struct.pack("<I", 36 + len(body)) + b"WAVE"
            + b"fmt " + struct.pack("<IHHIIHH", 16, 1, 1, 1000, 3000, 3, 24)
            + b"data" + struct.pack("<I", len(body)) + body
        )
        path = tmp_path / "p24.wav"
        path.write_bytes(raw)
        sig = ingest_wav(path)
        expected = np.array(vals, dtype=np.float64) / (1 << 23)
        np.testing.assert_allclose(sig.samples, expected, atol=0)

    def test_pcm32(self, tmp_path):
        vals = np.array([0, 1 << 30, -(1 << 30)], dtype="<i4")
        body = vals.tobytes()
        raw = (
            b"RIFF" + struct.pack("<I", 36 + len(body)) + b"WAVE"
            + b"fmt " + struct.pack("<IHHIIHH", 16, 1, 1, 1000, 4000, 4, 32)
            + b"data" + struct.pack("<I", len(body)) + body
        )
        path = tmp_path / "p32.wav"
        path.write_bytes(raw)
        sig = ingest_wav(path)
        np.testing.assert_allclose(sig.samples, vals / (1 << 31), atol=0)

    def test_stereo_interleave(self, tmp_path):
        x = np.column_stack([np.arange(10) / 100.0, -np.arange(10) / 100.0])
        path = tmp_path / "st.wav"
        write_wav(path, Signal(x, 8_000.0), encoding="float32")
        sig = ingest_wav(path)
        assert sig.channels == 2
        np.testing.assert_allclose(sig.samples, x, atol=1e-7)

    def test_unknown_chunks_skipped(self, tmp_path):
        x = np.ones(8, dtype="<f4") * 0.5
        body = x.tobytes()
        junk = b"LIST" + struct.pack("<I", 5) + b"12345\x00"  # odd size, padded
        raw = (
            b"RIFF" + struct.pack("<I", 100) + b"WAVE"
            + b"fmt " + struct.pack("<IHHIIHH", 16, 3, 1, 1000, 4000, 4, 32)
            + junk
            + b"data" + struct.pack("<I", len(body)) + body
        )
        path = tmp_path / "junk.wav"
        path.write_bytes(raw)
        sig = ingest_wav(path)
        assert sig.n_samples == 8

    def test_truncated_header(self, tmp_path):
        path = tmp_path / "bad.wav"
        path.write_bytes(b"RIFF\x00\x00")
        with pytest.raises(FormatError):
            ingest_wav(path)

    def test_truncated_data_chunk(self, tmp_path):
        path = tmp_path / "bad2.wav"
        raw = (
            b"RIFF" + struct.pack("<I", 100) + b"WAVE"
            + b"fmt " + struct.pack("<IHHIIHH", 16, 1, 1, 1000, 2000, 2, 16)
            + b"data" + struct.pack("<I", 1000) + b"\x00" * 10
        )
        path.write_bytes(raw)
        with pytest.raises(FormatError):
            ingest_wav(path)

    def test_compressed_rejected(self, tmp_path):
        body = b"\x00" * 16
        raw = (
            b"RIFF" + struct.pack("<I", 36 + len(body)) + b"WAVE"
            + b"fmt " + struct.pack("<IHHIIHH", 16, 85, 1, 1000, 2000, 2, 16)
            + b"data" + struct.pack("<I", len(body)) + body
        )
        path = tmp_path / "mp3ish.wav"
        path.write_bytes(raw)
        with pytest.raises(FormatError, match="unsupported encoding"):
            ingest_wav(path)

    def test_pcm16_round_trip_close(self, tmp_path):
        rng = np.random.default_rng(2)
        x = np.clip(rng.normal(scale=0.2, size=300), -1, 1)
        path = tmp_path / "rt.wav"
        write_wav(path, Signal(x, 16_000.0), encoding="pcm16")
        sig = ingest_wav(path)
        assert np.max(np.abs(sig.samples - x)) <= 1.0 / 32768 + 1e-12


# ---------------------------------------------------------------------------
# segmentation


def record(n_reps, boundaries=None):
    return SessionRecord(
        session_id="sX", subject_id="subjX", side="left", device_id="D0",
        health_label="Healthy", wav_path="x.wav", n_repetitions=n_reps,
        repetition_boundaries=boundaries,
    )


class TestSegmentation:
    def test_equal_split_six(self):
        fs = 100.0
        sig = Signal(np.arange(2_400) / 2_400.0, fs)  # 24 s
        segs = segment_repetitions(sig, record(6))
        assert len(segs) == 6
        assert all(s.duration == pytest.approx(4.0) for s in segs)
        np.testing.assert_array_equal(segs[1].samples, sig.samples[400:800])

    def test_equal_split_eight(self):
        sig = Signal(np.zeros(3_205), 100.0)
        segs = segment_repetitions(sig, record(8))
        assert len(segs) == 8
        assert all(s.n_samples == 400 for s in segs)  # remainder 5 dropped

    def test_boundaries(self):
        fs = 100.0
        sig = Signal(np.zeros(1_000), fs)  # 10 s
        segs = segment_repetitions(sig, record(2, boundaries=[0.0, 3.5, 8.0]))
        assert [s.duration for s in segs] == [pytest.approx(3.5), pytest.approx(4.5)]

    def test_boundaries_out_of_range(self):
        sig = Signal(np.zeros(1_000), 100.0)
        with pytest.raises(ParameterError, match="duration"):
            segment_repetitions(sig, record(2, boundaries=[0.0, 3.5, 80.0]))

    def test_boundaries_count_mismatch(self):
        sig = Signal(np.zeros(1_000), 100.0)
        with pytest.raises(ParameterError, match="boundaries"):
            segment_repetitions(sig, record(3, boundaries=[0.0, 3.5, 8.0]))

    def test_boundaries_must_ascend(self):
        sig = Signal(np.zeros(1_000), 100.0)
        with pytest.raises(ParameterError, match="ascend"):
            segment_repetitions(sig, record(2, boundaries=[0.0, 8.0, 3.5]))


# ---------------------------------------------------------------------------
# feature extraction


def noise_segment(seed=0, n=60_000, fs=FS, extra=None):
    rng = np.random.default_rng(seed)
    x = 0.05 * rng.normal(size=n)
    if extra is not None:
        x = x + extra
    return Signal(x, fs)


class TestExtractFeatures:
    def test_deterministic_bit_exact(self):
        cfg = FeatureConfig(band_lo=250.0, band_hi=10_000.0)
        seg = noise_segment()
        a = extract_features(seg, cfg)
        b = extract_features(seg, cfg)
        assert a.values == b.values

    def test_feature_names(self):
        cfg = FeatureConfig(band_lo=250.0, band_hi=10_000.0)
        vec = extract_features(noise_segment(), cfg)
        assert "mfcc08_mean" in vec.values
        assert "mfcc11_std" in vec.values
        assert "spectral_centroid_mean" in vec.values
        assert len(vec.values) == (13 + 4) * 2

    def test_out_of_band_tone_invisible(self):
        cfg = FeatureConfig(band_lo=250.0, band_hi=10_000.0)
        t = np.arange(60_000) / FS
        tone = 0.3 * np.sin(2 * np.pi * 33_000 * t)
        base = extract_features(noise_segment(seed=5), cfg)
        with_tone = extract_features(noise_segment(seed=5, extra=tone), cfg)
        for name, val in base.values.items():
            ref = max(1e-12, abs(val))
            assert abs(with_tone.values[name] - val) / ref < 1e-6, name

    def test_in_band_tone_visible(self):
        cfg = FeatureConfig(band_lo=30_000.0, band_hi=40_000.0)
        t = np.arange(60_000) / FS
        tone = 0.1 * np.sin(2 * np.pi * 33_000 * t)
        base = extract_features(noise_segment(seed=5), cfg)
        base2 = extract_features(noise_segment(seed=6), cfg)
        with_tone = extract_features(noise_segment(seed=5, extra=tone), cfg)
        name = "spectral_centroid_mean"
        replicate_noise = abs(base.values[name] - base2.values[name])
        assert abs(with_tone.values[name] - base.values[name]) > 10 * replicate_noise

    def test_too_short_reports_minimum(self):
        cfg = FeatureConfig(band_lo=250.0, band_hi=10_000.0)
        with pytest.raises(ParameterError, match="at least"):
            extract_features(Signal(np.zeros(1_000), FS), cfg)
        assert minimum_segment_samples(cfg, FS) == 512 + 2_000

    def test_rms_reads_tone_amplitude(self):
        # 1 kHz tone at amplitude 0.2 -> rms 0.2/sqrt(2)
        t = np.arange(60_000) / FS
        seg = Signal(0.2 * np.sin(2 * np.pi * 1_000 * t), FS)
        cfg = FeatureConfig(band_lo=250.0, band_hi=10_000.0)
        vec = extract_features(seg, cfg)
        assert vec.values["rms_mean"] == pytest.approx(0.2 / np.sqrt(2), rel=0.02)

    def test_zcr_reads_tone_frequency(self):
        t = np.arange(60_000) / FS
        seg = Signal(0.2 * np.sin(2 * np.pi * 2_000 * t), FS)
        cfg = FeatureConfig(band_lo=250.0, band_hi=10_000.0)
        vec = extract_features(seg, cfg)
        assert vec.values["zero_crossing_rate_mean"] == pytest.approx(4_000, rel=0.02)

    def test_stereo_per_channel_and_mixdown(self):
        rng = np.random.default_rng(3)
        x = 0.05 * rng.normal(size=(60_000, 2))
        seg = Signal(x, FS)
        cfg = FeatureConfig(band_lo=250.0, band_hi=10_000.0)
        vec = extract_features(seg, cfg)
        assert "mfcc00_ch0_mean" in vec.values and "mfcc00_ch1_mean" in vec.values
        mono_cfg = FeatureConfig(band_lo=250.0, band_hi=10_000.0, channel_mode="mixdown")
        mixed = extract_features(seg, mono_cfg)
        assert "mfcc00_mean" in mixed.values

    def test_aggregator_subset(self):
        cfg = FeatureConfig(band_lo=250.0, band_hi=10_000.0, aggregators=("mean",))
        vec = extract_features(noise_segment(), cfg)
        assert all(name.endswith("_mean") for name in vec.values)

    def test_config_validation(self):
        with pytest.raises(ParameterError):
            FeatureConfig(band_lo=10_000.0, band_hi=250.0)
        with pytest.raises(ParameterError):
            FeatureConfig(band_lo=250.0, band_hi=10_000.0, aggregators=())
        with pytest.raises(ParameterError):
            FeatureConfig(band_lo=250.0, band_hi=10_000.0, extra_features=("flux",))

    def test_config_json_round_trip(self):
        cfg = FeatureConfig(band_lo=900.0, band_hi=3_000.0, aggregators=("mean",))
        again = FeatureConfig.from_json_dict(cfg.to_json_dict())
        assert again.to_json_dict() == cfg.to_json_dict()


# ---------------------------------------------------------------------------
# feature table


def toy_table(tmp_path):
    fs = 16_000.0
    rng = np.random.default_rng(0)
    sessions = []
    for i in range(3):
        x = 0.1 * rng.normal(size=int(fs * 2))
        write_wav(tmp_path / f"s{i}.wav", Signal(x, fs))
        sessions.append(
            {
                "session_id": f"s{i}",
                "subject_id": f"subj{i}",
                "side": "left" if i % 2 == 0 else "right",
                "device_id": f"D{i % 2}",
                "health_label": "Healthy" if i == 0 else "Unhealthy",
                "wav_path": f"s{i}.wav",
                "n_repetitions": 2,
            }
        )
    (tmp_path / "manifest.json").write_text(json.dumps({"sessions": sessions}))
    manifest = load_manifest(tmp_path / "manifest.json")
    cfg = FeatureConfig(band_lo=200.0, band_hi=6_000.0)
    return manifest, cfg, extract_table(manifest, cfg)


class TestFeatureTable:
    def test_row_count_and_label_propagation(self, tmp_path):
        manifest, cfg, table = toy_table(tmp_path)
        assert table.n_rows == 6
        by_id = {rec.session_id: rec for rec in manifest.sessions}
        for i in range(table.n_rows):
            rec = by_id[table.labels["session_id"][i]]
            assert table.labels["health"][i] == rec.health_label
            assert table.labels["subject"][i] == rec.subject_id
            assert table.labels["side"][i] == rec.side
            assert table.labels["device"][i] == rec.device_id

    def test_csv_round_trip_exact(self, tmp_path):
        _, _, table = toy_table(tmp_path)
        path = tmp_path / "features.csv"
        table.to_csv(path)
        again = FeatureTable.from_csv(path)
        assert again.feature_names == table.feature_names
        np.testing.assert_array_equal(again.matrix, table.matrix)
        for key in table.labels:
            np.testing.assert_array_equal(again.labels[key], table.labels[key])
        path2 = tmp_path / "features2.csv"
        again.to_csv(path2)
        assert path.read_bytes() == path2.read_bytes()

    def test_select_and_restrict(self, tmp_path):
        _, _, table = toy_table(tmp_path)
        sub = table.select(table.labels["health"] == "Unhealthy")
        assert sub.n_rows == 4
        two = table.restrict_features(["mfcc08_mean", "mfcc11_mean"])
        assert two.matrix.shape == (6, 2)
        with pytest.raises(ParameterError):
            table.restrict_features(["nope"])

    def test_vector_name_mismatch(self):
        from vibroaudit.dataset import FeatureVector

        a = FeatureVector({"x": 1.0}, "s0", 0, {})
        b = FeatureVector({"y": 1.0}, "s1", 0, {})
        with pytest.raises(ParameterError, match="mismatch"):
            FeatureTable.from_vectors([a, b])

    def test_bad_csv_header(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("a,b,c\n1,2,3\n")
        with pytest.raises(FormatError):
            FeatureTable.from_csv(path)
