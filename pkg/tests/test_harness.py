import json
import shutil
import struct

import numpy as np
import pytest

from rtsr import zoo
from rtsr.data import make_texture
from rtsr.harness import (
    ExternalCodec,
    LanczosBaseline,
    ReportRow,
    RunConfig,
    emit_report,
    load_manifest,
    parse_report,
    prepare_dataset,
    run_benchmark,
)
from rtsr.images import load_image, save_image
from rtsr.metrics import psnr, ssim, to_luma
from rtsr.resample import CHALLENGE_QPS, CodecUnavailableError, DegradationSpec, degrade, to_uint8
from rtsr.weights import (
    BadMagicError,
    ManifestError,
    TruncatedPayloadError,
    UnsupportedVersionError,
    load_weights,
    read_header,
    save_weights,
)


@pytest.fixture()
def hr_dir(tmp_path):
    d = tmp_path / "hr"
    d.mkdir()
    rng = np.random.default_rng(0)
    for i in range(2):
        save_image(make_texture(rng, 32), d / f"img{i}.png")
    return d


def specs_for(qps):
    return [DegradationSpec(scale_s=4, qp=qp) for qp in qps]


class TestWeightFile:
    def _graph(self, mode="train"):
        return zoo.build(zoo.get_spec("reptcn", width=4), mode, seed=0)

    def test_round_trip_bit_exact(self, tmp_path):
        g = self._graph()
        path = tmp_path / "m.rtsr"
        save_weights(g, path)
        g2 = load_weights(path)
        a = zoo.named_params(g)
        b = zoo.named_params(g2)
        assert a.keys() == b.keys()
        for k in a:
            np.testing.assert_array_equal(a[k], b[k])
        assert g2.mode == "train"
        assert g2.spec == g.spec

    def test_bias_stripped_model_round_trips(self, tmp_path):
        g = self._graph()
        zoo.strip_model_bias(g)
        path = tmp_path / "m.rtsr"
        save_weights(g, path)
        g2 = load_weights(path)
        assert zoo.model_biases_absent(g2)

    def test_deploy_round_trip(self, tmp_path):
        g = zoo.fuse_model(self._graph())
        path = tmp_path / "m.rtsr"
        save_weights(g, path)
        g2 = load_weights(path)
        assert g2.mode == "deploy"
        x = np.random.default_rng(1).random((1, 3, 8, 8)).astype(np.float32)
        np.testing.assert_array_equal(zoo.forward(g, x), zoo.forward(g2, x))

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "m.rtsr"
        save_weights(self._graph(), path)
        raw = bytearray(path.read_bytes())
        raw[:4] = b"NOPE"
        path.write_bytes(raw)
        with pytest.raises(BadMagicError, match="bad magic"):
            load_weights(path)

    def test_truncated_payload(self, tmp_path):
        path = tmp_path / "m.rtsr"
        save_weights(self._graph(), path)
        raw = path.read_bytes()
        path.write_bytes(raw[:-8])
        with pytest.raises(TruncatedPayloadError, match="payload"):
            load_weights(path)

    def test_future_version_rejected_earlier_minor_accepted(self, tmp_path):
        path = tmp_path / "m.rtsr"
        save_weights(self._graph(), path)
        raw = bytearray(path.read_bytes())
        raw[4:8] = struct.pack("<I", (1 << 16) | 0)  # earlier minor: accepted
        path.write_bytes(raw)
        load_weights(path)
        raw[4:8] = struct.pack("<I", (1 << 16) | 99)  # future minor: rejected
        path.write_bytes(raw)
        with pytest.raises(UnsupportedVersionError):
            load_weights(path)
        raw[4:8] = struct.pack("<I", (2 << 16) | 0)  # future major: rejected
        path.write_bytes(raw)
        with pytest.raises(UnsupportedVersionError):
            load_weights(path)

    def test_overlapping_offsets_rejected(self, tmp_path):
        path = tmp_path / "m.rtsr"
        save_weights(self._graph(), path)
        raw = path.read_bytes()
        header_len = struct.unpack("<Q", raw[8:16])[0]
        header = json.loads(raw[16 : 16 + header_len])
        header["tensors"][1]["offset"] -= 4  # overlap with the previous tensor
        hb = json.dumps(header).encode()
        # keep the payload byte-aligned by rebuilding the file
        pad = (-(16 + len(hb))) % 16
        payload_start = 16 + header_len + ((-(16 + header_len)) % 16)
        rebuilt = raw[:8] + struct.pack("<Q", len(hb)) + hb + b"\x00" * pad + raw[payload_start:]
        path.write_bytes(rebuilt)
        with pytest.raises(ManifestError, match="offset"):
            load_weights(path)

    def test_manifest_spec_mismatch(self, tmp_path):
        path = tmp_path / "m.rtsr"
        save_weights(self._graph(), path)
        raw = path.read_bytes()
        header_len = struct.unpack("<Q", raw[8:16])[0]
        header = json.loads(raw[16 : 16 + header_len])
        header["tensors"][0]["name"] = "unknown.weight"
        hb = json.dumps(header).encode()
        pad = (-(16 + len(hb))) % 16
        payload_start = 16 + header_len + ((-(16 + header_len)) % 16)
        rebuilt = raw[:8] + struct.pack("<Q", len(hb)) + hb + b"\x00" * pad + raw[payload_start:]
        path.write_bytes(rebuilt)
        with pytest.raises(ManifestError):
            load_weights(path)

    def test_payload_is_16_byte_aligned(self, tmp_path):
        path = tmp_path / "m.rtsr"
        save_weights(self._graph(), path)
        assert read_header(path)["payload_start"] % 16 == 0


class TestPrepareDataset:
    def test_five_qp_files_and_manifest(self, hr_dir, tmp_path):
        out = tmp_path / "lr"
        manifest = prepare_dataset(hr_dir, out, specs_for(CHALLENGE_QPS), use_external_codec=False)
        assert len(manifest) == 2 * 5
        for qp in CHALLENGE_QPS:
            assert (out / f"img0_4x_qp{qp}.png").exists()
        listed = load_manifest(out / "manifest.json")
        assert {e["qp"] for e in listed} == set(CHALLENGE_QPS)

    def test_internal_mode_matches_degrade_bytes(self, hr_dir, tmp_path):
        out = tmp_path / "lr"
        prepare_dataset(hr_dir, out, [DegradationSpec(scale_s=4)], use_external_codec=False)
        hr = load_image(hr_dir / "img0.png")
        want = to_uint8(degrade(hr, DegradationSpec(scale_s=4)))
        got = to_uint8(load_image(out / "img0_4x.png"))
        np.testing.assert_array_equal(got, want)

    def test_idempotent_byte_identical(self, hr_dir, tmp_path):
        out = tmp_path / "lr"
        prepare_dataset(hr_dir, out, specs_for((31,)), use_external_codec=False)
        first = {p.name: p.read_bytes() for p in out.iterdir()}
        prepare_dataset(hr_dir, out, specs_for((31,)), use_external_codec=False)
        second = {p.name: p.read_bytes() for p in out.iterdir()}
        assert first == second

    def test_unreadable_file_recorded_run_continues(self, hr_dir, tmp_path):
        (hr_dir / "broken.png").write_bytes(b"not a png")
        out = tmp_path / "lr"
        manifest = prepare_dataset(hr_dir, out, specs_for((31,)), use_external_codec=False)
        assert len(manifest) == 2
        payload = json.loads((out / "manifest.json").read_text())
        assert len(payload["errors"]) == 1
        assert "broken.png" in payload["errors"][0]["file"]

    def test_missing_codec_raises(self, hr_dir, tmp_path):
        codec = ExternalCodec(template="definitely-not-a-binary {input} {scale} {qp} {preset} {output}")
        with pytest.raises(CodecUnavailableError, match="probe"):
            prepare_dataset(hr_dir, tmp_path / "lr", specs_for((31,)), use_external_codec=True, codec=codec)

    @pytest.mark.skipif(shutil.which("ffmpeg") is None, reason="external codec not installed")
    def test_external_codec_naming_convention(self, hr_dir, tmp_path):
        out = tmp_path / "lr"
        manifest = prepare_dataset(hr_dir, out, specs_for(CHALLENGE_QPS), use_external_codec=True)
        assert len(manifest) == 2 * 5
        for qp in CHALLENGE_QPS:
            assert (out / f"img0_4x_qp{qp}.png").exists()

    @pytest.mark.skipif(shutil.which("ffmpeg") is None, reason="external codec not installed")
    def test_codec_handle_feeds_degrade(self, hr_dir):
        from rtsr.images import load_image
        from rtsr.resample import degrade

        codec = ExternalCodec()
        codec.require()
        hr = load_image(hr_dir / "img0.png")
        lr = degrade(hr, DegradationSpec(scale_s=4, qp=63), codec=codec.as_degrade_handle())
        assert lr.shape == (1, 3, 8, 8)
        assert 0.0 <= lr.min() and lr.max() <= 1.0


class FakeClock:
    """Deterministic monotonic clock: every (start, stop) interval is 0.5 ms."""

    def __init__(self):
        self.calls = 0

    def __call__(self):
        self.calls += 1
        return self.calls * 0.0005


@pytest.fixture()
def manifest_path(hr_dir, tmp_path):
    out = tmp_path / "lr"
    prepare_dataset(hr_dir, out, specs_for((31, 63)), use_external_codec=False)
    return out / "manifest.json"


class TestRunBenchmark:
    def test_baseline_delta_zero_score_omitted(self, manifest_path):
        cfg = RunConfig(weights="lanczos", manifest=str(manifest_path), warmup=1, runs=2)
        rows = run_benchmark(cfg)
        assert {r.qp for r in rows} == {31, 63}
        for row in rows:
            assert row.delta_db == 0.0
            assert row.score is None
            assert row.params_m is None

    def test_timing_protocol_honored(self, manifest_path, monkeypatch):
        clock = FakeClock()
        forwards = []
        original = LanczosBaseline.forward

        def counting_forward(self, lr):
            forwards.append(1)
            return original(self, lr)

        monkeypatch.setattr(LanczosBaseline, "forward", counting_forward)
        cfg = RunConfig(weights="lanczos", manifest=str(manifest_path), warmup=3, runs=7)
        rows = run_benchmark(cfg, clock=clock)
        # 2 images x 2 qps: 7 timed runs each (2 clock calls per run), 3 untimed warmups
        assert clock.calls == 4 * 7 * 2
        assert len(forwards) == 4 * (3 + 7)
        for row in rows:
            assert row.runtime_ms_mean == pytest.approx(0.5)
            assert row.runtime_ms_p50 == pytest.approx(0.5)

    def test_runtime_mean_is_exact_sample_mean(self, manifest_path):
        class SkewClock:
            """Deterministic accelerating clock; intervals grow every call."""

            def __init__(self):
                self.t = 0.0
                self.tick = 0

            def __call__(self):
                self.tick += 1
                self.t += 0.001 * self.tick
                return self.t

        cfg = RunConfig(weights="lanczos", manifest=str(manifest_path), qps=(31,), warmup=0, runs=5)
        rows = run_benchmark(cfg, clock=SkewClock())
        assert len(rows) == 1
        # replay the clock sequence: per timed run the interval is one tick gap
        replay = SkewClock()
        samples = []
        for _ in range(2 * 5):  # 2 images at qp31, 5 timed runs each
            t0 = replay()
            t1 = replay()
            samples.append((t1 - t0) * 1000.0)
        assert rows[0].runtime_ms_mean == sum(samples) / len(samples)

    def test_metric_columns_match_manual_metrics(self, manifest_path, hr_dir):
        cfg = RunConfig(weights="lanczos", manifest=str(manifest_path), qps=(31,), warmup=0, runs=1)
        rows = run_benchmark(cfg)
        base = LanczosBaseline()
        vals = []
        for entry in load_manifest(manifest_path):
            if entry["qp"] != 31:
                continue
            lr = load_image(entry["lr"])
            hr = load_image(entry["hr"])
            sr = np.clip(base.forward(lr), 0, 1)
            vals.append(
                (psnr(sr, hr), psnr(to_luma(sr), to_luma(hr)), ssim(sr, hr), ssim(to_luma(sr), to_luma(hr)))
            )
        want = np.array(vals).mean(axis=0)
        assert rows[0].psnr_rgb == pytest.approx(want[0], abs=1e-9)
        assert rows[0].psnr_y == pytest.approx(want[1], abs=1e-9)
        assert rows[0].ssim_rgb == pytest.approx(want[2], abs=1e-9)
        assert rows[0].ssim_y == pytest.approx(want[3], abs=1e-9)

    def test_model_with_supplied_baseline_gets_delta_and_score(self, manifest_path, tmp_path):
        g = zoo.fuse_model(zoo.build(zoo.get_spec("reptcn", width=4), "train", seed=0))
        wpath = tmp_path / "m.rtsr"
        save_weights(g, wpath)
        cfg = RunConfig(
            weights=str(wpath),
            manifest=str(manifest_path),
            warmup=0,
            runs=1,
            baseline_psnr_y={31: 30.0, 63: 28.0},
        )
        rows = run_benchmark(cfg)
        assert rows[0].delta_db is not None
        assert rows[0].score is not None
        assert rows[0].params_m == pytest.approx(g.param_count() / 1e6)

    def test_deploy_matches_train_metrics_and_speed(self, manifest_path, tmp_path):
        train_g = zoo.build(zoo.get_spec("reptcn"), "train", seed=0)
        deploy_g = zoo.fuse_model(train_g)
        paths = []
        for tag, g in (("train", train_g), ("deploy", deploy_g)):
            p = tmp_path / f"{tag}.rtsr"
            save_weights(g, p)
            paths.append(p)
        rows = [
            run_benchmark(RunConfig(weights=str(p), manifest=str(manifest_path), warmup=2, runs=15))
            for p in paths
        ]
        for rt, rd in zip(*rows):
            assert abs(rt.psnr_rgb - rd.psnr_rgb) < 1e-3
            assert abs(rt.psnr_y - rd.psnr_y) < 1e-3
        # the fused form runs one conv where training runs a branch forest;
        # medians are compared to tolerate scheduler noise
        train_p50 = min(r.runtime_ms_p50 for r in rows[0])
        deploy_p50 = min(r.runtime_ms_p50 for r in rows[1])
        assert deploy_p50 <= train_p50 * 1.2


class TestReports:
    def _rows(self):
        return [
            ReportRow("reptcn", 31, 30.97, 33.31, 0.809, 0.85, 0.685, 0.68, 0.7, 0.0096, 0.355, 30.91),
            ReportRow("reptcn", 63, 26.83, 29.27, 0.719, 0.777, 0.685, 0.68, 0.7, 0.0096, 0.355, 30.91),
            ReportRow("lanczos", 31, 30.36, 32.75, 0.8, 0.843, 0.1, 0.1, 0.1, None, 0.0, None),
        ]

    def test_csv_round_trip(self):
        rows = self._rows()
        text = emit_report(rows, "csv")
        assert parse_report(text, "csv") == rows
        assert text.splitlines()[0].startswith("model,qp,psnr_rgb")

    def test_json_round_trip(self):
        rows = self._rows()
        assert parse_report(emit_report(rows, "json"), "json") == rows

    def test_single_row_csv(self):
        text = emit_report(self._rows()[:1], "csv")
        assert len(text.strip().splitlines()) == 2

    def test_table_is_aligned(self):
        text = emit_report(self._rows(), "table")
        lines = text.splitlines()
        assert len({len(l) for l in lines}) == 1

    def test_empty_rows_error_no_file(self, tmp_path):
        target = tmp_path / "r.csv"
        with pytest.raises(ValueError, match="no rows"):
            emit_report([], "csv", target)
        assert not target.exists()

    def test_write_to_path(self, tmp_path):
        target = tmp_path / "r.json"
        emit_report(self._rows(), "json", target)
        assert parse_report(target.read_text(), "json") == self._rows()
