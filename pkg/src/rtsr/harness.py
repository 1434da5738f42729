"""Dataset preparation, the timing/evaluation protocol, and report emission.

The evaluation pipeline mirrors the challenge protocol: LR inputs are made by
Lanczos downscaling plus AV1 image compression at five QP values (via an
external encoder command template), models are timed over warmup + N monotonic-
clock runs, fidelity is reported as PSNR/SSIM over RGB and luma, and models are
ranked by the score (2 * 2^delta) / (sqrt(T) * C).
"""

from __future__ import annotations

import csv
import io
import json
import shlex
import statistics
import subprocess
import tempfile
import time
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import metrics, zoo
from .images import load_image, save_image
from .resample import (
    BASELINE_UP,
    CodecUnavailableError,
    DegradationSpec,
    degrade,
    resample_image,
)
from .weights import load_weights

#: The challenge's reference degradation command (single image -> AVIF).
DEFAULT_CODEC_TEMPLATE = (
    "ffmpeg -hide_banner -y -loglevel error -i {input} "
    "-vf 'scale=ceil(iw/{scale}):ceil(ih/{scale}):"
    "flags=lanczos+accurate_rnd+full_chroma_int:sws_dither=none:param0=5' "
    "-c:v libsvtav1 -qp {qp} -preset {preset} {output}"
)
DEFAULT_DECODE_TEMPLATE = "ffmpeg -hide_banner -y -loglevel error -i {input} {output}"
DEFAULT_PRESET = 5


class ExternalCodec:
    """Subprocess-backed encoder/decoder built from command templates.

    Templates use ``{input}``, ``{scale}``, ``{qp}``, ``{preset}`` and
    ``{output}`` placeholders; the defaults reproduce the challenge pipeline
    (Lanczos downscale inside the scaler, SVT-AV1 still-image encode, decode
    back to PNG).
    """

    def __init__(
        self,
        template: str = DEFAULT_CODEC_TEMPLATE,
        decode_template: str = DEFAULT_DECODE_TEMPLATE,
        preset: int = DEFAULT_PRESET,
    ):
        self.template = template
        self.decode_template = decode_template
        self.preset = preset

    def _argv(self, template: str, **subs) -> list[str]:
        return [part.format(**subs) for part in shlex.split(template)]

    def available(self) -> bool:
        argv = shlex.split(self.template)
        if not argv:
            return False
        try:
            subprocess.run(
                [argv[0], "-version"], capture_output=True, check=True, timeout=30
            )
            return True
        except (OSError, subprocess.SubprocessError):
            return False

    def require(self) -> None:
        if not self.available():
            probed = shlex.split(self.template)[0] if self.template.split() else "<empty>"
            raise CodecUnavailableError(
                f"codec unavailable: probe of {probed!r} failed (template: {self.template})"
            )

    def degrade_file(self, hr_path, out_png, scale: int, qp: int) -> None:
        """Run the full degradation command: downscale + encode, then decode to PNG."""
        out_png = Path(out_png)
        with tempfile.TemporaryDirectory() as tmp:
            avif = Path(tmp) / "lr.avif"
            enc = self._argv(
                self.template, input=str(hr_path), scale=scale, qp=qp, preset=self.preset, output=str(avif)
            )
            subprocess.run(enc, check=True, capture_output=True)
            dec = self._argv(self.decode_template, input=str(avif), output=str(out_png))
            subprocess.run(dec, check=True, capture_output=True)

    def as_degrade_handle(self):
        """Adapter for :func:`rtsr.resample.degrade`: compress an in-memory LR image.

        Returns a callable ``(lr_float01, qp) -> lr_float01`` that round-trips
        the image through the encoder at scale 1 (compression only).
        """
        from .images import load_image, save_image

        def handle(lr, qp):
            with tempfile.TemporaryDirectory() as tmp:
                src = Path(tmp) / "in.png"
                dst = Path(tmp) / "out.png"
                save_image(lr, src)
                self.degrade_file(src, dst, scale=1, qp=qp)
                return load_image(dst)

        return handle


def prepare_dataset(
    hr_dir,
    out_dir,
    specs: list[DegradationSpec],
    use_external_codec: bool = False,
    codec: ExternalCodec | None = None,
) -> list[dict]:
    """Produce LR inputs for every HR image and degradation spec.

    Writes ``{stem}_{s}x_qp{qp}.png`` files (``{stem}_{s}x.png`` without a QP
    stage) plus a ``manifest.json`` listing all pairs.  Internal mode is
    deterministic and byte-idempotent; unreadable images are reported in the
    manifest's ``errors`` and skipped.
    """
    hr_dir = Path(hr_dir)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    images = sorted(p for p in hr_dir.iterdir() if p.suffix.lower() in (".png", ".ppm"))
    if use_external_codec:
        codec = codec or ExternalCodec()
        codec.require()
    manifest: list[dict] = []
    errors: list[dict] = []
    for path in images:
        try:
            hr = load_image(path)
        except Exception as e:  # unreadable file: record and continue
            errors.append({"file": str(path), "error": str(e)})
            continue
        if hr.shape[2] < 4 * max(s.scale_s for s in specs) or hr.shape[3] < 4 * max(
            s.scale_s for s in specs
        ):
            errors.append({"file": str(path), "error": "image smaller than 4x the scale factor"})
            continue
        for spec in specs:
            tag = f"_{spec.scale_s}x_qp{spec.qp}" if spec.qp is not None else f"_{spec.scale_s}x"
            lr_path = out_dir / f"{path.stem}{tag}.png"
            if use_external_codec and spec.qp is not None:
                codec.degrade_file(path, lr_path, spec.scale_s, spec.qp)
            else:
                lr = degrade(hr, DegradationSpec(scale_s=spec.scale_s, kernel=spec.kernel))
                save_image(lr, lr_path)
            manifest.append(
                {"lr": str(lr_path), "hr": str(path), "qp": spec.qp, "scale": spec.scale_s}
            )
    payload = {"pairs": manifest, "errors": errors}
    (out_dir / "manifest.json").write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
    return manifest


def load_manifest(path) -> list[dict]:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if isinstance(data, dict):
        return data["pairs"]
    return data


# --- models under benchmark --------------------------------------------------


class LanczosBaseline:
    """The challenge's reference upsampler as a pseudo-model."""

    name = "lanczos"

    def __init__(self, scale: int = 4):
        self.scale = scale

    def forward(self, lr):
        return resample_image(lr, lr.shape[2] * self.scale, lr.shape[3] * self.scale, BASELINE_UP)

    def param_count(self):
        return None


class GraphModel:
    """A zoo graph under benchmark; pads inputs to the graph's divisor."""

    def __init__(self, graph: zoo.ModelGraph, border: int = 0):
        self.graph = graph
        self.name = graph.spec.name
        self.scale = graph.spec.scale
        self.border = border

    def forward(self, lr):
        return zoo.forward_padded(self.graph, lr, border=self.border)

    def param_count(self):
        return self.graph.param_count()


def load_model(weights: str, border: int = 0):
    """Resolve a model reference: ``lanczos`` or a weight-file path."""
    if weights == "lanczos":
        return LanczosBaseline()
    return GraphModel(load_weights(weights), border=border)


# --- benchmark -----------------------------------------------------------


@dataclass(frozen=True)
class RunConfig:
    """One evaluation run: model, dataset manifest, timing protocol, output."""

    weights: str
    manifest: str
    qps: tuple[int, ...] | None = None
    warmup: int = 10
    runs: int = 100
    threads: int = 1
    report_path: str | None = None
    report_format: str = "csv"
    baseline_psnr_y: dict | None = None
    include_baseline: bool = False
    pad_border: int = 0

    def __post_init__(self):
        if self.warmup < 0:
            raise ValueError(f"warmup must be >= 0, got {self.warmup}")
        if self.runs < 1:
            raise ValueError(f"timed runs must be >= 1, got {self.runs}")
        if self.threads < 1:
            raise ValueError(f"thread count must be >= 1, got {self.threads}")


@dataclass(frozen=True)
class ReportRow:
    model: str
    qp: int | None
    psnr_rgb: float | None
    psnr_y: float | None
    ssim_rgb: float | None
    ssim_y: float | None
    runtime_ms_mean: float
    runtime_ms_p50: float
    runtime_ms_p95: float
    params_m: float | None
    delta_db: float | None
    score: float | None


def _evaluate_pair(model, lr, hr, warmup, runs, clock):
    for _ in range(warmup):
        model.forward(lr)
    samples = []
    sr = None
    for _ in range(runs):
        t0 = clock()
        sr = model.forward(lr)
        samples.append((clock() - t0) * 1000.0)
    quality = None
    if hr is not None:
        sr_c = np.clip(sr[:, :, : hr.shape[2], : hr.shape[3]], 0.0, 1.0)
        if sr_c.shape != hr.shape:
            raise ValueError(
                f"SR output {sr_c.shape} does not cover the HR reference {hr.shape}"
            )
        quality = (
            metrics.psnr(sr_c, hr),
            metrics.psnr(metrics.to_luma(sr_c), metrics.to_luma(hr)),
            metrics.ssim(sr_c, hr),
            metrics.ssim(metrics.to_luma(sr_c), metrics.to_luma(hr)),
        )
    return samples, quality


def _model_rows(model, pairs, cfg: RunConfig, clock) -> tuple[list[dict], float]:
    by_qp: dict = {}
    for entry in pairs:
        lr = load_image(entry["lr"])
        hr = load_image(entry["hr"]) if entry.get("hr") else None
        samples, quality = _evaluate_pair(model, lr, hr, cfg.warmup, cfg.runs, clock)
        bucket = by_qp.setdefault(entry.get("qp"), {"samples": [], "quality": []})
        bucket["samples"].extend(samples)
        if quality is not None:
            bucket["quality"].append(quality)
    rows = []
    all_samples = []
    for qp in sorted(by_qp, key=lambda q: (q is None, q)):
        bucket = by_qp[qp]
        all_samples.extend(bucket["samples"])
        q = np.array(bucket["quality"]) if bucket["quality"] else None
        rows.append(
            {
                "qp": qp,
                "psnr_rgb": float(q[:, 0].mean()) if q is not None else None,
                "psnr_y": float(q[:, 1].mean()) if q is not None else None,
                "ssim_rgb": float(q[:, 2].mean()) if q is not None else None,
                "ssim_y": float(q[:, 3].mean()) if q is not None else None,
                "samples": bucket["samples"],
            }
        )
    overall_mean = sum(all_samples) / len(all_samples)
    return rows, overall_mean


def run_benchmark(cfg: RunConfig, clock=time.perf_counter) -> list[ReportRow]:
    """Evaluate a model over a prepared manifest; returns one row per QP level.

    Delta and score need baseline PSNR-Y numbers at QP 31 and 63: either pass
    ``baseline_psnr_y``, or set ``include_baseline`` to run the Lanczos
    pseudo-model on the same manifest in the same call.
    """
    pairs = load_manifest(cfg.manifest)
    if cfg.qps is not None:
        pairs = [p for p in pairs if p.get("qp") in cfg.qps]
    if not pairs:
        raise ValueError(f"manifest {cfg.manifest} has no pairs matching the QP filter")
    model = load_model(cfg.weights, border=cfg.pad_border)
    # timing runs on a quiesced process: pin the BLAS pool to the configured width
    with threadpool_limits(limits=cfg.threads):
        rows_raw, runtime_overall = _model_rows(model, pairs, cfg, clock)

        baseline_y = dict(cfg.baseline_psnr_y) if cfg.baseline_psnr_y else None
        if baseline_y is None and cfg.include_baseline and not isinstance(model, LanczosBaseline):
            base_rows, _ = _model_rows(LanczosBaseline(), pairs, cfg, clock)
            baseline_y = {
                r["qp"]: r["psnr_y"]
                for r in base_rows
                if r["qp"] is not None and r["psnr_y"] is not None
            }

    model_y = {
        r["qp"]: r["psnr_y"] for r in rows_raw if r["qp"] is not None and r["psnr_y"] is not None
    }
    delta = None
    score = None
    if isinstance(model, LanczosBaseline):
        delta = 0.0
    elif baseline_y and all(q in model_y and q in baseline_y for q in metrics.DELTA_QPS):
        delta = metrics.delta_psnr(model_y, baseline_y)
        score = metrics.challenge_score(metrics.ScoreInputs(delta, runtime_overall))
    params = model.param_count()
    report = []
    for r in rows_raw:
        samples = r["samples"]
        report.append(
            ReportRow(
                model=model.name,
                qp=r["qp"],
                psnr_rgb=r["psnr_rgb"],
                psnr_y=r["psnr_y"],
                ssim_rgb=r["ssim_rgb"],
                ssim_y=r["ssim_y"],
                runtime_ms_mean=sum(samples) / len(samples),
                runtime_ms_p50=float(statistics.median(samples)),
                runtime_ms_p95=float(np.percentile(samples, 95)),
                params_m=None if params is None else params / 1e6,
                delta_db=delta,
                score=score,
            )
        )
    if cfg.report_path:
        emit_report(report, cfg.report_format, cfg.report_path)
    return report


# --- reports ------------------------------------------------------------


_COLUMNS = [f.name for f in fields(ReportRow)]


def _cell(value) -> str:
    if value is None:
        return ""
    return str(value)


def emit_report(rows: list[ReportRow], format: str = "csv", path=None) -> str:
    """Render rows as csv, json or an aligned table; optionally write to ``path``."""
    if not rows:
        raise ValueError("emit_report: no rows to emit")
    if format == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(_COLUMNS)
        for row in rows:
            writer.writerow([_cell(getattr(row, c)) for c in _COLUMNS])
        text = buf.getvalue()
    elif format == "json":
        text = json.dumps([{c: getattr(r, c) for c in _COLUMNS} for r in rows], indent=2) + "\n"
    elif format == "table":
        cells = [_COLUMNS] + [
            [
                f"{getattr(r, c):.3f}" if isinstance(getattr(r, c), float) else _cell(getattr(r, c))
                for c in _COLUMNS
            ]
            for r in rows
        ]
        widths = [max(len(line[i]) for line in cells) for i in range(len(_COLUMNS))]
        text = "\n".join("  ".join(cell.rjust(w) for cell, w in zip(line, widths)) for line in cells) + "\n"
    else:
        raise ValueError(f"unknown report format {format!r}")
    if path:
        Path(path).write_text(text, encoding="utf-8")
    return text


def _parse_value(column: str, raw):
    if raw in ("", None):
        return None
    if column == "model":
        return raw
    if column == "qp":
        return int(raw)
    return float(raw)


def parse_report(text: str, format: str = "csv") -> list[ReportRow]:
    """Inverse of emit_report for the csv and json formats."""
    rows = []
    if format == "csv":
        reader = csv.reader(io.StringIO(text))
        header = next(reader)
        if header != _COLUMNS:
            raise ValueError(f"unexpected report header {header}")
        for line in reader:
            values = {c: _parse_value(c, raw) for c, raw in zip(_COLUMNS, line)}
            rows.append(ReportRow(**values))
    elif format == "json":
        for item in json.loads(text):
            rows.append(ReportRow(**{c: item.get(c) for c in _COLUMNS}))
    else:
        raise ValueError(f"cannot parse report format {format!r}")
    return rows
