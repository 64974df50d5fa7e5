"""Benchmark protocol: noisy copies of clean images, ES denoising, PSNR summary.

For each image and noise level the optimisation runs for the full number of
epochs; three PSNRs are reported against the clean image: at the detected
epoch ("ES"), at the last epoch ("No ES") and the best seen during the run
("Peak").
"""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from .calibration import LambdaTable, lambda_for_sigma
from .errors import CifsDipError, InputError
from .es import EsConfig, run_dip_with_es
from .images import NoiseSpec, add_gaussian_noise, crop_divisible, list_images, load_image, stable_seed
from .model import NetworkConfig
from .parallel import map_jobs

log = logging.getLogger(__name__)

REPORT_HEADER = ("image", "sigma", "psnr_es", "psnr_no_es", "psnr_peak", "t_star", "fallback")


@dataclass
class BenchmarkRow:
    image: str
    sigma: float
    psnr_es: float
    psnr_no_es: float
    psnr_peak: float
    t_star: int
    fallback: bool


@dataclass
class BenchmarkReport:
    rows: list = field(default_factory=list)
    failures: list = field(default_factory=list)  # (image, sigma, message)

    def aggregate(self) -> dict:
        """Per sigma: count and mean/std (population) of each PSNR column."""
        out = {}
        for sigma in sorted({r.sigma for r in self.rows}):
            sel = [r for r in self.rows if r.sigma == sigma]
            entry = {"n": len(sel)}
            for col in ("psnr_es", "psnr_no_es", "psnr_peak"):
                v = np.array([getattr(r, col) for r in sel])
                entry[col] = (float(v.mean()), float(v.std()))
            out[sigma] = entry
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(REPORT_HEADER)
        for r in self.rows:
            w.writerow([r.image, repr(float(r.sigma)), repr(r.psnr_es), repr(r.psnr_no_es),
                        repr(r.psnr_peak), r.t_star, str(r.fallback).lower()])
        return buf.getvalue()

    def aggregate_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["sigma", "n", "es_mean", "es_std", "no_es_mean", "no_es_std", "peak_mean", "peak_std"])
        for sigma, e in self.aggregate().items():
            w.writerow([repr(sigma), e["n"], *(repr(x) for c in ("psnr_es", "psnr_no_es", "psnr_peak") for x in e[c])])
        return buf.getvalue()


def _bench_job(args):
    name, clean, sigma, lam, net_config, es_config, seed, trace_dir = args
    noisy = add_gaussian_noise(clean, NoiseSpec(sigma, seed=stable_seed("noise", name, sigma, seed)))
    cfg = replace(es_config, lam=lam, seed=stable_seed("dip", name, sigma, seed) % 2**32)
    try:
        trace, res = run_dip_with_es(noisy, net_config, cfg, clean=clean)
    except CifsDipError as exc:
        return name, sigma, None, f"{type(exc).__name__}: {exc}"
    if trace_dir is not None:
        trace.save(Path(trace_dir) / f"{name}_sigma{sigma:g}.csv")
    row = BenchmarkRow(name, float(sigma), res.psnr_at_tstar, res.psnr_no_es, res.psnr_peak,
                       res.t_star, res.fallback)
    return name, sigma, row, None


def load_dataset(image_dir, multiple: int, max_size: Optional[int] = None) -> list[tuple[str, np.ndarray]]:
    paths = list_images(image_dir)
    if not paths:
        raise InputError(f"no PPM/PGM images in {image_dir}")
    return [(p.stem, crop_divisible(load_image(p), multiple, max_size)) for p in paths]


def run_benchmark(
    images: Union[str, Path, Sequence[tuple[str, np.ndarray]]],
    sigmas: Sequence[float],
    lam: Union[float, LambdaTable],
    net_config: Optional[NetworkConfig] = None,
    es_config: Optional[EsConfig] = None,
    seed: int = 0,
    workers: int = 1,
    trace_dir=None,
    max_size: Optional[int] = None,
) -> BenchmarkReport:
    """Run every (image, sigma) job; ``lam`` is a fixed weight or a sigma->lambda table."""
    es_config = es_config or EsConfig()
    depth = net_config.depth if net_config is not None else 3
    if isinstance(images, (str, Path)):
        images = load_dataset(images, 2 ** depth, max_size)
    if not images:
        raise InputError("benchmark needs at least one image")
    if trace_dir is not None:
        Path(trace_dir).mkdir(parents=True, exist_ok=True)
    jobs = []
    for name, img in sorted(images, key=lambda item: item[0]):
        for sigma in sorted(float(s) for s in sigmas):
            weight = lambda_for_sigma(lam, sigma) if isinstance(lam, LambdaTable) else float(lam)
            nc = net_config if net_config is None or net_config.output_channels == img.shape[0] else \
                replace(net_config, output_channels=img.shape[0])
            jobs.append((name, img, sigma, weight, nc, es_config, seed, trace_dir))
    report = BenchmarkReport()
    for name, sigma, row, err in map_jobs(_bench_job, jobs, workers):
        if row is None:
            log.warning("benchmark job %s sigma=%g failed: %s", name, sigma, err)
            report.failures.append((name, sigma, err))
        else:
            report.rows.append(row)
    if not report.rows:
        raise CifsDipError("every benchmark job failed")
    return report
