"""Choosing the criterion weight lambda from clean calibration images.

For a noise level sigma every calibration image is corrupted, denoised once
and its loss / JPEG size / PSNR traces are stored. Because the criterion is a
fixed function of the stored loss and size, any lambda can be scored afterwards
without re-running the optimisation: pick the epoch minimising the criterion,
read off the PSNR there and average over images. The grid member with the best
mean PSNR wins.

Results for several sigmas form a :class:`LambdaTable`, interpolated linearly
in (sigma, log lambda).
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigurationError, InputError, ParseError
from .es import EpochTrace, EsConfig, detect_es, run_dip_with_es
from .images import NoiseSpec, add_gaussian_noise, stable_seed
from .model import NetworkConfig
from .parallel import map_jobs

log = logging.getLogger(__name__)

GLOBAL = "global"
WINDOWED = "windowed"


def default_grid(lo: float = 1.0, hi: float = 1e8, points: int = 33) -> list[float]:
    """Log-spaced grid, four points per decade by default.

    The loss is a mean over [0, 1] pixels (around 1e-3 at convergence) while the
    size term is in the hundreds, so useful weights sit around 1e4..1e6.
    """
    return [float(v) for v in np.logspace(math.log10(lo), math.log10(hi), points)]


def parse_grid(spec: str) -> list[float]:
    """``"a,b,c"`` lists values; ``"log:lo:hi:n"`` gives n log-spaced points."""
    spec = spec.strip()
    try:
        if spec.startswith("log:"):
            _, lo, hi, n = spec.split(":")
            grid = default_grid(float(lo), float(hi), int(n))
        else:
            grid = [float(v) for v in spec.split(",") if v.strip()]
    except ValueError:
        raise ConfigurationError(f"cannot parse lambda grid {spec!r}") from None
    if not grid:
        raise ConfigurationError("lambda grid is empty")
    if any(not (g >= 0) or math.isinf(g) for g in grid):
        raise ConfigurationError("lambda grid values must be finite and >= 0")
    return sorted(set(grid))


def selected_index(trace: EpochTrace, lam: float, mode: str = GLOBAL, patience: Optional[int] = None) -> int:
    """Row index of the epoch a given lambda would stop at."""
    values = trace.criterion_for(lam)
    if mode == GLOBAL:
        return int(np.argmin(values))
    if mode == WINDOWED:
        if patience is None:
            raise ConfigurationError("windowed selection needs a patience")
        return detect_es(values, patience).t_star - 1
    raise ConfigurationError(f"unknown selection mode {mode!r}")


def score_lambda(traces: Sequence[EpochTrace], lam: float, mode: str = GLOBAL,
                 patience: Optional[int] = None) -> list[float]:
    scores = []
    for tr in traces:
        idx = selected_index(tr, lam, mode, patience)
        p = tr.psnr[idx]
        if p is None:
            raise ConfigurationError("calibration traces must carry PSNR")
        scores.append(p)
    return scores


@dataclass
class CalibrationRun:
    sigma: float
    grid: list
    traces: list = field(default_factory=list, repr=False)
    names: list = field(default_factory=list)
    mode: str = GLOBAL
    patience: Optional[int] = None
    report: list = field(default_factory=list)  # (lambda, mean, std)
    best_lambda: Optional[float] = None

    def rescore(self):
        self.report = []
        for lam in self.grid:
            s = np.array(score_lambda(self.traces, lam, self.mode, self.patience))
            self.report.append((lam, float(s.mean()), float(s.std())))
        best = max(range(len(self.report)), key=lambda i: (self.report[i][1], -i))
        self.best_lambda = self.report[best][0]
        return self.best_lambda

    def report_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["lambda", "mean_psnr", "std_psnr"])
        for lam, mean, std in self.report:
            w.writerow([repr(lam), repr(mean), repr(std)])
        return buf.getvalue()


def _calibration_job(args):
    name, clean, sigma, net_config, es_config, seed = args
    noisy = add_gaussian_noise(clean, NoiseSpec(sigma, seed=stable_seed("noise", name, sigma, seed)))
    cfg = replace(es_config, lam=0.0, seed=stable_seed("dip", name, sigma, seed) % 2**32)
    trace, _ = run_dip_with_es(noisy, net_config, cfg, clean=clean)
    return trace


def calibrate(
    clean_images: Sequence,
    sigma: float,
    grid: Sequence[float],
    net_config: Optional[NetworkConfig] = None,
    es_config: Optional[EsConfig] = None,
    mode: str = GLOBAL,
    seed: int = 0,
    workers: int = 1,
) -> CalibrationRun:
    """Return the calibration run; ``run.best_lambda`` is the chosen weight.

    ``clean_images`` holds ``(name, image)`` pairs or bare images. One DIP run
    per image is made and reused for every grid member.
    """
    if not clean_images:
        raise ConfigurationError("calibration needs at least one clean image")
    grid = sorted(float(g) for g in grid)
    if not grid:
        raise ConfigurationError("lambda grid is empty")
    if any(g < 0 for g in grid):
        raise ConfigurationError("lambda grid values must be >= 0")
    es_config = es_config or EsConfig()
    named = [item if isinstance(item, tuple) else (f"image{i}", item) for i, item in enumerate(clean_images)]
    jobs = [(name, img, sigma, net_config, es_config, seed) for name, img in named]
    traces = map_jobs(_calibration_job, jobs, workers)
    patience = es_config.patience // es_config.cifs_stride
    run = CalibrationRun(sigma=sigma, grid=grid, traces=traces, names=[n for n, _ in named],
                         mode=mode, patience=patience)
    run.rescore()
    log.info("sigma=%g best lambda=%g", sigma, run.best_lambda)
    return run


@dataclass
class LambdaTable:
    rows: list = field(default_factory=list)  # sorted (sigma, lambda)

    def __post_init__(self):
        self.rows = sorted((float(s), float(l)) for s, l in self.rows)
        sig = [s for s, _ in self.rows]
        if len(set(sig)) != len(sig):
            raise ConfigurationError("duplicate sigma in lambda table")
        if any(l <= 0 for _, l in self.rows):
            raise ConfigurationError("lambda table entries must be positive")

    def upsert(self, sigma: float, lam: float):
        """Insert a row; an existing row with the same sigma is replaced."""
        if lam <= 0:
            raise ConfigurationError("lambda table entries must be positive")
        self.rows = sorted([r for r in self.rows if r[0] != float(sigma)] + [(float(sigma), float(lam))])

    def to_csv(self) -> str:
        return "sigma,lambda\n" + "".join(f"{s!r},{l!r}\n" for s, l in self.rows)

    def save(self, path):
        Path(path).write_text(self.to_csv())

    @classmethod
    def from_csv(cls, text: str) -> "LambdaTable":
        reader = csv.reader(io.StringIO(text))
        header = next(reader, None)
        if header != ["sigma", "lambda"]:
            raise ParseError("lambda table header must be 'sigma,lambda'", "line 1")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                rows.append((float(row[0]), float(row[1])))
            except (ValueError, IndexError):
                raise ParseError(f"malformed lambda table row {row!r}", f"line {lineno}") from None
        return cls(rows)

    @classmethod
    def load(cls, path) -> "LambdaTable":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise InputError(f"cannot read lambda table {path}: {exc}") from None
        return cls.from_csv(text)


def lambda_for_sigma(table: LambdaTable, sigma: float) -> float:
    """Piecewise-linear interpolation of log(lambda) over sigma, clamped at the ends."""
    if not table.rows:
        raise ConfigurationError("lambda table is empty")
    # knots and clamped ends return the stored value exactly; exp(log(x)) can drift by an ulp
    for s_k, lam in table.rows:
        if sigma == s_k:
            return lam
    if sigma <= table.rows[0][0]:
        return table.rows[0][1]
    if sigma >= table.rows[-1][0]:
        return table.rows[-1][1]
    s = np.array([r[0] for r in table.rows])
    logl = np.log([r[1] for r in table.rows])
    return float(np.exp(np.interp(sigma, s, logl)))
