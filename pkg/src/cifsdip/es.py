"""JPEG-size early stopping for deep-image-prior optimisation.

Each epoch the network output is quantised to 8 bits and JPEG encoded; the
byte count ``L`` enters the criterion

    E(t) = lam * loss(t) + L(t)**2 / (H * W)

and the stopping epoch is the earliest ``t`` whose criterion value is not
exceeded anywhere in the following ``patience`` epochs.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ConfigurationError, NumericalError, ParseError
from .images import psnr
from .jpeg import JpegConfig, cifs_uint8, to_uint8
from .model import DEFAULT_LATENT_DEPTH, DEFAULT_PERTURBATION, NetworkConfig, build_network, perturb_latent, sample_latent
from .tensor import Adam, Tensor, mse_loss

log = logging.getLogger(__name__)

TRACE_HEADER = ("epoch", "loss", "cifs_bytes", "regularizer", "criterion", "psnr")


def regularizer(size_bytes: int, height: int, width: int) -> float:
    """Squared compressed size per pixel, ``L**2 / (H*W)``."""
    if height < 1 or width < 1:
        raise ConfigurationError(f"image dims must be positive, got {height}x{width}")
    if size_bytes < 0:
        raise ConfigurationError("byte count must be non-negative")
    return size_bytes * size_bytes / (height * width)


def criterion(lam: float, loss: float, reg: float) -> float:
    return lam * loss + reg


@dataclass
class EsDetection:
    candidates: list
    t_star: int
    fallback: bool


def detect_es(metric: Sequence[float], patience: int) -> EsDetection:
    """Find every epoch whose value is the minimum of its next-``patience`` window.

    Epochs are 1-based. ``t`` is a candidate when ``t + patience <= T`` and
    ``metric[t] <= metric[tau]`` for all ``tau`` in ``[t, t + patience]``.
    The detected epoch is the smallest candidate, or ``T`` when there is none.
    """
    m = np.asarray(metric, dtype=np.float64)
    if m.ndim != 1:
        raise ConfigurationError("metric must be a 1-d sequence")
    total = m.size
    if patience < 1:
        raise ConfigurationError(f"patience must be >= 1, got {patience}")
    if total <= patience:
        raise ConfigurationError(f"need more than patience={patience} epochs, got {total}")
    if np.isnan(m).any():
        raise NumericalError("metric contains NaN")
    windows = np.lib.stride_tricks.sliding_window_view(m, patience + 1)
    hits = np.flatnonzero(m[: windows.shape[0]] <= windows.min(axis=1))
    candidates = (hits + 1).tolist()
    if candidates:
        return EsDetection(candidates, candidates[0], False)
    return EsDetection([], total, True)


@dataclass
class EsConfig:
    lam: float = 0.0
    epochs: int = 20000
    patience: int = 1000
    jpeg: JpegConfig = field(default_factory=JpegConfig)
    lr: float = 0.01
    seed: int = 0
    latent_depth: int = DEFAULT_LATENT_DEPTH
    sigma_p: float = DEFAULT_PERTURBATION
    cifs_stride: int = 1

    def __post_init__(self):
        if not self.lam >= 0 or math.isinf(self.lam):
            raise ConfigurationError(f"lambda must be finite and >= 0, got {self.lam}")
        if self.patience < 1:
            raise ConfigurationError("patience must be >= 1")
        if self.cifs_stride < 1:
            raise ConfigurationError("cifs_stride must be >= 1")
        if self.epochs < self.patience + 1:
            raise ConfigurationError(f"epochs ({self.epochs}) must be >= patience + 1 ({self.patience + 1})")
        if self.patience % self.cifs_stride or self.epochs % self.cifs_stride:
            raise ConfigurationError("epochs and patience must be multiples of cifs_stride")
        if (self.epochs // self.cifs_stride) <= self.patience // self.cifs_stride:
            raise ConfigurationError("too few evaluated epochs for the patience window")

    def as_dict(self) -> dict:
        return {
            "lambda": repr(float(self.lam)),
            "epochs": self.epochs,
            "patience": self.patience,
            "quality": self.jpeg.quality,
            "subsampling": self.jpeg.subsampling,
            "restart_interval": self.jpeg.restart_interval,
            "lr": repr(float(self.lr)),
            "seed": self.seed,
            "latent_depth": self.latent_depth,
            "sigma_p": repr(float(self.sigma_p)),
            "cifs_stride": self.cifs_stride,
        }


@dataclass
class EpochTrace:
    """Per-evaluated-epoch record of loss, JPEG size, regularizer and criterion."""

    height: int
    width: int
    lam: float
    epoch: list = field(default_factory=list)
    loss: list = field(default_factory=list)
    cifs_bytes: list = field(default_factory=list)
    regularizer: list = field(default_factory=list)
    criterion: list = field(default_factory=list)
    psnr: list = field(default_factory=list)

    def __len__(self):
        return len(self.epoch)

    def append(self, epoch: int, loss: float, size: int, psnr: Optional[float] = None):
        reg = regularizer(size, self.height, self.width)
        self.epoch.append(epoch)
        self.loss.append(loss)
        self.cifs_bytes.append(size)
        self.regularizer.append(reg)
        self.criterion.append(criterion(self.lam, loss, reg))
        self.psnr.append(psnr)

    def criterion_for(self, lam: float) -> np.ndarray:
        """Recompute E for another weight from the stored loss and sizes."""
        return np.array([
            criterion(lam, l, regularizer(s, self.height, self.width))
            for l, s in zip(self.loss, self.cifs_bytes)
        ])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TRACE_HEADER)
        for row in zip(self.epoch, self.loss, self.cifs_bytes, self.regularizer, self.criterion, self.psnr):
            e, l, s, r, c, p = row
            w.writerow([e, repr(float(l)), s, repr(float(r)), repr(float(c)), "" if p is None else repr(float(p))])
        return buf.getvalue()

    def save(self, path):
        Path(path).write_text(self.to_csv())

    @classmethod
    def from_csv(cls, text: str, height: int, width: int, lam: float = 0.0) -> "EpochTrace":
        """Parse a trace CSV; criterion and regularizer are recomputed for ``lam``."""
        trace = cls(height=height, width=width, lam=lam)
        reader = csv.reader(io.StringIO(text))
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("empty trace file", "line 1") from None
        if "loss" not in header or "cifs_bytes" not in header:
            raise ParseError("trace header must contain loss and cifs_bytes columns", "line 1")
        col = {name: i for i, name in enumerate(header)}
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                epoch = int(row[col["epoch"]]) if "epoch" in col else len(trace) + 1
                loss = float(row[col["loss"]])
                size = int(row[col["cifs_bytes"]])
                psnr = None
                if "psnr" in col and len(row) > col["psnr"] and row[col["psnr"]] != "":
                    psnr = float(row[col["psnr"]])
            except (ValueError, IndexError):
                raise ParseError(f"malformed trace row {row!r}", f"line {lineno}") from None
            if size < 0 or not math.isfinite(loss):
                raise ParseError(f"invalid values in trace row {row!r}", f"line {lineno}")
            trace.append(epoch, loss, size, psnr)
        if not len(trace):
            raise ParseError("trace has no data rows", "line 2")
        return trace

    @classmethod
    def load(cls, path, height: int, width: int, lam: float = 0.0) -> "EpochTrace":
        return cls.from_csv(Path(path).read_text(), height, width, lam)


@dataclass
class EsResult:
    candidates: list
    t_star: int
    fallback: bool
    image: np.ndarray = field(repr=False)
    final_image: np.ndarray = field(repr=False)
    psnr_at_tstar: Optional[float] = None
    psnr_no_es: Optional[float] = None
    psnr_peak: Optional[float] = None
    peak_epoch: Optional[int] = None

    def summary(self) -> dict:
        def fmt(v):
            return "" if v is None else repr(float(v))

        return {
            "t_star": self.t_star,
            "fallback": str(self.fallback).lower(),
            "candidates": " ".join(str(c) for c in self.candidates),
            "psnr_at_tstar": fmt(self.psnr_at_tstar),
            "psnr_no_es": fmt(self.psnr_no_es),
            "psnr_peak": fmt(self.psnr_peak),
        }

    def summary_text(self) -> str:
        return "".join(f"{k}={v}\n" for k, v in self.summary().items())


class NumericalFailure(NumericalError):
    def __init__(self, message, trace: EpochTrace):
        super().__init__(message)
        self.trace = trace


def run_dip_with_es(
    x0: np.ndarray,
    net_config: Optional[NetworkConfig],
    es_config: EsConfig,
    clean: Optional[np.ndarray] = None,
    progress: Optional[Callable[[int, EpochTrace], None]] = None,
) -> tuple[EpochTrace, EsResult]:
    """Fit the network to ``x0`` for ``epochs`` steps and pick the stopping epoch.

    ``x0`` (and ``clean``, if given) are C x H x W arrays in [0, 1]. With a
    clean image the trace also carries PSNR and the result reports the PSNR at
    the detected epoch, at the last epoch and the best over the run.
    """
    x0 = np.asarray(x0, dtype=np.float32)
    if x0.ndim != 3:
        raise ConfigurationError(f"expected a C x H x W image, got shape {x0.shape}")
    if not np.all(np.isfinite(x0)) or x0.min() < 0 or x0.max() > 1:
        raise ConfigurationError("noisy image values must lie in [0, 1]")
    channels, height, width = x0.shape
    if net_config is None:
        net_config = NetworkConfig(input_channels=es_config.latent_depth, output_channels=channels)
    if net_config.output_channels != channels:
        raise ConfigurationError(f"network outputs {net_config.output_channels} channels, image has {channels}")
    if net_config.input_channels != es_config.latent_depth:
        raise ConfigurationError("network input_channels must equal the latent depth")
    net_config.check_spatial(height, width)
    if clean is not None:
        clean = np.asarray(clean, dtype=np.float64)
        if clean.shape != x0.shape:
            raise ConfigurationError("clean image shape differs from the noisy image")

    seeds = np.random.SeedSequence(es_config.seed).spawn(3)
    net = build_network(net_config, seed=int(seeds[0].generate_state(1)[0]))
    latent = sample_latent(es_config.latent_depth, height, width,
                           seed=int(seeds[1].generate_state(1)[0]), sigma_p=es_config.sigma_p)
    jitter_rng = np.random.default_rng(seeds[2])
    opt = Adam(net.params, lr=es_config.lr)
    target = Tensor(x0[None])

    stride = es_config.cifs_stride
    window = es_config.patience // stride
    trace = EpochTrace(height=height, width=width, lam=es_config.lam)

    best_val = math.inf
    best_idx = -1
    snapshot = None
    confirmed = False
    peak = (-math.inf, 0)
    out_img = None

    for t in range(1, es_config.epochs + 1):
        out = net(perturb_latent(latent, jitter_rng))
        loss = mse_loss(out, target)
        loss_val = loss.item()
        if not math.isfinite(loss_val):
            raise NumericalFailure(f"non-finite loss at epoch {t}", trace)
        out_img = out.data[0].copy()
        loss.backward()
        opt.step()

        if t % stride:
            continue
        size = cifs_uint8(to_uint8(out_img), es_config.jpeg)
        p = psnr(clean, out_img) if clean is not None else None
        trace.append(t, loss_val, size, p)
        if p is not None and p > peak[0]:
            peak = (p, t)

        if not confirmed:
            idx = len(trace) - 1
            if trace.criterion[idx] < best_val:
                best_val, best_idx, snapshot = trace.criterion[idx], idx, out_img
            elif idx - best_idx >= window:
                # nothing lower within the window: best_idx is the earliest candidate
                confirmed = True
        if progress is not None:
            progress(t, trace)
        if t % 500 == 0:
            log.debug("epoch %d loss=%.6g cifs=%d E=%.6g", t, loss_val, size, trace.criterion[-1])

    det = detect_es(trace.criterion, window)
    if det.fallback:
        t_star = es_config.epochs
        image = out_img
        t_idx = len(trace) - 1
    else:
        t_idx = det.t_star - 1
        t_star = trace.epoch[t_idx]
        if not confirmed or t_idx != best_idx:
            raise AssertionError("online snapshot disagrees with offline detection")
        image = snapshot
    result = EsResult(
        candidates=[trace.epoch[i - 1] for i in det.candidates],
        t_star=t_star,
        fallback=det.fallback,
        image=image,
        final_image=out_img,
    )
    if clean is not None:
        result.psnr_at_tstar = trace.psnr[t_idx] if not det.fallback else psnr(clean, out_img)
        result.psnr_no_es = psnr(clean, out_img)
        result.psnr_peak = max(peak[0], result.psnr_no_es)
        result.peak_epoch = peak[1]
    return trace, result
