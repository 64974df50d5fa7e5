"""Deep image prior denoising stopped by a JPEG-size criterion."""

__version__ = "0.1.0"

from .errors import CifsDipError, ConfigurationError, InputError, NumericalError, ParseError, StateError
from .tensor import Adam, ParamSet, Tensor
from .model import NetworkConfig, SkipNetwork, build_network, sample_latent
from .jpeg import JpegConfig, cifs, encode, quality_scale_tables
from .es import EpochTrace, EsConfig, EsResult, criterion, detect_es, regularizer, run_dip_with_es
from .images import NoiseSpec, add_gaussian_noise, load_image, psnr, save_image, synthetic_image, synthetic_suite
from .calibration import LambdaTable, calibrate, default_grid, lambda_for_sigma
from .bench import BenchmarkReport, run_benchmark

__all__ = [
    "Adam", "BenchmarkReport", "CifsDipError", "ConfigurationError", "EpochTrace", "EsConfig", "EsResult",
    "InputError", "JpegConfig", "LambdaTable", "NetworkConfig", "NoiseSpec", "NumericalError", "ParamSet",
    "ParseError", "SkipNetwork", "StateError", "Tensor", "add_gaussian_noise", "build_network", "calibrate",
    "cifs", "criterion", "default_grid", "detect_es", "encode", "lambda_for_sigma", "load_image", "psnr",
    "quality_scale_tables", "regularizer", "run_benchmark", "run_dip_with_es", "sample_latent", "save_image",
    "synthetic_image", "synthetic_suite",
]
