"""Tardos fingerprinting: code generation, collusion simulation, channel
inference and iterative side-informed joint decoding."""
from .codegen import CodeMatrix, CodeParams, SecretVector, generate
from .collusion import CollusionChannel, PiratedTrace, SoftChannel, forge, forge_soft, named_channel
from .decoder import AccusationReport, DecoderParams, detect, detect_soft
from .errors import ConvergenceError, FormatError, ParameterError, SecretMissingError, TracekitError
from .kernels import IMPLEMENTATION

__version__ = "0.1.0"

__all__ = [
    "AccusationReport", "CodeMatrix", "CodeParams", "CollusionChannel", "ConvergenceError",
    "DecoderParams", "FormatError", "IMPLEMENTATION", "ParameterError", "PiratedTrace",
    "SecretMissingError", "SecretVector", "SoftChannel", "TracekitError", "detect", "detect_soft",
    "forge", "forge_soft", "generate", "named_channel",
]
