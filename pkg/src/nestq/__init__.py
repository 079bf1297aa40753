"""Embedded (progressive) coding of Gaussian-prior latents by nested quantization."""

from .backend import ImageBuffer, PriorTensor, estimate_priors, forward, inverse, read_image, write_image
from .container import (
    DecodeResult,
    Header,
    decode,
    encode,
    encode_image,
    naive_scaling_encode,
    read_header,
    reconstruct_image,
    truncate,
)
from .errors import ContractViolation, InvalidArgument, ParseError, TruncatedHeader, UnsupportedOperation
from .gaussian import FixedProb, GaussianParam, Interval, conditional_prob, interval_prob
from .metrics import RDCurve, RDPoint, bd_rate, psnr, rd_curve
from .ordering import Ordering
from .quantizer import BinId, QuantSchedule

__version__ = "0.1.0"
