"""Latent/prior producers.

The built-in backend is an orthonormal 8x8 DCT-II applied per image channel:
an image of ``ch`` channels and size ``h x w`` becomes a ``(64 * ch, ceil(h/8),
ceil(w/8))`` latent tensor whose channel ``ch_i * 64 + 8 * u + v`` holds
frequency band ``(u, v)`` of image channel ``ch_i``.  Priors are zero-mean
with one sigma per band.

The import backend reads latents and priors produced elsewhere (e.g. by a
trained hyperprior model) from a small binary format.
"""

from dataclasses import dataclass
import math
import struct

import numpy as np

from .errors import InvalidArgument, ParseError
from .gaussian import exp_nonpositive

BLOCK = 8
BANDS = BLOCK * BLOCK

SIGMA_MIN_LOG2 = -6
SIGMA_MAX_LOG2 = 12
SIGMA_LEVELS = 256
_SIGMA_STEP = (SIGMA_MAX_LOG2 - SIGMA_MIN_LOG2) / (SIGMA_LEVELS - 1)

IMPORT_MAGIC = b"PLQL"
IMPORT_VERSION = 1
_LN2 = 0.6931471805599453


@dataclass
class ImageBuffer:
    """8-bit image, samples shaped ``(height, width, channels)``."""

    samples: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.samples)
        if s.ndim == 2:
            s = s[:, :, None]
        if s.ndim != 3 or s.shape[2] not in (1, 3):
            raise InvalidArgument(f"expected a 1- or 3-channel image, got shape {s.shape}")
        if s.shape[0] < BLOCK or s.shape[1] < BLOCK:
            raise InvalidArgument(f"image must be at least {BLOCK}x{BLOCK}, got {s.shape[1]}x{s.shape[0]}")
        if s.dtype != np.uint8:
            if np.any(s < 0) or np.any(s > 255):
                raise InvalidArgument("samples outside the 8-bit range")
            s = s.astype(np.uint8)
        self.samples = s

    @property
    def height(self):
        return self.samples.shape[0]

    @property
    def width(self):
        return self.samples.shape[1]

    @property
    def channels(self):
        return self.samples.shape[2]


@dataclass
class PriorTensor:
    """Per-element prior means and 8-bit log-domain sigma codes."""

    mu: np.ndarray
    sigma_code: np.ndarray
    per_channel: bool = False

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=np.float64)
        self.sigma_code = np.asarray(self.sigma_code, dtype=np.uint8)
        if self.mu.ndim != 3 or self.mu.shape != self.sigma_code.shape:
            raise InvalidArgument("mu and sigma codes must share one (C, H, W) shape")
        if not np.all(np.isfinite(self.mu)):
            raise InvalidArgument("non-finite prior mean")

    @property
    def shape(self):
        return self.mu.shape

    @property
    def sigma(self):
        return dequantize_sigma(self.sigma_code)


def dct_matrix(n=BLOCK):
    k = np.arange(n)[:, None]
    x = np.arange(n)[None, :]
    m = np.cos(np.pi * (2 * x + 1) * k / (2 * n)) * math.sqrt(2.0 / n)
    m[0] /= math.sqrt(2.0)
    return m


_D = dct_matrix()


def latent_shape(width, height, channels):
    return (BANDS * channels, -(-height // BLOCK), -(-width // BLOCK))


def forward(img):
    """Blockwise orthonormal DCT of an image (edge-replicated to block multiples)."""
    c, hb, wb = latent_shape(img.width, img.height, img.channels)
    x = img.samples.astype(np.float64)
    x = np.pad(x, ((0, hb * BLOCK - img.height), (0, wb * BLOCK - img.width), (0, 0)), mode="edge")
    return _blocks_forward(x)


def _blocks_forward(x):
    hp, wp, ch = x.shape
    hb, wb = hp // BLOCK, wp // BLOCK
    blocks = x.reshape(hb, BLOCK, wb, BLOCK, ch)
    coef = np.einsum("ui,aibjc,vj->cuvab", _D, blocks, _D)
    return coef.reshape(ch * BANDS, hb, wb)


def inverse_samples(latents, width, height, channels):
    """Exact inverse transform: real-valued samples, cropped, no clamping."""
    latents = np.asarray(latents, dtype=np.float64)
    c, hb, wb = latents.shape
    if c != BANDS * channels:
        raise InvalidArgument(f"{c} latent channels do not match {channels} image channels")
    coef = latents.reshape(channels, BLOCK, BLOCK, hb, wb)
    blocks = np.einsum("ui,cuvab,vj->aibjc", _D, coef, _D)
    x = blocks.reshape(hb * BLOCK, wb * BLOCK, channels)
    return x[:height, :width]


def inverse(latents, width, height, channels):
    x = inverse_samples(latents, width, height, channels)
    return ImageBuffer(np.clip(np.floor(x + 0.5), 0, 255).astype(np.uint8))


def quantize_sigma(sigma):
    """8-bit codes on a log2 grid over ``[2**SIGMA_MIN_LOG2, 2**SIGMA_MAX_LOG2]`` (clamping outside)."""
    sigma = np.asarray(sigma, dtype=np.float64)
    if np.any(~np.isfinite(sigma)) or np.any(sigma < 0):
        raise InvalidArgument("sigma must be finite and non-negative")
    with np.errstate(divide="ignore"):
        e = np.log2(np.clip(sigma, 2.0**SIGMA_MIN_LOG2, 2.0**SIGMA_MAX_LOG2))
    code = np.floor((e - SIGMA_MIN_LOG2) / _SIGMA_STEP + 0.5)
    return np.clip(code, 0, SIGMA_LEVELS - 1).astype(np.uint8)


def _sigma_table():
    # 2**e split as 2**floor(e) * exp(ln2 * (frac - 1)) * 2, using the
    # deterministic exponential so every platform builds the same table
    e = SIGMA_MIN_LOG2 + np.arange(SIGMA_LEVELS) * _SIGMA_STEP
    whole = np.floor(e)
    frac = e - whole
    return np.ldexp(exp_nonpositive(_LN2 * (frac - 1.0)) * 2.0, whole.astype(np.int64))


SIGMA_TABLE = _sigma_table()


def dequantize_sigma(code):
    return SIGMA_TABLE[np.asarray(code, dtype=np.uint8)]


def estimate_priors(latents):
    """Zero-mean priors with one sigma per channel: the channel's RMS value."""
    latents = np.asarray(latents, dtype=np.float64)
    c = latents.shape[0]
    rms = np.sqrt(np.mean(latents.reshape(c, -1) ** 2, axis=1))
    codes = quantize_sigma(rms)
    return PriorTensor(
        mu=np.zeros(latents.shape),
        sigma_code=np.broadcast_to(codes[:, None, None], latents.shape).copy(),
        per_channel=True,
    )


def export_latents(latents, priors):
    latents = np.asarray(latents, dtype=np.float64)
    if latents.shape != priors.shape:
        raise InvalidArgument("latent and prior shapes differ")
    c, h, w = latents.shape
    return b"".join([
        IMPORT_MAGIC,
        struct.pack("<BIII", IMPORT_VERSION, c, h, w),
        latents.astype("<f4").tobytes(),
        priors.mu.astype("<f4").tobytes(),
        priors.sigma_code.astype(np.uint8).tobytes(),
    ])


def import_latents(blob):
    """Parse the import format into float64 latents and a :class:`PriorTensor`."""
    blob = bytes(blob)
    if len(blob) < 17:
        raise ParseError("import blob too short for its header", len(blob))
    if blob[:4] != IMPORT_MAGIC:
        raise ParseError(f"bad magic {blob[:4]!r}", 0)
    version, c, h, w = struct.unpack_from("<BIII", blob, 4)
    if version != IMPORT_VERSION:
        raise ParseError(f"unsupported import version {version}", 4)
    if min(c, h, w) == 0:
        raise ParseError("zero-sized latent tensor", 5)
    n = c * h * w
    expected = 17 + 9 * n
    if len(blob) != expected:
        raise ParseError(f"shape {c}x{h}x{w} needs {expected} bytes, blob has {len(blob)}", min(len(blob), expected))
    off = 17
    y = np.frombuffer(blob, dtype="<f4", count=n, offset=off)
    mu = np.frombuffer(blob, dtype="<f4", count=n, offset=off + 4 * n)
    codes = np.frombuffer(blob, dtype=np.uint8, count=n, offset=off + 8 * n)
    for arr, base in ((y, off), (mu, off + 4 * n)):
        bad = np.flatnonzero(~np.isfinite(arr))
        if bad.size:
            raise ParseError("non-finite value", base + 4 * int(bad[0]))
    shape = (c, h, w)
    priors = PriorTensor(mu.astype(np.float64).reshape(shape), codes.reshape(shape).copy())
    return y.astype(np.float64).reshape(shape), priors


def read_image(path):
    from PIL import Image

    with Image.open(path) as im:
        if im.mode not in ("L", "RGB"):
            im = im.convert("RGB" if im.mode in ("RGBA", "P", "CMYK", "YCbCr") else "L")
        return ImageBuffer(np.asarray(im, dtype=np.uint8))


def write_image(path, img, format=None):
    from PIL import Image

    s = img.samples
    data = s[:, :, 0] if img.channels == 1 else s
    Image.fromarray(data).save(path, format=format)
