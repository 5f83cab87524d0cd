"""Image tensors, seeded random streams, synthetic images and file I/O.

Images are plain ``numpy`` arrays of shape ``(C, H, W)`` (channel-planar)
holding float64 values with nominal range [0, 1].  Nothing in the analysis
path clamps; clamping happens only when exporting to 8/16-bit PNG.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import png

RAW_MAGIC = b"DWS1"
_RAW_HEADER = struct.Struct("<III")

SYNTH_KINDS = ("gaussian_field", "flat", "checker", "multiscale_texture")


class ImageFormatError(ValueError):
    """Raised for unreadable, truncated or inconsistent image files."""


def check_image(img: np.ndarray, name: str = "image") -> np.ndarray:
    """Validate the ``(C, H, W)`` layout and finiteness; return a float64 view."""
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[0] not in (1, 3):
        raise ValueError(f"{name} must have shape (C, H, W) with C in (1, 3), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def check_same_shape(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")


# --------------------------------------------------------------------------
# random streams


@dataclass
class RngStream:
    """A reproducible random stream derived from ``(master_seed, lanes)``.

    Backed by numpy's PCG64 seeded through ``SeedSequence(master_seed,
    spawn_key=lanes)``.  Normal variates use numpy's ziggurat sampler
    (``Generator.standard_normal``).  Streams are deterministic within this
    implementation; bit-compatibility with other implementations is not a goal.
    """

    master_seed: int
    lanes: tuple[int, ...]
    generator: np.random.Generator = field(repr=False)

    algorithm_id = "numpy.PCG64/SeedSequence+ziggurat-normal"

    def normal(self, size=None) -> np.ndarray:
        return self.generator.standard_normal(size)

    def uniform(self, size=None) -> np.ndarray:
        return self.generator.random(size)

    def integers(self, low, high=None, size=None) -> np.ndarray:
        return self.generator.integers(low, high, size=size)

    def bits(self, n: int) -> np.ndarray:
        return self.generator.integers(0, 2, size=n).astype(np.uint8)

    def child(self, *lanes: int) -> "RngStream":
        """Derive an independent stream by appending lanes to this one's provenance."""
        return derive_stream(self.master_seed, (*self.lanes, *lanes))


def derive_stream(master_seed: int, lanes: Sequence[int] = ()) -> RngStream:
    """Derive a stream from a 64-bit master seed and up to 8 lane indices."""
    lanes = tuple(int(v) for v in lanes)
    if len(lanes) > 8:
        raise ValueError(f"at most 8 lanes allowed, got {len(lanes)}")
    if any(v < 0 for v in lanes):
        raise ValueError("lane indices must be non-negative")
    seed = int(master_seed) & 0xFFFFFFFFFFFFFFFF
    ss = np.random.SeedSequence(seed, spawn_key=lanes)
    return RngStream(seed, lanes, np.random.Generator(np.random.PCG64(ss)))


# --------------------------------------------------------------------------
# synthetic images


def _radial_freq(h: int, w: int) -> np.ndarray:
    return np.hypot(np.fft.fftfreq(h)[:, None], np.fft.fftfreq(w)[None, :])


def _power_law_field(shape: tuple[int, int, int], exponent: float, rng: RngStream) -> np.ndarray:
    c, h, w = shape
    fr = _radial_freq(h, w)
    # Amplitude ~ f^(-exponent/2) so power ~ f^(-exponent); DC dropped.
    amp = np.maximum(fr, 1.0 / max(h, w)) ** (-exponent / 2.0)
    amp[0, 0] = 0.0
    spec = np.fft.fft2(rng.normal((c, h, w))) * amp
    f = np.fft.ifft2(spec).real
    f -= f.mean(axis=(1, 2), keepdims=True)
    f /= f.std(axis=(1, 2), keepdims=True)
    return f


def synth_image(
    kind: str,
    h: int,
    w: int,
    rng: RngStream,
    channels: int = 3,
    exponent: float = 5.0,
    contrast: float = 0.15,
) -> np.ndarray:
    """Generate a synthetic test image of shape ``(channels, h, w)``.

    Parameters
    ----------
    kind : {"gaussian_field", "flat", "checker", "multiscale_texture"}
        ``gaussian_field`` is a Gaussian random field with power spectrum
        ``~ f**(-exponent)``; every radial band carries energy.
        ``checker`` alternates 0/1 blocks of side ``max(1, min(h, w) // 8)``.
    exponent : float
        Spectral slope of ``gaussian_field``.  Larger values give smoother
        images.
    contrast : float
        Standard deviation around the 0.5 mean for the random kinds.
    """
    if h < 8 or w < 8:
        raise ValueError(f"image dimensions must be >= 8, got {h}x{w}")
    if channels not in (1, 3):
        raise ValueError("channels must be 1 or 3")
    shape = (channels, h, w)
    if kind == "flat":
        return np.full(shape, 0.5)
    if kind == "checker":
        block = max(1, min(h, w) // 8)
        yy, xx = np.indices((h, w))
        pattern = ((yy // block + xx // block) % 2).astype(np.float64)
        return np.broadcast_to(pattern, shape).copy()
    if kind == "gaussian_field":
        lum = _power_law_field((1, h, w), exponent, rng)
        if channels == 1:
            field_ = lum
        else:
            chroma = _power_law_field(shape, exponent, rng)
            field_ = 0.8 * lum + 0.6 * chroma
        offset = 0.05 * (2.0 * rng.uniform((channels, 1, 1)) - 1.0)
        return 0.5 + offset + contrast * field_
    if kind == "multiscale_texture":
        yy, xx = np.indices((h, w), dtype=np.float64)
        out = np.zeros(shape)
        freq = 2.0 / max(h, w)
        octave = 0
        while freq < 0.45:
            for ch in range(channels):
                for _ in range(3):
                    theta = 2 * np.pi * rng.uniform()
                    phase = 2 * np.pi * rng.uniform()
                    arg = 2 * np.pi * freq * (np.cos(theta) * xx + np.sin(theta) * yy) + phase
                    out[ch] += 2.0 ** (-0.5 * octave) * np.cos(arg)
            freq *= 2.0
            octave += 1
        out -= out.mean(axis=(1, 2), keepdims=True)
        out /= out.std(axis=(1, 2), keepdims=True)
        return 0.5 + contrast * out
    raise ValueError(f"unknown synthetic image kind {kind!r}; expected one of {SYNTH_KINDS}")


# --------------------------------------------------------------------------
# file I/O


def save_image(img: np.ndarray, path, bit_depth: int = 8) -> None:
    """Write ``img`` as raw DWS1 (``.dws``/``.raw``) or PNG (``.png``).

    PNG export clips to [0, 1] and quantizes with round-half-to-even, so
    0.5 becomes 128/255 at 8 bits and 32768/65535 at 16 bits.  Raw export
    stores float32, so the round trip is exact for float32-representable
    values.
    """
    img = check_image(img)
    path = Path(path)
    if path.suffix.lower() == ".png":
        if bit_depth not in (8, 16):
            raise ImageFormatError(f"unsupported PNG bit depth {bit_depth}")
        c, h, w = img.shape
        scale = 255 if bit_depth == 8 else 65535
        dtype = np.uint8 if bit_depth == 8 else np.uint16
        q = np.rint(np.clip(img, 0.0, 1.0) * scale).astype(dtype)
        rows = q.transpose(1, 2, 0).reshape(h, w * c)
        mode = ("L" if c == 1 else "RGB") + f";{bit_depth}"
        png.from_array(rows, mode).save(str(path))
        return
    c, h, w = img.shape
    payload = img.astype("<f4").tobytes(order="C")
    with open(path, "wb") as fh:
        fh.write(RAW_MAGIC)
        fh.write(_RAW_HEADER.pack(h, w, c))
        fh.write(payload)


def _load_raw(blob: bytes) -> np.ndarray:
    if len(blob) < 4 + _RAW_HEADER.size:
        raise ImageFormatError("raw image truncated before header end")
    h, w, c = _RAW_HEADER.unpack_from(blob, 4)
    if c not in (1, 3) or h == 0 or w == 0:
        raise ImageFormatError(f"invalid raw header dims {h}x{w}x{c}")
    body = blob[4 + _RAW_HEADER.size:]
    expected = 4 * h * w * c
    if len(body) != expected:
        raise ImageFormatError(
            f"raw payload is {len(body)} bytes, header {h}x{w}x{c} needs {expected}"
        )
    data = np.frombuffer(body, dtype="<f4").astype(np.float64).reshape(c, h, w)
    if not np.all(np.isfinite(data)):
        raise ImageFormatError("raw image contains non-finite values")
    return data


def _load_png(path: Path) -> np.ndarray:
    try:
        w, h, rows, info = png.Reader(filename=str(path)).asDirect()
        arr = np.vstack([np.asarray(r, dtype=np.uint32) for r in rows])
    except (png.Error, OSError, ValueError) as exc:
        raise ImageFormatError(f"cannot read PNG {path}: {exc}") from exc
    depth = info["bitdepth"]
    if depth not in (8, 16):
        raise ImageFormatError(f"unsupported PNG bit depth {depth}")
    planes = info["planes"]
    if arr.shape != (h, w * planes):
        raise ImageFormatError(f"PNG data shape {arr.shape} does not match header {h}x{w}x{planes}")
    arr = arr.reshape(h, w, planes)
    if planes in (2, 4):  # drop alpha
        arr = arr[..., :-1]
    return arr.transpose(2, 0, 1).astype(np.float64) / float(2**depth - 1)


def load_image(path) -> np.ndarray:
    """Load a PNG or raw DWS1 image as a ``(C, H, W)`` float64 array."""
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            head = fh.read(8)
    except OSError as exc:
        raise ImageFormatError(f"cannot open {path}: {exc}") from exc
    if head.startswith(RAW_MAGIC):
        return _load_raw(path.read_bytes())
    if head.startswith(b"\x89PNG"):
        return _load_png(path)
    raise ImageFormatError(f"{path}: unrecognized image format")
