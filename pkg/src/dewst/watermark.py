"""Key-derived spread-spectrum watermarking with a repetition-code payload layer.

Each coded bit ``i`` owns a carrier ``c_i``: a zero-mean pseudorandom +/-1
field whose DFT energy is redistributed over the low/mid/high bands
according to the key's band profile and which satisfies ``||c_i||^2 = d``.
The embedded residual is ``gamma * s`` where ``s`` is the signed carrier sum
rescaled so that ``||s||^2 = d`` exactly.  That makes the embedding PSNR a
function of ``gamma`` alone: ``PSNR = -20 log10(gamma)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .spectral import BANDS, DEFAULT_PARTITION, BandPartition
from .tensors_io import check_image, check_same_shape, derive_stream

DEFAULT_PROFILE = (0.1, 0.5, 0.4)
DEFAULT_L = 96
DEFAULT_REPETITION = 3
BLIND_BOX = 5

_CARRIER_LANE = 0x5EED
_CHUNK = 32


@dataclass(frozen=True)
class WatermarkKey:
    seed: int
    band_profile: tuple[float, float, float] = DEFAULT_PROFILE

    def __post_init__(self):
        prof = tuple(float(v) for v in self.band_profile)
        if len(prof) != 3 or any(v < 0 for v in prof):
            raise ValueError(f"band profile must be three non-negative fractions, got {prof}")
        if abs(sum(prof) - 1.0) > 1e-12:
            raise ValueError(f"band profile must sum to 1, got {sum(prof)!r}")
        object.__setattr__(self, "band_profile", prof)


@dataclass(frozen=True, eq=False)
class CarrierBank:
    carriers: np.ndarray  # (L_enc, C, H, W)
    gram_offdiag_max: float
    key: WatermarkKey

    @property
    def n_carriers(self) -> int:
        return self.carriers.shape[0]

    @property
    def image_shape(self) -> tuple[int, int, int]:
        return self.carriers.shape[1:]

    @property
    def d(self) -> int:
        return int(np.prod(self.image_shape))

    @property
    def matrix(self) -> np.ndarray:
        return self.carriers.reshape(self.n_carriers, -1)


@dataclass(frozen=True, eq=False)
class CodedPayload:
    info_bits: np.ndarray
    coded_bits: np.ndarray
    r: int


# ---------------------------------------------------------------- payloads


def random_payload(L: int, rng) -> np.ndarray:
    return rng.bits(L)


def payload_to_hex(bits) -> str:
    """Pack bits MSB-first into hex, zero-padding the tail to a whole nibble."""
    bits = np.asarray(bits, dtype=np.uint8)
    pad = (-len(bits)) % 4
    padded = np.concatenate([bits, np.zeros(pad, dtype=np.uint8)])
    nibbles = padded.reshape(-1, 4) @ np.array([8, 4, 2, 1])
    return "".join(f"{v:x}" for v in nibbles)


def hex_to_payload(text: str, L: int) -> np.ndarray:
    text = text.strip().lower()
    if len(text) != math.ceil(L / 4):
        raise ValueError(f"hex payload of {len(text)} digits does not encode {L} bits")
    try:
        vals = [int(ch, 16) for ch in text]
    except ValueError as exc:
        raise ValueError(f"invalid hex payload {text!r}") from exc
    bits = np.array([[(v >> k) & 1 for k in (3, 2, 1, 0)] for v in vals], dtype=np.uint8).ravel()
    if np.any(bits[L:]):
        raise ValueError("hex payload has nonzero padding bits")
    return bits[:L]


# ---------------------------------------------------------------- carriers


def make_carriers(
    key: WatermarkKey,
    L_enc: int,
    h: int,
    w: int,
    c: int = 3,
    partition: BandPartition = DEFAULT_PARTITION,
) -> CarrierBank:
    """Build the carrier bank for ``key`` at image size ``(c, h, w)``.

    The +/-1 base fields depend only on ``key.seed`` and the shape, so two
    keys that differ only in band profile share the same underlying noise.
    """
    d = c * h * w
    if L_enc < 1 or L_enc > d // 16:
        raise ValueError(f"L_enc={L_enc} violates capacity guard 1 <= L_enc <= d/16 = {d // 16}")
    masks = [partition.masks(h, w)[b] for b in BANDS]
    for frac, band, m in zip(key.band_profile, BANDS, masks):
        nbins = m.sum() - (1 if band == "low" else 0)
        if frac > 0 and nbins <= 0:
            raise ValueError(f"band {band!r} holds no usable DFT bins at {h}x{w}")
    rng = derive_stream(key.seed, [_CARRIER_LANE, c, h, w])
    out = np.empty((L_enc, c, h, w))
    for start in range(0, L_enc, _CHUNK):
        n = min(_CHUNK, L_enc - start)
        signs = 2.0 * rng.bits(n * d).reshape(n, c, h, w) - 1.0
        spec = np.fft.fft2(signs, axes=(-2, -1), norm="ortho")
        spec[..., 0, 0] = 0.0
        shaped = np.zeros_like(spec)
        for frac, m in zip(key.band_profile, masks):
            if frac == 0:
                continue
            part = spec * m
            energy = np.sum(np.abs(part) ** 2, axis=(1, 2, 3), keepdims=True)
            shaped += part * np.sqrt(frac * d / energy)
        out[start:start + n] = np.fft.ifft2(shaped, axes=(-2, -1), norm="ortho").real
    mat = out.reshape(L_enc, d)
    gram = mat @ mat.T / d
    np.fill_diagonal(gram, 0.0)
    offdiag = float(np.max(np.abs(gram))) if L_enc > 1 else 0.0
    out.setflags(write=False)
    return CarrierBank(out, offdiag, key)


# ---------------------------------------------------------------- embedding


def watermark_signal(coded_bits, bank: CarrierBank) -> np.ndarray:
    """Unit-power signal ``s`` (``||s||^2 = d``) carrying ``coded_bits``."""
    bits = np.asarray(coded_bits)
    if bits.shape != (bank.n_carriers,):
        raise ValueError(f"expected {bank.n_carriers} coded bits, got shape {bits.shape}")
    signs = 2.0 * bits - 1.0
    v = signs @ bank.matrix
    norm = np.linalg.norm(v)
    if norm == 0:
        raise ValueError("carrier sum vanished; carriers are degenerate")
    return (v * (math.sqrt(bank.d) / norm)).reshape(bank.image_shape)


def embed(x: np.ndarray, coded: CodedPayload, bank: CarrierBank, gamma: float) -> np.ndarray:
    """Return ``x + gamma * s``; no clamping."""
    x = check_image(x)
    if x.shape != bank.image_shape:
        raise ValueError(f"image shape {x.shape} does not match carrier shape {bank.image_shape}")
    if gamma < 0:
        raise ValueError("gamma must be non-negative")
    return x + gamma * watermark_signal(coded.coded_bits, bank)


def gamma_for_psnr(psnr_db: float) -> float:
    """Embedding strength whose residual has PSNR ``psnr_db`` (unit dynamic range)."""
    return 10.0 ** (-psnr_db / 20.0)


# ---------------------------------------------------------------- decoding


def highpass(y: np.ndarray, size: int = BLIND_BOX) -> np.ndarray:
    """Blind pre-filter: subtract a ``size x size`` box blur from each plane."""
    return y - ndimage.uniform_filter(y, size=(1, size, size), mode="reflect")


def decode_soft(y: np.ndarray, bank: CarrierBank, x_ref: np.ndarray | None = None) -> np.ndarray:
    """Correlation scores ``<r, c_i> / d``.

    ``r = y - x_ref`` when a reference is supplied (informed decoding),
    otherwise ``r = highpass(y)`` (blind decoding).
    """
    y = np.asarray(y, dtype=np.float64)
    if y.shape != bank.image_shape:
        raise ValueError(f"image shape {y.shape} does not match carrier shape {bank.image_shape}")
    if x_ref is not None:
        x_ref = np.asarray(x_ref, dtype=np.float64)
        check_same_shape(y, x_ref)
        r = y - x_ref
    else:
        r = highpass(y)
    return bank.matrix @ r.ravel() / bank.d


def decode_bits(scores) -> np.ndarray:
    """Hard decisions: 1 iff score > 0, so an exact zero decodes to 0."""
    return (np.asarray(scores) > 0).astype(np.uint8)


def detect_score(y: np.ndarray, bank: CarrierBank, x_ref: np.ndarray | None = None) -> float:
    """Energy detector ``sum_i |score_i| * sqrt(d * L_enc)``."""
    scores = decode_soft(y, bank, x_ref)
    return float(np.sum(np.abs(scores)) * math.sqrt(bank.d * bank.n_carriers))


# ---------------------------------------------------------------- ECC


def ecc_encode(bits, r: int = DEFAULT_REPETITION) -> CodedPayload:
    """Repeat each bit ``r`` times in consecutive blocks."""
    if r < 1 or r % 2 == 0:
        raise ValueError(f"repetition factor must be odd and positive, got {r}")
    info = np.asarray(bits, dtype=np.uint8)
    if np.any(info > 1):
        raise ValueError("payload bits must be 0 or 1")
    return CodedPayload(info, np.repeat(info, r), r)


def ecc_decode(coded_bits, r: int = DEFAULT_REPETITION) -> tuple[np.ndarray, np.ndarray]:
    """Majority-vote each block; the margin is ``|#ones - #zeros|`` per block."""
    if r < 1 or r % 2 == 0:
        raise ValueError(f"repetition factor must be odd and positive, got {r}")
    coded = np.asarray(coded_bits, dtype=np.int64)
    if coded.size % r:
        raise ValueError(f"coded length {coded.size} not divisible by r={r}")
    ones = coded.reshape(-1, r).sum(axis=1)
    bits = (2 * ones > r).astype(np.uint8)
    return bits, np.abs(2 * ones - r)
