"""Baseline sequential JPEG encoder used as a file-size probe.

The encoder is deterministic and follows ITU-T T.81 baseline coding with the
example (Annex K) quantization and Huffman tables, scaled by the IJG quality
law.  Entropy coding is vectorised with numpy: run/size tokens for all blocks
are generated at once, ordered by a sort key and packed into a bit array.

    >>> img = np.full((3, 16, 16), 0.5)
    >>> data = encode(img, JpegConfig(quality=95))
    >>> data[:2], data[-2:]
    (b'\\xff\\xd8', b'\\xff\\xd9')
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import ConfigurationError, InputError

# Annex K.1, natural (row-major) order
LUMA_BASE = np.array([
    [16, 11, 10, 16, 24, 40, 51, 61],
    [12, 12, 14, 19, 26, 58, 60, 55],
    [14, 13, 16, 24, 40, 57, 69, 56],
    [14, 17, 22, 29, 51, 87, 80, 62],
    [18, 22, 37, 56, 68, 109, 103, 77],
    [24, 35, 55, 64, 81, 104, 113, 92],
    [49, 64, 78, 87, 103, 121, 120, 101],
    [72, 92, 95, 98, 112, 100, 103, 99],
], dtype=np.int64)

CHROMA_BASE = np.array([
    [17, 18, 24, 47, 99, 99, 99, 99],
    [18, 21, 26, 66, 99, 99, 99, 99],
    [24, 26, 56, 99, 99, 99, 99, 99],
    [47, 66, 99, 99, 99, 99, 99, 99],
    [99, 99, 99, 99, 99, 99, 99, 99],
    [99, 99, 99, 99, 99, 99, 99, 99],
    [99, 99, 99, 99, 99, 99, 99, 99],
    [99, 99, 99, 99, 99, 99, 99, 99],
], dtype=np.int64)

# Annex K.3: (code counts per length 1..16, symbol values)
DC_LUMA = (
    (0, 1, 5, 1, 1, 1, 1, 1, 1, 0, 0, 0, 0, 0, 0, 0),
    tuple(range(12)),
)
DC_CHROMA = (
    (0, 3, 1, 1, 1, 1, 1, 1, 1, 1, 1, 0, 0, 0, 0, 0),
    tuple(range(12)),
)
AC_LUMA = (
    (0, 2, 1, 3, 3, 2, 4, 3, 5, 5, 4, 4, 0, 0, 1, 0x7D),
    (
        0x01, 0x02, 0x03, 0x00, 0x04, 0x11, 0x05, 0x12, 0x21, 0x31, 0x41, 0x06, 0x13, 0x51, 0x61, 0x07,
        0x22, 0x71, 0x14, 0x32, 0x81, 0x91, 0xA1, 0x08, 0x23, 0x42, 0xB1, 0xC1, 0x15, 0x52, 0xD1, 0xF0,
        0x24, 0x33, 0x62, 0x72, 0x82, 0x09, 0x0A, 0x16, 0x17, 0x18, 0x19, 0x1A, 0x25, 0x26, 0x27, 0x28,
        0x29, 0x2A, 0x34, 0x35, 0x36, 0x37, 0x38, 0x39, 0x3A, 0x43, 0x44, 0x45, 0x46, 0x47, 0x48, 0x49,
        0x4A, 0x53, 0x54, 0x55, 0x56, 0x57, 0x58, 0x59, 0x5A, 0x63, 0x64, 0x65, 0x66, 0x67, 0x68, 0x69,
        0x6A, 0x73, 0x74, 0x75, 0x76, 0x77, 0x78, 0x79, 0x7A, 0x83, 0x84, 0x85, 0x86, 0x87, 0x88, 0x89,
        0x8A, 0x92, 0x93, 0x94, 0x95, 0x96, 0x97, 0x98, 0x99, 0x9A, 0xA2, 0xA3, 0xA4, 0xA5, 0xA6, 0xA7,
        0xA8, 0xA9, 0xAA, 0xB2, 0xB3, 0xB4, 0xB5, 0xB6, 0xB7, 0xB8, 0xB9, 0xBA, 0xC2, 0xC3, 0xC4, 0xC5,
        0xC6, 0xC7, 0xC8, 0xC9, 0xCA, 0xD2, 0xD3, 0xD4, 0xD5, 0xD6, 0xD7, 0xD8, 0xD9, 0xDA, 0xE1, 0xE2,
        0xE3, 0xE4, 0xE5, 0xE6, 0xE7, 0xE8, 0xE9, 0xEA, 0xF1, 0xF2, 0xF3, 0xF4, 0xF5, 0xF6, 0xF7, 0xF8,
        0xF9, 0xFA,
    ),
)
AC_CHROMA = (
    (0, 2, 1, 2, 4, 4, 3, 4, 7, 5, 4, 4, 0, 1, 2, 0x77),
    (
        0x00, 0x01, 0x02, 0x03, 0x11, 0x04, 0x05, 0x21, 0x31, 0x06, 0x12, 0x41, 0x51, 0x07, 0x61, 0x71,
        0x13, 0x22, 0x32, 0x81, 0x08, 0x14, 0x42, 0x91, 0xA1, 0xB1, 0xC1, 0x09, 0x23, 0x33, 0x52, 0xF0,
        0x15, 0x62, 0x72, 0xD1, 0x0A, 0x16, 0x24, 0x34, 0xE1, 0x25, 0xF1, 0x17, 0x18, 0x19, 0x1A, 0x26,
        0x27, 0x28, 0x29, 0x2A, 0x35, 0x36, 0x37, 0x38, 0x39, 0x3A, 0x43, 0x44, 0x45, 0x46, 0x47, 0x48,
        0x49, 0x4A, 0x53, 0x54, 0x55, 0x56, 0x57, 0x58, 0x59, 0x5A, 0x63, 0x64, 0x65, 0x66, 0x67, 0x68,
        0x69, 0x6A, 0x73, 0x74, 0x75, 0x76, 0x77, 0x78, 0x79, 0x7A, 0x82, 0x83, 0x84, 0x85, 0x86, 0x87,
        0x88, 0x89, 0x8A, 0x92, 0x93, 0x94, 0x95, 0x96, 0x97, 0x98, 0x99, 0x9A, 0xA2, 0xA3, 0xA4, 0xA5,
        0xA6, 0xA7, 0xA8, 0xA9, 0xAA, 0xB2, 0xB3, 0xB4, 0xB5, 0xB6, 0xB7, 0xB8, 0xB9, 0xBA, 0xC2, 0xC3,
        0xC4, 0xC5, 0xC6, 0xC7, 0xC8, 0xC9, 0xCA, 0xD2, 0xD3, 0xD4, 0xD5, 0xD6, 0xD7, 0xD8, 0xD9, 0xDA,
        0xE2, 0xE3, 0xE4, 0xE5, 0xE6, 0xE7, 0xE8, 0xE9, 0xEA, 0xF2, 0xF3, 0xF4, 0xF5, 0xF6, 0xF7, 0xF8,
        0xF9, 0xFA,
    ),
)


def _zigzag_order() -> np.ndarray:
    order = sorted(
        ((r, c) for r in range(8) for c in range(8)),
        key=lambda rc: (rc[0] + rc[1], rc[1] if (rc[0] + rc[1]) % 2 == 0 else rc[0]),
    )
    return np.array([r * 8 + c for r, c in order], dtype=np.intp)


ZIGZAG = _zigzag_order()  # ZIGZAG[i] = natural index of the i-th zigzag coefficient

SUBSAMPLING_MODES = ("4:2:0", "4:4:4")


@dataclass(frozen=True)
class QuantTables:
    luma: np.ndarray = field(repr=False)
    chroma: np.ndarray = field(repr=False)


@dataclass(frozen=True)
class JpegConfig:
    quality: int = 95
    subsampling: str = "4:2:0"
    restart_interval: int = 0

    def __post_init__(self):
        if not isinstance(self.quality, (int, np.integer)) or not 1 <= self.quality <= 100:
            raise ConfigurationError(f"JPEG quality must be an integer in [1, 100], got {self.quality!r}")
        if self.subsampling not in SUBSAMPLING_MODES:
            raise ConfigurationError(f"subsampling must be one of {SUBSAMPLING_MODES}, got {self.subsampling!r}")
        if not 0 <= self.restart_interval <= 0xFFFF:
            raise ConfigurationError("restart_interval must lie in [0, 65535]")

    @property
    def tables(self) -> QuantTables:
        return quality_scale_tables(self.quality)


@lru_cache(maxsize=None)
def quality_scale_tables(quality: int) -> QuantTables:
    """IJG quality scaling of the Annex K base tables."""
    if not 1 <= quality <= 100:
        raise ConfigurationError(f"JPEG quality must be in [1, 100], got {quality}")
    scale = 5000 // quality if quality < 50 else 200 - 2 * quality

    def scaled(base):
        t = np.clip((base * scale + 50) // 100, 1, 255)
        t.flags.writeable = False
        return t

    return QuantTables(luma=scaled(LUMA_BASE), chroma=scaled(CHROMA_BASE))


@lru_cache(maxsize=1)
def dct_matrix() -> np.ndarray:
    k = np.arange(8)
    m = np.cos((2 * k[None, :] + 1) * k[:, None] * np.pi / 16) * 0.5
    m[0] = np.sqrt(1 / 8)
    m.flags.writeable = False
    return m


def fdct_8x8(block) -> np.ndarray:
    """2-D DCT-II of one level-shifted 8x8 block with JPEG scaling (DC = 8 * mean)."""
    block = np.asarray(block, dtype=np.float64)
    if block.shape != (8, 8):
        raise InputError(f"fdct_8x8 needs an 8x8 block, got {block.shape}")
    d = dct_matrix()
    return d @ block @ d.T


def fdct_blocks(blocks: np.ndarray) -> np.ndarray:
    d = dct_matrix()
    return np.matmul(np.matmul(d, blocks), d.T)


def round_half_away(v: np.ndarray) -> np.ndarray:
    return np.sign(v) * np.floor(np.abs(v) + 0.5)


def to_uint8(image: np.ndarray) -> np.ndarray:
    """Map [0,1] floats to 8-bit: scale by 255, round half away from zero, clamp."""
    v = np.asarray(image, dtype=np.float64) * 255.0
    if not np.all(np.isfinite(v)):
        raise InputError("image contains non-finite values")
    return np.clip(round_half_away(v), 0, 255).astype(np.uint8)


def rgb_to_ycbcr(rgb: np.ndarray) -> np.ndarray:
    """JFIF (BT.601 full range) conversion of a 3xHxW uint8 array, rounded to integers."""
    r, g, b = (c.astype(np.float64) for c in rgb)
    y = 0.299 * r + 0.587 * g + 0.114 * b
    cb = -0.168736 * r - 0.331264 * g + 0.5 * b + 128.0
    cr = 0.5 * r - 0.418688 * g - 0.081312 * b + 128.0
    return np.clip(round_half_away(np.stack([y, cb, cr])), 0, 255)


@lru_cache(maxsize=None)
def _huffman_lookup(spec) -> tuple[np.ndarray, np.ndarray]:
    """Canonical code assignment (T.81 Annex C) -> (code, length) indexed by symbol."""
    counts, symbols = spec
    codes = np.zeros(256, dtype=np.int64)
    lengths = np.zeros(256, dtype=np.int64)
    code = 0
    k = 0
    for length, n in enumerate(counts, start=1):
        for _ in range(n):
            codes[symbols[k]] = code
            lengths[symbols[k]] = length
            code += 1
            k += 1
        code <<= 1
    return codes, lengths


def _size_category(v: np.ndarray) -> np.ndarray:
    return np.frexp(np.abs(v).astype(np.float64))[1].astype(np.int64)


def _amplitude_bits(v: np.ndarray, size: np.ndarray) -> np.ndarray:
    return np.where(v < 0, v + (np.int64(1) << size) - 1, v)


def _pack_bits(values: np.ndarray, lengths: np.ndarray) -> bytes:
    """Concatenate MSB-first bit fields, pad with 1-bits, apply 0xFF byte stuffing."""
    keep = lengths > 0
    values, lengths = values[keep], lengths[keep]
    total = int(lengths.sum())
    starts = np.cumsum(lengths) - lengths
    rep_len = np.repeat(lengths, lengths)
    offset = np.arange(total, dtype=np.int64) - np.repeat(starts, lengths)
    bits = (np.repeat(values, lengths) >> (rep_len - 1 - offset)) & 1
    pad = (-total) % 8
    if pad:
        bits = np.concatenate([bits, np.ones(pad, dtype=bits.dtype)])
    packed = np.packbits(bits.astype(np.uint8))
    ff = np.flatnonzero(packed == 0xFF)
    if ff.size:
        packed = np.insert(packed, ff + 1, 0)
    return packed.tobytes()


def _entropy_code(coefs: np.ndarray, comp_tables: np.ndarray, comp_ids: np.ndarray,
                  n_components: int) -> bytes:
    """Huffman-code quantized zigzag blocks (rows in scan order) into one bit segment.

    ``comp_ids`` gives the component of each block (for DC prediction) and
    ``comp_tables`` the table class (0 luma, 1 chroma) of each component.
    """
    nb = coefs.shape[0]
    table_of_block = comp_tables[comp_ids]
    dc_luma, dc_chroma = _huffman_lookup(DC_LUMA), _huffman_lookup(DC_CHROMA)
    ac_luma, ac_chroma = _huffman_lookup(AC_LUMA), _huffman_lookup(AC_CHROMA)
    dc_code = np.stack([dc_luma[0], dc_chroma[0]])
    dc_len = np.stack([dc_luma[1], dc_chroma[1]])
    ac_code = np.stack([ac_luma[0], ac_chroma[0]])
    ac_len = np.stack([ac_luma[1], ac_chroma[1]])

    # DC differences, predicted per component in scan order
    dc = coefs[:, 0]
    diff = np.empty(nb, dtype=np.int64)
    for c in range(n_components):
        idx = np.flatnonzero(comp_ids == c)
        diff[idx] = np.diff(dc[idx], prepend=0)
    dsize = _size_category(diff)

    # AC run-length tokens for every nonzero coefficient
    blk, pos = np.nonzero(coefs[:, 1:])
    pos = pos + 1
    val = coefs[blk, pos]
    prev = np.empty_like(pos)
    prev[:1] = 0
    prev[1:] = pos[:-1]
    prev[np.r_[True, blk[1:] != blk[:-1]] if blk.size else []] = 0
    run = pos - prev - 1
    nzrl = run >> 4
    asize = _size_category(val)
    sym = ((run & 15) << 4) | asize
    atab = table_of_block[blk]

    # end-of-block marker unless the last coefficient is nonzero
    last_nz = np.full(nb, 0, dtype=np.int64)
    if blk.size:
        last_nz[blk] = pos  # later (larger) positions overwrite earlier ones
    eob_blk = np.flatnonzero(last_nz < 63)

    # piece sort keys: block * STRIDE + slot; slots keep in-block order
    stride = 64 * 8 + 8
    keys, vals, lens = [], [], []
    bidx = np.arange(nb, dtype=np.int64)
    tb = table_of_block
    keys += [bidx * stride, bidx * stride + 1]
    vals += [dc_code[tb, dsize], _amplitude_bits(diff, dsize)]
    lens += [dc_len[tb, dsize], dsize]
    if blk.size:
        zr_count = nzrl.astype(np.int64)
        if zr_count.any():
            zr_owner = np.repeat(np.arange(blk.size), zr_count)
            zr_j = np.arange(zr_owner.size) - np.repeat(np.cumsum(zr_count) - zr_count, zr_count)
            keys.append(blk[zr_owner] * stride + pos[zr_owner] * 8 + zr_j)
            vals.append(ac_code[atab[zr_owner], 0xF0])
            lens.append(ac_len[atab[zr_owner], 0xF0])
        keys += [blk * stride + pos * 8 + 4, blk * stride + pos * 8 + 5]
        vals += [ac_code[atab, sym], _amplitude_bits(val, asize)]
        lens += [ac_len[atab, sym], asize]
    keys.append(eob_blk * stride + 64 * 8)
    vals.append(ac_code[tb[eob_blk], 0x00])
    lens.append(ac_len[tb[eob_blk], 0x00])

    keys = np.concatenate(keys)
    order = np.argsort(keys, kind="stable")
    return _pack_bits(np.concatenate(vals)[order], np.concatenate(lens)[order])


def _blocks(plane: np.ndarray) -> np.ndarray:
    h, w = plane.shape
    return plane.reshape(h // 8, 8, w // 8, 8).transpose(0, 2, 1, 3)


def _pad_edge(plane: np.ndarray, mh: int, mw: int) -> np.ndarray:
    h, w = plane.shape
    return np.pad(plane, ((0, (-h) % mh), (0, (-w) % mw)), mode="edge")


def _segment(marker: int, payload: bytes) -> bytes:
    return struct.pack(">BBH", 0xFF, marker, len(payload) + 2) + payload


def _dht(table_class: int, table_id: int, spec) -> bytes:
    counts, symbols = spec
    return bytes([table_class << 4 | table_id]) + bytes(counts) + bytes(symbols)


def encode_uint8(pixels: np.ndarray, config: JpegConfig = JpegConfig()) -> bytes:
    """Encode a C x H x W uint8 array (C in {1, 3}) as a baseline JFIF stream."""
    pixels = np.asarray(pixels)
    if pixels.ndim == 2:
        pixels = pixels[None]
    if pixels.ndim != 3 or pixels.shape[0] not in (1, 3):
        raise InputError(f"JPEG encoder needs 1 or 3 channels (C x H x W), got shape {pixels.shape}")
    nc, height, width = pixels.shape
    if height < 1 or width < 1 or height > 0xFFFF or width > 0xFFFF:
        raise InputError(f"unsupported image size {height}x{width}")
    tables = config.tables
    color = nc == 3
    sub = color and config.subsampling == "4:2:0"
    mcu = 16 if sub else 8

    if color:
        planes = rgb_to_ycbcr(pixels)
    else:
        planes = pixels.astype(np.float64)
    planes = [_pad_edge(p, mcu, mcu) for p in planes]
    if sub:
        # 2x2 box average for chroma
        planes[1:] = [p.reshape(p.shape[0] // 2, 2, p.shape[1] // 2, 2).mean(axis=(1, 3)) for p in planes[1:]]

    qt = [tables.luma, tables.chroma, tables.chroma][:nc]
    qz = []
    for p, q in zip(planes, qt):
        coef = fdct_blocks(_blocks(p - 128.0))
        qz.append(round_half_away(coef / q).astype(np.int64).reshape(*coef.shape[:2], 64)[..., ZIGZAG])

    # interleave blocks in MCU order
    mh, mw = planes[0].shape[0] // mcu, planes[0].shape[1] // mcu
    if sub:
        y = qz[0].reshape(mh, 2, mw, 2, 64).transpose(0, 2, 1, 3, 4).reshape(mh, mw, 4, 64)
        mcus = np.concatenate([y, qz[1][:, :, None], qz[2][:, :, None]], axis=2)
        comp_of_slot = np.array([0, 0, 0, 0, 1, 2])
    else:
        mcus = np.stack(qz, axis=2)
        comp_of_slot = np.arange(nc)
    per_mcu = mcus.shape[2]
    mcus = mcus.reshape(mh * mw, per_mcu, 64)
    comp_tables = np.array([0, 1, 1])[:nc]

    n_mcu = mh * mw
    ri = config.restart_interval
    chunk = ri if ri else n_mcu
    scan = bytearray()
    for k, start in enumerate(range(0, n_mcu, chunk)):
        part = mcus[start:start + chunk]
        ids = np.tile(comp_of_slot, part.shape[0])
        if k:
            scan += bytes([0xFF, 0xD0 + (k - 1) % 8])
        scan += _entropy_code(part.reshape(-1, 64), comp_tables, ids, nc)

    out = bytearray(b"\xff\xd8")
    out += _segment(0xE0, b"JFIF\x00" + bytes([1, 1, 0]) + struct.pack(">HH", 1, 1) + b"\x00\x00")
    dqt = b""
    for tid, t in enumerate([tables.luma, tables.chroma][: 2 if color else 1]):
        dqt += bytes([tid]) + bytes(t.reshape(64)[ZIGZAG].astype(np.uint8))
    out += _segment(0xDB, dqt)
    sof = struct.pack(">BHHB", 8, height, width, nc)
    for cid in range(nc):
        hv = 0x22 if (sub and cid == 0) else 0x11
        sof += bytes([cid + 1, hv, 0 if cid == 0 else 1])
    out += _segment(0xC0, sof)
    dht = _dht(0, 0, DC_LUMA) + _dht(1, 0, AC_LUMA)
    if color:
        dht += _dht(0, 1, DC_CHROMA) + _dht(1, 1, AC_CHROMA)
    out += _segment(0xC4, dht)
    if ri:
        out += _segment(0xDD, struct.pack(">H", ri))
    sos = bytes([nc])
    for cid in range(nc):
        tid = 0 if cid == 0 else 1
        sos += bytes([cid + 1, tid << 4 | tid])
    sos += bytes([0, 63, 0])
    out += _segment(0xDA, sos)
    out += scan
    out += b"\xff\xd9"
    return bytes(out)


def encode(image: np.ndarray, config: JpegConfig = JpegConfig()) -> bytes:
    """Encode a C x H x W float image with values in [0, 1]."""
    image = np.asarray(image)
    if image.ndim == 2:
        image = image[None]
    if image.ndim != 3 or image.shape[0] not in (1, 3):
        raise InputError(f"JPEG encoder needs 1 or 3 channels (C x H x W), got shape {image.shape}")
    return encode_uint8(to_uint8(image), config)


def cifs(image: np.ndarray, config: JpegConfig = JpegConfig()) -> int:
    """Compressed image file size: byte length of ``encode(image, config)``."""
    return len(encode(image, config))


def cifs_uint8(pixels: np.ndarray, config: JpegConfig = JpegConfig()) -> int:
    return len(encode_uint8(pixels, config))
