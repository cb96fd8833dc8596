"""8-bit image codecs: binary PPM (P6) / PGM (P5) and PNG (grey or RGB).

Images are numpy arrays of shape (H, W, C), C in {1, 3}, with intensities
in [0, 1]. Decoding maps byte b to b/255; encoding quantizes with
round-half-up, so 0.5 becomes byte 128. Encoders emit canonical output
(fixed header layout, PNG with unfiltered rows and a single IDAT), which
makes encode(decode(file)) byte-identical for files this module wrote.
"""

from __future__ import annotations

import struct
import zlib

import numpy as np

from .errors import DecodeError

PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"

_WHITESPACE = b" \t\r\n\x0b\x0c"


def quantize(img: np.ndarray) -> np.ndarray:
    """Map unit-interval intensities to uint8 with round-half-up."""
    return np.clip(np.floor(np.asarray(img, dtype=np.float64) * 255.0 + 0.5), 0, 255).astype(np.uint8)


def _check_image(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] not in (1, 3):
        raise ValueError(f"expected (H, W, C) image with C in {{1, 3}}, got shape {img.shape}")
    if img.shape[0] < 1 or img.shape[1] < 1:
        raise ValueError(f"image dimensions must be positive, got {img.shape[:2]}")
    if not np.all(np.isfinite(img)):
        raise ValueError("image contains non-finite values")
    if img.min() < 0.0 or img.max() > 1.0:
        raise ValueError("image intensities must lie in [0, 1]")
    return img


def sniff_format(data: bytes) -> str:
    if data[:8] == PNG_SIGNATURE:
        return "png"
    if data[:2] in (b"P5", b"P6"):
        return "ppm"
    raise DecodeError("unrecognized image magic", offset=0)


def decode_image(data: bytes, fmt: str | None = None) -> np.ndarray:
    """Decode a PPM/PGM or PNG byte stream to a float image in [0, 1]."""
    if fmt is None:
        fmt = sniff_format(data)
    if fmt == "ppm":
        return _decode_pnm(data)
    if fmt == "png":
        return _decode_png(data)
    raise ValueError(f"unknown format {fmt!r}")


def encode_image(img: np.ndarray, fmt: str = "ppm") -> bytes:
    """Encode an image; 1-channel PPM output uses P5, 3-channel uses P6."""
    img = _check_image(img)
    if fmt == "ppm":
        return _encode_pnm(img)
    if fmt == "png":
        return _encode_png(img)
    raise ValueError(f"unknown format {fmt!r}")


# ---------------------------------------------------------------------------
# PPM / PGM
# ---------------------------------------------------------------------------


class _HeaderScanner:
    """Whitespace/comment-aware tokenizer over a PNM header."""

    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def token(self, what: str) -> bytes:
        data, n = self.data, len(self.data)
        pos = self.pos
        while pos < n:
            b = data[pos : pos + 1]
            if b == b"#":
                while pos < n and data[pos : pos + 1] not in (b"\n", b"\r"):
                    pos += 1
            elif b in _WHITESPACE:
                pos += 1
            else:
                break
        if pos >= n:
            raise DecodeError(f"truncated header while reading {what}", offset=pos)
        start = pos
        while pos < n and data[pos : pos + 1] not in _WHITESPACE and data[pos : pos + 1] != b"#":
            pos += 1
        self.pos = pos
        return data[start:pos]

    def int_token(self, what: str) -> int:
        tok = self.token(what)
        try:
            return int(tok)
        except ValueError:
            raise DecodeError(f"bad {what} {tok!r}", offset=self.pos - len(tok)) from None


def _decode_pnm(data: bytes) -> np.ndarray:
    scan = _HeaderScanner(data)
    magic = scan.token("magic")
    if magic == b"P6":
        channels = 3
    elif magic == b"P5":
        channels = 1
    else:
        raise DecodeError(f"unsupported PNM magic {magic!r}", offset=0)
    width = scan.int_token("width")
    height = scan.int_token("height")
    maxval = scan.int_token("maxval")
    if width < 1 or height < 1:
        raise DecodeError(f"bad dimensions {width}x{height}", offset=scan.pos)
    if maxval != 255:
        raise DecodeError(f"unsupported maxval {maxval}, only 8-bit supported", offset=scan.pos)
    # exactly one whitespace byte separates the header from the payload
    if scan.pos >= len(data) or data[scan.pos : scan.pos + 1] not in _WHITESPACE:
        raise DecodeError("missing whitespace after maxval", offset=scan.pos)
    payload_start = scan.pos + 1
    need = width * height * channels
    payload = data[payload_start : payload_start + need]
    if len(payload) < need:
        raise DecodeError(
            f"truncated pixel payload, want {need} bytes, have {len(payload)}",
            offset=payload_start + len(payload),
        )
    raw = np.frombuffer(payload, dtype=np.uint8).reshape(height, width, channels)
    return raw.astype(np.float64) / 255.0


def _encode_pnm(img: np.ndarray) -> bytes:
    height, width, channels = img.shape
    magic = b"P6" if channels == 3 else b"P5"
    header = b"%s\n%d %d\n255\n" % (magic, width, height)
    return header + quantize(img).tobytes()


# ---------------------------------------------------------------------------
# PNG (bit depth 8, colour types 0 and 2, no interlace)
# ---------------------------------------------------------------------------


def _decode_png(data: bytes) -> np.ndarray:
    if data[:8] != PNG_SIGNATURE:
        raise DecodeError("bad PNG signature", offset=0)
    pos = 8
    header = None
    idat = bytearray()
    seen_iend = False
    while pos < len(data):
        if pos + 8 > len(data):
            raise DecodeError("truncated chunk header", offset=pos)
        (length,) = struct.unpack(">I", data[pos : pos + 4])
        ctype = data[pos + 4 : pos + 8]
        body_start = pos + 8
        body_end = body_start + length
        if body_end + 4 > len(data):
            raise DecodeError(f"truncated {ctype!r} chunk", offset=len(data))
        body = data[body_start:body_end]
        (crc,) = struct.unpack(">I", data[body_end : body_end + 4])
        if zlib.crc32(ctype + body) & 0xFFFFFFFF != crc:
            raise DecodeError(f"CRC mismatch in {ctype!r} chunk", offset=body_end)
        if ctype == b"IHDR":
            header = struct.unpack(">IIBBBBB", body)
            _, _, depth, colour, compression, filt, interlace = header
            if depth != 8:
                raise DecodeError(
                    f"unsupported bit depth {depth}, only 8-bit supported", offset=body_start
                )
            if colour not in (0, 2):
                raise DecodeError(
                    f"unsupported colour type {colour}, only greyscale/RGB supported",
                    offset=body_start,
                )
            if compression != 0 or filt != 0 or interlace != 0:
                raise DecodeError(
                    "unsupported PNG compression/filter/interlace method", offset=body_start
                )
        elif ctype == b"IDAT":
            idat.extend(body)
        elif ctype == b"IEND":
            seen_iend = True
            break
        pos = body_end + 4
    if header is None:
        raise DecodeError("missing IHDR chunk", offset=8)
    if not seen_iend:
        raise DecodeError("missing IEND chunk", offset=len(data))
    width, height, depth, colour, *_ = header
    channels = 1 if colour == 0 else 3
    try:
        raw = zlib.decompress(bytes(idat))
    except zlib.error as exc:
        raise DecodeError(f"bad IDAT stream: {exc}", offset=8) from None
    stride = width * channels
    if len(raw) != height * (stride + 1):
        raise DecodeError(
            f"IDAT payload length {len(raw)} does not match {height} rows of {stride + 1} bytes",
            offset=8,
        )
    out = np.empty((height, stride), dtype=np.uint8)
    prev = np.zeros(stride, dtype=np.uint8)
    for y in range(height):
        row_start = y * (stride + 1)
        ftype = raw[row_start]
        row = np.frombuffer(raw, dtype=np.uint8, count=stride, offset=row_start + 1)
        out[y] = _unfilter_row(ftype, row, prev, channels, y)
        prev = out[y]
    img = out.reshape(height, width, channels)
    return img.astype(np.float64) / 255.0


def _unfilter_row(ftype: int, row: np.ndarray, prev: np.ndarray, bpp: int, y: int) -> np.ndarray:
    if ftype == 0:
        return row.copy()
    if ftype == 2:
        return (row.astype(np.int32) + prev).astype(np.uint8)
    out = np.empty_like(row)
    if ftype == 1:
        out[:bpp] = row[:bpp]
        for i in range(bpp, len(row)):
            out[i] = (int(row[i]) + int(out[i - bpp])) & 0xFF
    elif ftype == 3:
        for i in range(len(row)):
            left = int(out[i - bpp]) if i >= bpp else 0
            out[i] = (int(row[i]) + (left + int(prev[i])) // 2) & 0xFF
    elif ftype == 4:
        for i in range(len(row)):
            left = int(out[i - bpp]) if i >= bpp else 0
            up = int(prev[i])
            ul = int(prev[i - bpp]) if i >= bpp else 0
            out[i] = (int(row[i]) + _paeth(left, up, ul)) & 0xFF
    else:
        raise DecodeError(f"bad filter type {ftype} in row {y}")
    return out


def _paeth(a: int, b: int, c: int) -> int:
    p = a + b - c
    pa, pb, pc = abs(p - a), abs(p - b), abs(p - c)
    if pa <= pb and pa <= pc:
        return a
    if pb <= pc:
        return b
    return c


def _png_chunk(ctype: bytes, body: bytes) -> bytes:
    return (
        struct.pack(">I", len(body))
        + ctype
        + body
        + struct.pack(">I", zlib.crc32(ctype + body) & 0xFFFFFFFF)
    )


def _encode_png(img: np.ndarray) -> bytes:
    height, width, channels = img.shape
    colour = 0 if channels == 1 else 2
    ihdr = struct.pack(">IIBBBBB", width, height, 8, colour, 0, 0, 0)
    pixels = quantize(img).reshape(height, width * channels)
    scanlines = bytearray()
    for y in range(height):
        scanlines.append(0)  # filter type: none
        scanlines.extend(pixels[y].tobytes())
    idat = zlib.compress(bytes(scanlines), 6)
    return PNG_SIGNATURE + _png_chunk(b"IHDR", ihdr) + _png_chunk(b"IDAT", idat) + _png_chunk(b"IEND", b"")
