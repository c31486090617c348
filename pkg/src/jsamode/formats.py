"""Matrix and spectrum file formats.

Binary ``JSAB`` (little-endian)::

    magic "JSAB" | u32 version=1 | u32 n1 | u32 n2
    f64 center1 | f64 step1 | f64 center2 | f64 step2
    n1*n2 pairs of f64 (re, im), row-major

Binary ``JSAH`` holds a heralded 3D histogram (real counts)::

    magic "JSAH" | u32 version=1 | u32 n1 | u32 n2 | u32 nh
    f64 center1 | f64 step1 | f64 center2 | f64 step2 | f64 centerh | f64 steph
    n1*n2*nh f64, C order [ω₁, ω₂, ω_h]

Both may be followed by an optional trailer ``"CFGH" | u32 len | utf-8 hash``
carrying the hash of the configuration that produced the file.

CSV files start with ``#``-prefixed ``key=value`` header lines followed by
row-major data. Complex matrices interleave ``re,im`` columns.
"""

from __future__ import annotations

import io
import struct
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .core import FrequencyGrid, Interferogram, Jsa, SpectralMode

JSAB_MAGIC = b"JSAB"
JSAH_MAGIC = b"JSAH"
TRAILER_MAGIC = b"CFGH"
VERSION = 1

_HDR2 = struct.Struct("<4sIII4d")
_HDR3 = struct.Struct("<4sIIII6d")


class FormatError(ValueError):
    """Malformed or corrupt data file; ``offset`` is the byte where parsing failed."""

    def __init__(self, message: str, offset: Optional[int] = None):
        if offset is not None:
            message = f"{message} (at byte {offset})"
        super().__init__(message)
        self.offset = offset


PathLike = Union[str, Path]


def _grid_from(center: float, step: float, n: int) -> FrequencyGrid:
    return FrequencyGrid(center, step * (n - 1), n)


def _trailer(config_hash: Optional[str]) -> bytes:
    if not config_hash:
        return b""
    h = config_hash.encode()
    return TRAILER_MAGIC + struct.pack("<I", len(h)) + h


def _read_trailer(buf: bytes, offset: int) -> Optional[str]:
    rest = buf[offset:]
    if not rest:
        return None
    if rest[:4] != TRAILER_MAGIC or len(rest) < 8:
        raise FormatError("unexpected trailing bytes", offset)
    (n,) = struct.unpack("<I", rest[4:8])
    if len(rest) != 8 + n:
        raise FormatError("malformed config-hash trailer", offset)
    return rest[8:].decode()


# ---------------------------------------------------------------- JSAB

def encode_jsab(grid1: FrequencyGrid, grid2: FrequencyGrid, matrix: np.ndarray,
                config_hash: Optional[str] = None) -> bytes:
    m = np.asarray(matrix, dtype=complex)
    hdr = _HDR2.pack(JSAB_MAGIC, VERSION, grid1.n_bins, grid2.n_bins,
                     grid1.center, grid1.step, grid2.center, grid2.step)
    body = np.ascontiguousarray(m).view(np.float64).astype("<f8").tobytes()
    return hdr + body + _trailer(config_hash)


def decode_jsab(buf: bytes):
    """Return ``(grid1, grid2, complex matrix, config_hash)``."""
    if len(buf) < 4 or buf[:4] != JSAB_MAGIC:
        raise FormatError(f"bad magic {buf[:4]!r}, expected {JSAB_MAGIC!r}", 0)
    if len(buf) < _HDR2.size:
        raise FormatError("truncated header", len(buf))
    _, version, n1, n2, c1, d1, c2, d2 = _HDR2.unpack_from(buf)
    if version != VERSION:
        raise FormatError(f"unsupported JSAB version {version}", 4)
    nbytes = n1 * n2 * 16
    end = _HDR2.size + nbytes
    if len(buf) < end:
        raise FormatError(f"truncated data: need {nbytes} bytes", len(buf))
    data = np.frombuffer(buf, dtype="<f8", count=2 * n1 * n2, offset=_HDR2.size)
    m = data.view(np.complex128).reshape(n1, n2).copy()
    h = _read_trailer(buf, end)
    return _grid_from(c1, d1, n1), _grid_from(c2, d2, n2), m, h


# ---------------------------------------------------------------- JSAH

def encode_jsah(h: Interferogram, config_hash: Optional[str] = None) -> bytes:
    g1, g2, gh = h.grid1, h.grid2, h.herald_grid
    hdr = _HDR3.pack(JSAH_MAGIC, VERSION, g1.n_bins, g2.n_bins, gh.n_bins,
                     g1.center, g1.step, g2.center, g2.step, gh.center, gh.step)
    return hdr + np.ascontiguousarray(h.counts, dtype="<f8").tobytes() + _trailer(config_hash)


def decode_jsah(buf: bytes):
    if len(buf) < 4 or buf[:4] != JSAH_MAGIC:
        raise FormatError(f"bad magic {buf[:4]!r}, expected {JSAH_MAGIC!r}", 0)
    if len(buf) < _HDR3.size:
        raise FormatError("truncated header", len(buf))
    _, version, n1, n2, n3, c1, d1, c2, d2, c3, d3 = _HDR3.unpack_from(buf)
    if version != VERSION:
        raise FormatError(f"unsupported JSAH version {version}", 4)
    end = _HDR3.size + 8 * n1 * n2 * n3
    if len(buf) < end:
        raise FormatError("truncated data", len(buf))
    counts = np.frombuffer(buf, dtype="<f8", count=n1 * n2 * n3, offset=_HDR3.size)
    h = Interferogram(_grid_from(c1, d1, n1), _grid_from(c2, d2, n2),
                      counts.reshape(n1, n2, n3).copy(), _grid_from(c3, d3, n3))
    return h, _read_trailer(buf, end)


# ---------------------------------------------------------------- typed helpers

def write_jsa(path: PathLike, jsa: Jsa, config_hash: Optional[str] = None) -> None:
    Path(path).write_bytes(encode_jsab(jsa.grid1, jsa.grid2, jsa.f, config_hash))


def read_jsa(path: PathLike):
    """Read a JSAB file as a :class:`Jsa`; returns ``(jsa, config_hash)``."""
    g1, g2, m, h = decode_jsab(Path(path).read_bytes())
    return Jsa(g1, g2, m), h


def write_interferogram(path: PathLike, g: Interferogram,
                        config_hash: Optional[str] = None) -> None:
    if g.is_heralded:
        Path(path).write_bytes(encode_jsah(g, config_hash))
    else:
        Path(path).write_bytes(encode_jsab(g.grid1, g.grid2, g.counts, config_hash))


def read_interferogram(path: PathLike):
    """Read a 2D (JSAB) or heralded 3D (JSAH) interferogram by magic."""
    buf = Path(path).read_bytes()
    if buf[:4] == JSAH_MAGIC:
        return decode_jsah(buf)
    g1, g2, m, h = decode_jsab(buf)
    if np.any(m.imag != 0):
        raise FormatError("interferogram file holds complex data")
    return Interferogram(g1, g2, m.real.copy()), h


# ---------------------------------------------------------------- CSV

def _grid_header(name: str, g: FrequencyGrid) -> str:
    return f"# {name}: center={g.center!r} step={g.step!r} n={g.n_bins}\n"


def _parse_header(lines):
    meta, grids = {}, {}
    for line in lines:
        body = line[1:].strip()
        if ":" in body and body.split(":", 1)[0] in ("grid1", "grid2", "grid"):
            name, rest = body.split(":", 1)
            kv = dict(item.split("=", 1) for item in rest.split())
            grids[name] = _grid_from(float(kv["center"]), float(kv["step"]), int(kv["n"]))
        elif "=" in body:
            k, v = body.split("=", 1)
            meta[k.strip()] = v.strip()
    return meta, grids


def _fmt_rows(m: np.ndarray) -> str:
    out = io.StringIO()
    np.savetxt(out, m, delimiter=",", fmt="%.17g")
    return out.getvalue()


def matrix_to_csv(grid1: FrequencyGrid, grid2: FrequencyGrid, matrix: np.ndarray,
                  kind: str = "jsa", config_hash: Optional[str] = None) -> str:
    m = np.asarray(matrix)
    is_complex = np.iscomplexobj(m)
    head = [f"# jsamode-matrix version={VERSION}\n", f"# kind={kind}\n",
            f"# dtype={'complex' if is_complex else 'real'}\n",
            _grid_header("grid1", grid1), _grid_header("grid2", grid2)]
    if config_hash:
        head.append(f"# config_hash={config_hash}\n")
    if is_complex:
        inter = np.empty((m.shape[0], 2 * m.shape[1]))
        inter[:, 0::2] = m.real
        inter[:, 1::2] = m.imag
        m = inter
    return "".join(head) + _fmt_rows(m)


def matrix_from_csv(text: str):
    """Return ``(grid1, grid2, matrix, meta)``."""
    lines = text.splitlines()
    header = [ln for ln in lines if ln.startswith("#")]
    if not header or "jsamode-matrix" not in header[0]:
        raise FormatError("not a jsamode matrix CSV", 0)
    meta, grids = _parse_header(header)
    rows = [ln for ln in lines if ln and not ln.startswith("#")]
    data = np.loadtxt(rows, delimiter=",", ndmin=2)
    if meta.get("dtype") == "complex":
        data = data[:, 0::2] + 1j * data[:, 1::2]
    g1, g2 = grids["grid1"], grids["grid2"]
    if data.shape != (g1.n_bins, g2.n_bins):
        raise FormatError(f"CSV data shape {data.shape} does not match header grids")
    return g1, g2, data, meta


def mode_to_csv(mode: SpectralMode, config_hash: Optional[str] = None) -> str:
    """One row per bin: detuning (rad/fs), re, im, |amp|², arg."""
    g = mode.grid
    head = [f"# jsamode-mode version={VERSION}\n", _grid_header("grid", g)]
    if config_hash:
        head.append(f"# config_hash={config_hash}\n")
    head.append("# columns=detuning,re,im,intensity,phase\n")
    rows = np.column_stack([g.detunings, mode.amp.real, mode.amp.imag,
                            mode.intensity(), mode.phase()])
    return "".join(head) + _fmt_rows(rows)


def mode_from_csv(text: str) -> SpectralMode:
    lines = text.splitlines()
    header = [ln for ln in lines if ln.startswith("#")]
    if not header or "jsamode-mode" not in header[0]:
        raise FormatError("not a jsamode mode CSV", 0)
    _, grids = _parse_header(header)
    rows = [ln for ln in lines if ln and not ln.startswith("#")]
    data = np.loadtxt(rows, delimiter=",", ndmin=2)
    return SpectralMode(grids["grid"], data[:, 1] + 1j * data[:, 2])


def write_mode(path: PathLike, mode: SpectralMode, config_hash: Optional[str] = None) -> None:
    Path(path).write_text(mode_to_csv(mode, config_hash))


def read_mode(path: PathLike) -> SpectralMode:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"spectrum file not found: {p}")
    return mode_from_csv(p.read_text())
