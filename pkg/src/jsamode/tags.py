"""Time-tag streams: the ``TTG1`` file format, pulse-aligned coincidence search,
arrival-time to frequency conversion and histogramming.

``TTG1`` layout (little-endian)::

    header  : magic "TTG1" | u32 version=1 | u64 record_count | f64 rep_period_ns
    record  : u64 timestamp_ps | u8 channel | u8 flags=0 | 6 bytes reserved=0
    trailer : optional "CFGH" | u32 len | utf-8 config hash

Channels: 0 = beam-splitter output c, 1 = output d, 2 = herald.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import BinaryIO, Iterable, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from .core import C_NM_PER_FS, FrequencyGrid, Interferogram, angular_to_wavelength
from .formats import FormatError, _read_trailer, _trailer
from .forward import DetectorModel

MAGIC = b"TTG1"
VERSION = 1
HEADER = struct.Struct("<4sIQd")
RECORD_DTYPE = np.dtype([("timestamp", "<u8"), ("channel", "u1"), ("flags", "u1"),
                         ("reserved", "V6")])
RECORD_SIZE = RECORD_DTYPE.itemsize
REORDER_LIMIT = 1024
CHANNELS = (0, 1, 2)
FOLD_MASKS = {2: 0b011, 3: 0b111}


@dataclass(frozen=True, eq=False)
class TimeTagStream:
    timestamps: np.ndarray
    channels: np.ndarray
    rep_period: float  # ns

    def __post_init__(self):
        t = np.asarray(self.timestamps, dtype=np.uint64)
        c = np.asarray(self.channels, dtype=np.uint8)
        if t.shape != c.shape or t.ndim != 1:
            raise ValueError("timestamps and channels must be 1D arrays of equal length")
        if c.size and c.max() > 2:
            raise ValueError("channel must be 0, 1 or 2")
        object.__setattr__(self, "timestamps", t)
        object.__setattr__(self, "channels", c)

    def __len__(self):
        return int(self.timestamps.size)

    def __eq__(self, other):
        return (isinstance(other, TimeTagStream)
                and self.rep_period == other.rep_period
                and np.array_equal(self.timestamps, other.timestamps)
                and np.array_equal(self.channels, other.channels))

    def chunks(self, k: int) -> Iterator[Tuple[np.ndarray, np.ndarray]]:
        """Split into ``k`` contiguous pieces (some possibly empty)."""
        edges = np.linspace(0, len(self), k + 1).astype(int)
        for a, b in zip(edges[:-1], edges[1:]):
            yield self.timestamps[a:b], self.channels[a:b]


# ---------------------------------------------------------------- wire format

def _records(t: np.ndarray, c: np.ndarray) -> bytes:
    rec = np.zeros(t.size, dtype=RECORD_DTYPE)
    rec["timestamp"] = t
    rec["channel"] = c
    return rec.tobytes()


def serialize_stream(stream: TimeTagStream, config_hash: Optional[str] = None) -> bytes:
    head = HEADER.pack(MAGIC, VERSION, len(stream), stream.rep_period)
    return head + _records(stream.timestamps, stream.channels) + _trailer(config_hash)


def _parse_header(buf: bytes):
    if len(buf) < 4 or buf[:4] != MAGIC:
        raise FormatError(f"bad magic {bytes(buf[:4])!r}, expected {MAGIC!r}", 0)
    if len(buf) < HEADER.size:
        raise FormatError("truncated header", len(buf))
    _, version, count, rep = HEADER.unpack_from(buf)
    if version != VERSION:
        raise FormatError(f"unsupported TTG version {version}", 4)
    if not rep > 0:
        raise FormatError(f"invalid repetition period {rep}", 16)
    return count, rep


class _Reorderer:
    """Bounded reorder buffer.

    A record may be earlier than at most ``limit`` preceding records; the
    stream is stably sorted on the fly and anything further out of order is a
    hard error.
    """

    def __init__(self, limit: int = REORDER_LIMIT, base_offset: int = HEADER.size):
        self.limit = limit
        self.base_offset = base_offset
        self.hist_max = np.zeros(0, dtype=np.uint64)  # running max of the last limit+1 records
        self.n_seen = 0
        self.tail_t = np.zeros(0, dtype=np.uint64)
        self.tail_c = np.zeros(0, dtype=np.uint8)

    def push(self, t: np.ndarray, c: np.ndarray):
        if t.size == 0:
            return t, c
        prev_max = self.hist_max[-1] if self.hist_max.size else np.uint64(0)
        run = np.maximum.accumulate(np.concatenate([[prev_max], t]).astype(np.uint64))[1:]
        allm = np.concatenate([self.hist_max, run])
        lag = self.limit + 1
        # record i is bad if t[i] < runmax[i - lag]
        start = self.hist_max.size
        ref_idx = np.arange(t.size) + start - lag
        ok = ref_idx < 0
        ref = allm[np.clip(ref_idx, 0, None)]
        bad = np.nonzero(~ok & (t < ref))[0]
        if bad.size:
            i = self.n_seen + int(bad[0])
            raise FormatError(f"decreasing timestamp beyond reorder buffer of {self.limit} records",
                              self.base_offset + i * RECORD_SIZE)
        self.hist_max = allm[-lag:]
        self.n_seen += t.size
        bt = np.concatenate([self.tail_t, t])
        bc = np.concatenate([self.tail_c, c])
        if np.any(bt[1:] < bt[:-1]):
            order = np.argsort(bt, kind="stable")
            bt, bc = bt[order], bc[order]
        cut = max(bt.size - self.limit, 0)
        self.tail_t, self.tail_c = bt[cut:], bc[cut:]
        return bt[:cut], bc[:cut]

    def finish(self):
        t, c = self.tail_t, self.tail_c
        self.tail_t = self.tail_t[:0]
        self.tail_c = self.tail_c[:0]
        return t, c


def _decode_records(body, offset: int):
    rec = np.frombuffer(body, dtype=RECORD_DTYPE)
    bad = np.nonzero((rec["channel"] > 2) | (rec["flags"] != 0))[0]
    if bad.size:
        raise FormatError("invalid channel or flags", offset + int(bad[0]) * RECORD_SIZE)
    if np.any(rec["reserved"] != np.void(bytes(6))):
        i = int(np.nonzero(rec["reserved"] != np.void(bytes(6)))[0][0])
        raise FormatError("non-zero reserved bytes", offset + i * RECORD_SIZE)
    return rec["timestamp"].astype(np.uint64), rec["channel"].astype(np.uint8)


def iter_stream(fp: BinaryIO, chunk_records: int = 1 << 20):
    """Stream a TTG1 file in bounded memory.

    Yields ``(rep_period_ns, timestamps, channels)`` chunks of sorted records;
    the config-hash trailer, if any, is returned as the generator's value.
    """
    head = fp.read(HEADER.size)
    count, rep = _parse_header(head)
    ro = _Reorderer()
    done = 0
    while done < count:
        n = min(chunk_records, count - done)
        body = fp.read(n * RECORD_SIZE)
        offset = HEADER.size + done * RECORD_SIZE
        if len(body) < n * RECORD_SIZE:
            whole = len(body) // RECORD_SIZE
            raise FormatError(f"truncated record (header declares {count} records)",
                              offset + whole * RECORD_SIZE)
        t, c = _decode_records(body, offset)
        t, c = ro.push(t, c)
        if t.size:
            yield rep, t, c
        done += n
    t, c = ro.finish()
    if t.size:
        yield rep, t, c
    rest = fp.read()
    return _read_trailer(rest, 0) if rest else None


def parse_stream(buf: bytes) -> TimeTagStream:
    """Parse a complete TTG1 buffer."""
    count, rep = _parse_header(buf)
    end = HEADER.size + count * RECORD_SIZE
    if len(buf) < end:
        whole = (len(buf) - HEADER.size) // RECORD_SIZE
        raise FormatError(f"truncated record (header declares {count} records)",
                          HEADER.size + whole * RECORD_SIZE)
    t, c = _decode_records(memoryview(buf)[HEADER.size:end], HEADER.size)
    _read_trailer(buf, end)
    ro = _Reorderer()
    t1, c1 = ro.push(t, c)
    t2, c2 = ro.finish()
    return TimeTagStream(np.concatenate([t1, t2]), np.concatenate([c1, c2]), rep)


def read_trailer_hash(buf: bytes) -> Optional[str]:
    count, _ = _parse_header(buf)
    return _read_trailer(buf, HEADER.size + count * RECORD_SIZE)


# ---------------------------------------------------------------- coincidences

@dataclass(frozen=True)
class CoincidenceEvent:
    pulse_index: int
    offsets: Tuple[float, float, float]  # ps per channel, NaN if absent
    fold: int


@dataclass(eq=False)
class Coincidences:
    """Columnar coincidence list; iterate to get :class:`CoincidenceEvent` objects."""

    pulse: np.ndarray
    offsets: np.ndarray  # (n, 3) ps, NaN where a channel is absent
    fold: np.ndarray

    def __len__(self):
        return int(self.pulse.size)

    def __iter__(self):
        for p, o, f in zip(self.pulse, self.offsets, self.fold):
            yield CoincidenceEvent(int(p), tuple(float(x) for x in o), int(f))

    def __eq__(self, other):
        return (np.array_equal(self.pulse, other.pulse)
                and np.array_equal(self.offsets, other.offsets, equal_nan=True)
                and np.array_equal(self.fold, other.fold))

    def select(self, fold: int) -> "Coincidences":
        m = self.fold == fold
        return Coincidences(self.pulse[m], self.offsets[m], self.fold[m])

    @staticmethod
    def concat(parts: Sequence["Coincidences"]) -> "Coincidences":
        if not parts:
            return Coincidences(np.zeros(0, np.int64), np.zeros((0, 3)), np.zeros(0, np.int8))
        return Coincidences(np.concatenate([p.pulse for p in parts]),
                            np.concatenate([p.offsets for p in parts]),
                            np.concatenate([p.fold for p in parts]))


class CoincidenceFinder:
    """Single-pass, chunk-independent coincidence search.

    Tags are assigned to the nearest pulse epoch (after subtracting a
    per-channel delay). A fold-n event is a pulse holding exactly the n
    required channels (0,1 for two-folds; 0,1,2 for three-folds), one tag
    each, all within ``window`` ps of the epoch.
    """

    def __init__(self, rep_period_ns: float, window: float, folds: Iterable[int] = (3,),
                 channel_delays: Sequence[float] = (0.0, 0.0, 0.0)):
        self.t_rep = rep_period_ns * 1e3
        if window > self.t_rep / 2:
            raise ValueError(f"window {window} ps exceeds half the repetition period "
                             f"({self.t_rep / 2} ps): pulse assignment is ambiguous")
        self.window = window
        self.folds = tuple(sorted(set(folds)))
        for f in self.folds:
            if f not in FOLD_MASKS:
                raise ValueError(f"unsupported fold {f}")
        self.delays = np.asarray(channel_delays, dtype=float)
        self._integral = float(self.t_rep).is_integer() and np.all(self.delays == np.rint(self.delays))
        self._held: Optional[Tuple[np.ndarray, np.ndarray, np.ndarray]] = None
        self.records = 0
        self.outside_window = 0

    def _assign(self, t: np.ndarray, c: np.ndarray):
        if self._integral:
            T = int(self.t_rep)
            tt = t.astype(np.int64) - self.delays.astype(np.int64)[c]
            p = (tt + T // 2) // T
            off = (tt - p * T).astype(float)
        else:
            tt = t.astype(np.float64) - self.delays[c]
            p = np.floor(tt / self.t_rep + 0.5).astype(np.int64)
            off = tt - p * self.t_rep
        return p, off

    def _emit(self, p, off, c) -> Coincidences:
        keep = np.abs(off) <= self.window
        self.outside_window += int((~keep).sum())
        p, off, c = p[keep], off[keep], c[keep]
        if p.size == 0:
            return Coincidences.concat([])
        order = np.argsort(p, kind="stable")
        p, off, c = p[order], off[order], c[order]
        starts = np.concatenate([[0], np.nonzero(np.diff(p))[0] + 1])
        counts = np.diff(np.concatenate([starts, [p.size]]))
        mask = np.bitwise_or.reduceat((1 << c.astype(np.int64)), starts)
        fold = np.zeros(starts.size, dtype=np.int8)
        for f in self.folds:
            fold[(counts == f) & (mask == FOLD_MASKS[f])] = f
        good = fold > 0
        gid = np.repeat(np.arange(starts.size), counts)
        rec_good = good[gid]
        new_id = np.cumsum(good) - 1
        offsets = np.full((int(good.sum()), 3), np.nan)
        offsets[new_id[gid[rec_good]], c[rec_good]] = off[rec_good]
        return Coincidences(p[starts][good], offsets, fold[good])

    def feed(self, t: np.ndarray, c: np.ndarray) -> Coincidences:
        self.records += int(t.size)
        p, off = self._assign(t, c)
        if self._held is not None:
            hp, hoff, hc = self._held
            p, off, c = np.concatenate([hp, p]), np.concatenate([hoff, off]), np.concatenate([hc, c])
        if p.size == 0:
            self._held = None
            return Coincidences.concat([])
        # later tags can still land on the last two pulse indices seen
        last = p[-1] - 1
        done = p < last
        self._held = (p[~done], off[~done], c[~done])
        return self._emit(p[done], off[done], c[done])

    def finish(self) -> Coincidences:
        if self._held is None:
            return Coincidences.concat([])
        hp, hoff, hc = self._held
        self._held = None
        return self._emit(hp, hoff, hc)


def find_coincidences(stream: TimeTagStream, window: Optional[float] = None,
                      folds: Iterable[int] = (3,), chunks: int = 1,
                      channel_delays: Sequence[float] = (0.0, 0.0, 0.0)) -> Coincidences:
    """Coincidences of a sorted stream; ``chunks`` > 1 exercises the streaming path."""
    if window is None:
        window = default_window(stream.rep_period)
    finder = CoincidenceFinder(stream.rep_period, window, folds, channel_delays)
    parts = [finder.feed(t, c) for t, c in stream.chunks(chunks)]
    parts.append(finder.finish())
    return Coincidences.concat(parts)


WINDOW_GUARD_PS = 100.0


def default_window(rep_period_ns: float, guard_ps: float = WINDOW_GUARD_PS) -> float:
    """Half the pulse period less a guard that rejects tags midway between pulses."""
    return rep_period_ns * 1e3 / 2 - guard_ps


# ---------------------------------------------------------------- frequencies and histograms

def offsets_to_frequencies(offsets: np.ndarray, det: DetectorModel,
                           centers: Sequence[float]) -> np.ndarray:
    """Detunings (rad/fs) from arrival offsets (ps).

    ``centers`` are the absolute angular frequencies that arrive at zero
    offset on each channel; Δλ = offset / dispersion.
    """
    off = np.asarray(offsets, dtype=float)
    centers = np.asarray(centers, dtype=float)
    lam_c = angular_to_wavelength(centers)
    lam = lam_c + off / det.dispersion
    return 2 * np.pi * C_NM_PER_FS * (1.0 / lam - 1.0 / lam_c)


@dataclass
class IngestReport:
    records: int = 0
    outside_window: int = 0
    events: int = 0
    binned: int = 0
    dropped_out_of_range: int = 0
    fold: int = 3

    def text(self) -> str:
        return "\n".join(f"{k}: {v}" for k, v in self.__dict__.items()) + "\n"


def histogram(detunings: np.ndarray, grids: Sequence[FrequencyGrid]):
    """Integer-count histogram of (n, fold) detunings on fixed grids.

    Returns ``(Interferogram, dropped)`` where ``dropped`` counts events with
    any coordinate outside its grid.
    """
    d = np.asarray(detunings, dtype=float).reshape(-1, len(grids))
    idx = np.stack([g.index_of(d[:, k]) for k, g in enumerate(grids)], axis=1) if d.size else \
        np.zeros((0, len(grids)), np.int64)
    shape = tuple(g.n_bins for g in grids)
    inside = np.all((idx >= 0) & (idx < np.array(shape)), axis=1)
    flat = np.ravel_multi_index(tuple(idx[inside].T), shape) if inside.any() else np.zeros(0, np.int64)
    counts = np.bincount(flat, minlength=int(np.prod(shape))).reshape(shape).astype(float)
    herald = grids[2] if len(grids) == 3 else None
    return Interferogram(grids[0], grids[1], counts, herald), int((~inside).sum())


def ingest(stream: TimeTagStream, det: DetectorModel, grids: Sequence[FrequencyGrid],
           window: Optional[float] = None, chunks: int = 1):
    """Stream -> coincidences -> detunings -> histogram of fold ``len(grids)``."""
    fold = len(grids)
    if window is None:
        window = default_window(stream.rep_period)
    finder = CoincidenceFinder(stream.rep_period, window, (fold,))
    parts = [finder.feed(t, c) for t, c in stream.chunks(chunks)]
    parts.append(finder.finish())
    ev = Coincidences.concat(parts)
    return _histogram_events(ev, det, grids, finder)


def _histogram_events(ev: Coincidences, det, grids, finder):
    fold = len(grids)
    centers = [g.center for g in grids]
    det_w = offsets_to_frequencies(ev.offsets[:, :fold], det, centers)
    h, dropped = histogram(det_w, grids)
    rep = IngestReport(records=finder.records, outside_window=finder.outside_window,
                       events=len(ev), binned=int(h.total), dropped_out_of_range=dropped,
                       fold=fold)
    return h, rep


def ingest_file(path, det: DetectorModel, grids: Sequence[FrequencyGrid],
                window: Optional[float] = None, chunk_records: int = 1 << 20):
    """Bounded-memory ingestion of a TTG1 file. Returns ``(Interferogram, report, hash)``."""
    fold = len(grids)
    parts: List[Coincidences] = []
    finder = None
    with open(path, "rb") as fp:
        gen = iter_stream(fp, chunk_records)
        cfg_hash = None
        while True:
            try:
                rep, t, c = next(gen)
            except StopIteration as stop:
                cfg_hash = stop.value
                break
            if finder is None:
                finder = CoincidenceFinder(rep, default_window(rep) if window is None else window,
                                           (fold,))
            parts.append(finder.feed(t, c))
    if finder is None:
        with open(path, "rb") as fp:
            _, rep = _parse_header(fp.read(HEADER.size))
        finder = CoincidenceFinder(rep, default_window(rep) if window is None else window, (fold,))
    parts.append(finder.finish())
    h, report = _histogram_events(Coincidences.concat(parts), det, grids, finder)
    return h, report, cfg_hash
