"""Event-stream reduction: histograms, correlations, maps, and DOCP.

All binning is half-open [edge_i, edge_{i+1}); a value exactly on the
last edge is dropped.  This makes pair counting exactly reproducible,
merge-associative, and invariant under bin refinement.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import Pol, orthogonal
from .montecarlo import EventStream, ProtocolKind

MAP_BIN_S = 10e-12
MAP_SPAN_S = 2e-9
LIFETIME_BIN_S = 10e-12
CW_BIN_S = 100e-12

_PAIR_CHUNK = 200_000


@dataclass
class Histogram1D:
    """Binned counts with per-bin errors.

    `counts` is integer for raw histograms and float after plateau
    normalization; errors always propagate in quadrature.
    """

    bin_edges: np.ndarray
    counts: np.ndarray
    errors: np.ndarray
    is_empty: bool = False

    def __post_init__(self):
        self.bin_edges = np.asarray(self.bin_edges, dtype=float)
        if self.bin_edges.ndim != 1 or self.bin_edges.size < 2:
            raise ValueError("need at least one bin")
        if not np.all(np.diff(self.bin_edges) > 0):
            raise ValueError("bin edges must be strictly increasing")
        self.counts = np.asarray(self.counts)
        self.errors = np.asarray(self.errors, dtype=float)
        if self.counts.shape != (self.bin_edges.size - 1,) or \
                self.errors.shape != self.counts.shape:
            raise ValueError("counts/errors must match the bin count")
        if np.any(np.asarray(self.counts, dtype=float) < 0):
            raise ValueError("counts must be >= 0")

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.bin_edges[:-1] + self.bin_edges[1:])

    @property
    def total(self):
        return self.counts.sum()

    def __add__(self, other: "Histogram1D") -> "Histogram1D":
        if not np.array_equal(self.bin_edges, other.bin_edges):
            raise ValueError("histograms have different binning")
        return Histogram1D(self.bin_edges, self.counts + other.counts,
                           np.sqrt(self.errors ** 2 + other.errors ** 2),
                           self.is_empty and other.is_empty)

    def scaled(self, factor: float) -> "Histogram1D":
        return Histogram1D(self.bin_edges, self.counts * factor,
                           self.errors * factor, self.is_empty)


@dataclass
class DocpTrace:
    """Degree of circular polarization per time bin with binomial errors.

    Bins without any counts are flagged invalid and carry NaN values
    rather than zeros.
    """

    times: np.ndarray
    values: np.ndarray
    errors: np.ndarray
    n_total: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        ok = self.valid
        if np.any(np.abs(self.values[ok]) > 1.0 + 1e-12):
            raise ValueError("|DOCP| must not exceed 1")


@dataclass
class Map2D:
    """Two-photon coincidence map over (t1, t2) within-shot times."""

    t1_edges: np.ndarray
    t2_edges: np.ndarray
    counts: np.ndarray
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.counts.shape != (self.t1_edges.size - 1,
                                 self.t2_edges.size - 1):
            raise ValueError("counts matrix does not match the bin grid")

    @property
    def t1_centers(self) -> np.ndarray:
        return 0.5 * (self.t1_edges[:-1] + self.t1_edges[1:])

    @property
    def t2_centers(self) -> np.ndarray:
        return 0.5 * (self.t2_edges[:-1] + self.t2_edges[1:])

    def marginal_t2(self) -> Histogram1D:
        counts = self.counts.sum(axis=0)
        return Histogram1D(self.t2_edges, counts, np.sqrt(counts))


def _bin_values(values: np.ndarray, edges: np.ndarray) -> np.ndarray:
    idx = np.searchsorted(edges, values, side="right") - 1
    ok = (idx >= 0) & (idx < edges.size - 1)
    return np.bincount(idx[ok], minlength=edges.size - 1).astype(np.int64)


def _window_edges(window_s: float, bin_s: float) -> np.ndarray:
    if bin_s <= 0:
        raise ValueError("bin width must be > 0")
    if window_s < bin_s:
        raise ValueError("window must cover at least one bin")
    half = int(round(window_s / bin_s))
    return bin_s * np.arange(-half, half + 1)


def _pair_deltas_binned(t0: np.ndarray, t1: np.ndarray,
                        edges: np.ndarray) -> np.ndarray:
    """Counts of t1-t0 over all pairs within the edge span, chunked."""
    counts = np.zeros(edges.size - 1, dtype=np.int64)
    lo_all = np.searchsorted(t1, t0 + edges[0], side="left")
    hi_all = np.searchsorted(t1, t0 + edges[-1], side="right")
    n_pairs = hi_all - lo_all
    start = 0
    while start < t0.size:
        stop = start
        budget = 0
        while stop < t0.size and budget < _PAIR_CHUNK:
            budget += n_pairs[stop]
            stop += 1
        lo, hi = lo_all[start:stop], hi_all[start:stop]
        m = hi - lo
        total = int(m.sum())
        if total:
            # flat indices of each [lo_i, hi_i) run
            offs = np.arange(total) - np.repeat(np.cumsum(m) - m, m)
            j = np.repeat(lo, m) + offs
            d = t1[j] - np.repeat(t0[start:stop], m)
            counts += _bin_values(d, edges)
        start = stop
    return counts


def correlate_cw(stream: EventStream, pairing: str, window_s: float,
                 bin_s: float = CW_BIN_S, normalize: bool = False,
                 start_stop: bool = False) -> Histogram1D:
    """Cross-correlate the two detection channels of a cw run.

    `pairing` follows the excitation/detection naming: "RR" correlates
    the R-projected clicks of both channels, "RL" the L-projected ones.
    All channel-0 x channel-1 pairs within +/-window enter the histogram
    (or, with start_stop, only each channel-0 click's next channel-1
    click).  `normalize` rescales to the plateau level estimated from
    the outer quarter of the window.
    """
    pairing = pairing.upper()
    if pairing not in ("RR", "RL"):
        raise ValueError("pairing must be 'RR' or 'RL'")
    proj = Pol.R if pairing == "RR" else Pol.L
    if stream.config.kind is ProtocolKind.CW_G2 and \
            window_s > stream.config.segment_length_s:
        raise ValueError("window exceeds the segment length")
    edges = _window_edges(window_s, bin_s)
    t0 = np.sort(stream.times(channel=0, projection=proj))
    t1 = np.sort(stream.times(channel=1, projection=proj))
    if t0.size == 0 or t1.size == 0:
        z = np.zeros(edges.size - 1, dtype=np.int64)
        return Histogram1D(edges, z, np.sqrt(z), is_empty=True)
    if start_stop:
        nxt = np.searchsorted(t1, t0, side="right")
        ok = nxt < t1.size
        counts = _bin_values(t1[nxt[ok]] - t0[ok], edges)
    else:
        counts = _pair_deltas_binned(t0, t1, edges)
    hist = Histogram1D(edges, counts, np.sqrt(counts))
    if normalize:
        centers = hist.centers
        outer = np.abs(centers) >= 0.75 * window_s
        plateau = hist.counts[outer].mean()
        if plateau <= 0:
            raise ValueError("cannot normalize: empty plateau")
        hist = hist.scaled(1.0 / plateau)
    return hist


def docp(h_rr: Histogram1D, h_rl: Histogram1D) -> DocpTrace:
    """Per-bin (RR - RL) / (RR + RL) with binomial errors."""
    if not np.array_equal(h_rr.bin_edges, h_rl.bin_edges):
        raise ValueError("histograms have different binning")
    a = np.asarray(h_rr.counts, dtype=float)
    b = np.asarray(h_rl.counts, dtype=float)
    n = a + b
    valid = n > 0
    values = np.full(a.shape, np.nan)
    errors = np.full(a.shape, np.nan)
    values[valid] = (a[valid] - b[valid]) / n[valid]
    errors[valid] = np.sqrt((1.0 - values[valid] ** 2) / n[valid])
    return DocpTrace(h_rr.centers, values, errors, n, valid)


def bin_lifetime(stream: EventStream, bin_s: float = LIFETIME_BIN_S,
                 span_s: float | None = None, channel=None,
                 projection=None) -> Histogram1D:
    """Histogram of within-shot detection times."""
    rep = stream.config.rep_period_s
    if span_s is None:
        span_s = min(rep, 10.0 * stream.device.t1_s)
    edges = bin_s * np.arange(0, int(round(span_s / bin_s)) + 1)
    mask = np.ones(len(stream), dtype=bool)
    if channel is not None:
        mask &= stream.events["channel"] == int(channel)
    if projection is not None:
        mask &= stream.events["projection"] == int(Pol(projection))
    ev = stream.events[mask]
    t_rel = ev["time"] - ev["shot"] * rep
    counts = _bin_values(t_rel, edges)
    return Histogram1D(edges, counts, np.sqrt(counts),
                       is_empty=(ev.shape[0] == 0))


def lifetime_docp_trace(stream: EventStream, bin_s: float = LIFETIME_BIN_S,
                        span_s: float | None = None) -> DocpTrace:
    """Co/cross circular contrast of a lifetime stream versus decay time."""
    exc = stream.config.exc_pols[0]
    h_co = bin_lifetime(stream, bin_s, span_s, projection=exc)
    h_cross = bin_lifetime(stream, bin_s, span_s, projection=orthogonal(exc))
    return docp(h_co, h_cross)


def build_map2d(stream: EventStream, t1_edges=None, t2_edges=None,
                ch2_projection=None) -> Map2D:
    """Correlate photon-1 (channel 0) and photon-2 (channel 1) times.

    t1 is the channel-0 click time after pulse 1, t2 the channel-1 click
    time after pulse 2.  Shots with anything other than exactly one
    click per channel are dropped and tallied.  `ch2_projection`
    restricts channel-1 clicks to one projection label first, which is
    how the per-polarization maps are built.
    """
    if stream.config.kind is not ProtocolKind.PULSED_2PC:
        raise ValueError("two-photon maps need a pulsed_2pc stream")
    rep = stream.config.rep_period_s
    delay = stream.config.pulse_delay_s
    if t1_edges is None:
        t1_edges = MAP_BIN_S * np.arange(0, int(round(MAP_SPAN_S / MAP_BIN_S)) + 1)
    if t2_edges is None:
        t2_edges = MAP_BIN_S * np.arange(0, int(round(MAP_SPAN_S / MAP_BIN_S)) + 1)
    t1_edges = np.asarray(t1_edges, dtype=float)
    t2_edges = np.asarray(t2_edges, dtype=float)

    ev = stream.events
    n_shots = stream.config.n_shots
    m0 = ev["channel"] == 0
    m1 = ev["channel"] == 1
    if ch2_projection is not None:
        m1 &= ev["projection"] == int(Pol(ch2_projection))
    c0 = np.bincount(ev["shot"][m0], minlength=n_shots)
    c1 = np.bincount(ev["shot"][m1], minlength=n_shots)
    used = (c0 == 1) & (c1 == 1)
    keep0 = m0 & used[ev["shot"]]
    keep1 = m1 & used[ev["shot"]]
    # events are shot-sorted, so the kept clicks align shot by shot
    t1 = ev["time"][keep0] - ev["shot"][keep0] * rep
    t2 = ev["time"][keep1] - ev["shot"][keep1] * rep - delay

    k1 = np.searchsorted(t1_edges, t1, side="right") - 1
    k2 = np.searchsorted(t2_edges, t2, side="right") - 1
    n1, n2 = t1_edges.size - 1, t2_edges.size - 1
    ok = (k1 >= 0) & (k1 < n1) & (k2 >= 0) & (k2 < n2)
    flat = np.bincount(k1[ok] * n2 + k2[ok], minlength=n1 * n2)
    counts = flat.reshape(n1, n2).astype(np.int64)
    diag = {
        "shots_used": int(np.count_nonzero(used)),
        "shots_dropped": int(n_shots - np.count_nonzero(used)),
        "pairs_in_range": int(np.count_nonzero(ok)),
    }
    return Map2D(t1_edges, t2_edges, counts, diag)


def slice_map(map2d: Map2D, t1_fixed: float,
              tolerance_s: float | None = None) -> Histogram1D:
    """Marginalize rows with |t1 - t1_fixed| <= tolerance down to t2."""
    widths = np.diff(map2d.t1_edges)
    if tolerance_s is None:
        tolerance_s = float(widths.max())
    rows = np.abs(map2d.t1_centers - t1_fixed) <= tolerance_s * (1 + 1e-9)
    if not rows.any():
        raise ValueError("no map rows inside the slice tolerance")
    counts = map2d.counts[rows].sum(axis=0)
    return Histogram1D(map2d.t2_edges, counts, np.sqrt(counts),
                       is_empty=(counts.sum() == 0))


def _fmt(x) -> str:
    return x if isinstance(x, str) else f"{x:.9g}"


def _write_csv(path, header_lines, column_names, rows):
    with open(path, "w") as f:
        for line in header_lines:
            f.write(f"# {line}\n")
        f.write(",".join(column_names) + "\n")
        for row in rows:
            f.write(",".join(_fmt(x) for x in row) + "\n")


def write_histogram_csv(path, hist: Histogram1D, meta: dict | None = None):
    header = [f"{k} = {v}" for k, v in (meta or {}).items()]
    rows = zip(hist.centers, hist.counts, hist.errors)
    _write_csv(path, header, ("bin_center_s", "counts", "error"), rows)


def write_docp_csv(path, trace: DocpTrace, meta: dict | None = None):
    header = [f"{k} = {v}" for k, v in (meta or {}).items()]
    rows = ((t, v, e, n) for t, v, e, n, ok in
            zip(trace.times, trace.values, trace.errors, trace.n_total,
                trace.valid) if ok)
    _write_csv(path, header, ("time_s", "docp", "error", "n_total"), rows)


def write_map_csv(path, map2d: Map2D, meta: dict | None = None):
    header = [f"{k} = {v}" for k, v in (meta or {}).items()]

    def rows():
        for i, t1 in enumerate(map2d.t1_centers):
            for j, t2 in enumerate(map2d.t2_centers):
                yield (t1, t2, map2d.counts[i, j])

    _write_csv(path, header, ("t1_s", "t2_s", "counts"), rows())
