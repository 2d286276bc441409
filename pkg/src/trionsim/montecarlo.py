"""Stochastic experiment engine producing time-tagged detection events.

Four protocols share one event wire format: pulsed lifetime traces,
cw polarization-resolved autocorrelation, pulsed two-photon heralding,
and the zero-field circular-memory measurement.

Spin bookkeeping uses the Bloch z component with the convention
z = +1 for the spin-down states (hole |dn> and trion |Tdn>), i.e. the
states addressed by and emitting R light.  Precession about the in-plane
field rotates (b_y, b_z); from an eigenstate (0, 0, z0) after angle th
the components are b_y = -z0 sin(th), b_z = z0 cos(th).

Determinism: work is cut into fixed-size batches and every batch draws
from its own counter-based stream keyed by (seed, protocol, batch index).
Batch boundaries depend only on n_shots, so the merged event stream is
bit-identical for any worker count.  Shots (and cw segments) are
statistically independent of each other.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from hashlib import sha256

import numpy as np

from .core import CIRCULAR, DeviceParams, Pol, jones_vector, orthogonal
from .rng import substream

EVENT_DTYPE = np.dtype([
    ("shot", "<u4"),
    ("channel", "u1"),
    ("projection", "u1"),
    ("time", "<f8"),
])

LIFETIME_BATCH = 65536
PULSED_BATCH = 65536
CW_SEGMENT_BATCH = 8192

# Quasi-static jitter redraw interval for cw runs.  One draw per shot is
# used for the pulsed protocols.
CW_REDRAW_WINDOW_S = 100e-9

# |<b|a>|^2 for all label pairs, indexed by the Pol wire codes.
_PROJ = np.array([[abs(np.vdot(jones_vector(Pol(b)), jones_vector(Pol(a)))) ** 2
                   for b in range(6)] for a in range(6)])
_PROJ.setflags(write=False)

_LINEAR = (Pol.H, Pol.V, Pol.D, Pol.A)


class ProtocolKind(str, Enum):
    LIFETIME = "lifetime"
    CW_G2 = "cw_g2"
    PULSED_2PC = "pulsed_2pc"
    DOCP_ZERO_FIELD = "docp_zero_field"


def _as_pol_tuple(pols) -> tuple:
    return tuple(Pol(p) if not isinstance(p, str) else Pol[p.strip().upper()]
                 for p in pols)


@dataclass(frozen=True)
class ProtocolConfig:
    """Protocol selection plus every knob the engines read.

    `exc_pols` holds one entry per excitation pulse (two for the
    two-photon protocol).  `det_pols` holds one tuple per detection
    channel: a single label is a lossy projector (non-passing photons are
    dropped), an orthogonal pair is a polarizing splitter recording every
    photon with its outcome label.  Photons route uniformly over the
    channels.  For cw runs `n_shots` counts independent segments of
    `segment_length_s` live time each.
    """

    kind: ProtocolKind
    n_shots: int
    rng_seed: int
    exc_pols: tuple = (Pol.R,)
    det_pols: tuple = ((Pol.R, Pol.L),)
    rep_period_s: float = 12.5e-9
    pulse_delay_s: float | None = None
    pump_rate_hz: float | None = None
    segment_length_s: float = 20e-6
    detection_efficiency: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "kind", ProtocolKind(self.kind))
        object.__setattr__(self, "exc_pols", _as_pol_tuple(self.exc_pols))
        object.__setattr__(self, "det_pols",
                           tuple(_as_pol_tuple(ch) for ch in self.det_pols))
        if not (isinstance(self.n_shots, int) and 0 < self.n_shots < 2 ** 32):
            raise ValueError("n_shots must be a positive integer below 2^32")
        if not isinstance(self.rng_seed, int) or self.rng_seed < 0:
            raise ValueError("rng_seed must be a non-negative integer")
        if not (0.0 < self.detection_efficiency <= 1.0):
            raise ValueError("detection_efficiency must lie in (0, 1]")
        if not self.det_pols:
            raise ValueError("at least one detection channel is required")
        for ch in self.det_pols:
            if len(ch) == 2:
                if ch[1] is not orthogonal(ch[0]):
                    raise ValueError("two-label channels must be an orthogonal pair")
            elif len(ch) != 1:
                raise ValueError("each channel takes 1 or 2 polarization labels")
        if self.rep_period_s <= 0.0:
            raise ValueError("rep_period_s must be > 0")
        kind = self.kind
        if kind in (ProtocolKind.LIFETIME, ProtocolKind.DOCP_ZERO_FIELD):
            if len(self.exc_pols) != 1 or self.exc_pols[0] not in CIRCULAR:
                raise ValueError(f"{kind.value} takes one circular excitation")
        elif kind is ProtocolKind.CW_G2:
            if len(self.exc_pols) != 1 or self.exc_pols[0] not in CIRCULAR:
                raise ValueError("cw_g2 takes one circular pump polarization")
            if not (self.pump_rate_hz and self.pump_rate_hz > 0.0):
                raise ValueError("cw_g2 requires pump_rate_hz > 0")
            if self.segment_length_s <= 0.0:
                raise ValueError("segment_length_s must be > 0")
            if len(self.det_pols) != 2:
                raise ValueError("cw_g2 needs exactly 2 detection channels")
        else:
            if len(self.exc_pols) != 2:
                raise ValueError("pulsed_2pc takes exactly 2 excitation pulses")
            if self.exc_pols[0] not in CIRCULAR:
                raise ValueError("pulse 1 must be circular")
            if self.exc_pols[1] not in _LINEAR:
                raise ValueError("pulse 2 must be a linear polarization")
            if len(self.det_pols) != 2:
                raise ValueError("pulsed_2pc needs exactly 2 detection channels")
            if self.pulse_delay_s is None or not (0.0 < self.pulse_delay_s):
                raise ValueError("pulsed_2pc requires pulse_delay_s > 0")
            if self.pulse_delay_s >= self.rep_period_s:
                raise ValueError("pulse_delay_s must be below rep_period_s")

    @classmethod
    def lifetime(cls, n_shots, rng_seed, exc_pol=Pol.R,
                 det_pols=((Pol.R, Pol.L),), rep_period_s=12.5e-9,
                 detection_efficiency=1.0):
        return cls(ProtocolKind.LIFETIME, n_shots, rng_seed, (exc_pol,),
                   det_pols, rep_period_s,
                   detection_efficiency=detection_efficiency)

    @classmethod
    def docp_zero_field(cls, n_shots, rng_seed, exc_pol=Pol.R,
                        det_pols=((Pol.R, Pol.L),), rep_period_s=12.5e-9,
                        detection_efficiency=1.0):
        return cls(ProtocolKind.DOCP_ZERO_FIELD, n_shots, rng_seed, (exc_pol,),
                   det_pols, rep_period_s,
                   detection_efficiency=detection_efficiency)

    @classmethod
    def cw(cls, n_segments, rng_seed, pump_rate_hz, exc_pol=Pol.R,
           det_pols=((Pol.R, Pol.L), (Pol.R, Pol.L)), segment_length_s=20e-6,
           detection_efficiency=1.0):
        return cls(ProtocolKind.CW_G2, n_segments, rng_seed, (exc_pol,),
                   det_pols, pump_rate_hz=pump_rate_hz,
                   segment_length_s=segment_length_s,
                   detection_efficiency=detection_efficiency)

    @classmethod
    def pulsed(cls, n_shots, rng_seed, pulse_delay_s,
               exc_pols=(Pol.R, Pol.H), det_pols=((Pol.R,), (Pol.R, Pol.L)),
               rep_period_s=12.5e-9, detection_efficiency=1.0):
        return cls(ProtocolKind.PULSED_2PC, n_shots, rng_seed, exc_pols,
                   det_pols, rep_period_s, pulse_delay_s=pulse_delay_s,
                   detection_efficiency=detection_efficiency)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "n_shots": self.n_shots,
            "rng_seed": self.rng_seed,
            "exc_pols": [p.name for p in self.exc_pols],
            "det_pols": [[p.name for p in ch] for ch in self.det_pols],
            "rep_period_s": self.rep_period_s,
            "pulse_delay_s": self.pulse_delay_s,
            "pump_rate_hz": self.pump_rate_hz,
            "segment_length_s": self.segment_length_s,
            "detection_efficiency": self.detection_efficiency,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ProtocolConfig":
        return cls(
            kind=ProtocolKind(d["kind"]),
            n_shots=int(d["n_shots"]),
            rng_seed=int(d["rng_seed"]),
            exc_pols=_as_pol_tuple(d["exc_pols"]),
            det_pols=tuple(_as_pol_tuple(ch) for ch in d["det_pols"]),
            rep_period_s=float(d["rep_period_s"]),
            pulse_delay_s=(None if d.get("pulse_delay_s") is None
                           else float(d["pulse_delay_s"])),
            pump_rate_hz=(None if d.get("pump_rate_hz") is None
                          else float(d["pump_rate_hz"])),
            segment_length_s=float(d["segment_length_s"]),
            detection_efficiency=float(d["detection_efficiency"]),
        )


@dataclass
class EventStream:
    """Sorted detection events plus the configuration that produced them."""

    events: np.ndarray
    device: DeviceParams
    config: ProtocolConfig
    diagnostics: dict = field(default_factory=dict)

    def __len__(self):
        return self.events.shape[0]

    @property
    def content_digest(self) -> str:
        return sha256(self.events.tobytes()).hexdigest()

    def times(self, channel=None, projection=None) -> np.ndarray:
        """Time tags filtered by channel and/or projection label."""
        mask = np.ones(len(self), dtype=bool)
        if channel is not None:
            mask &= self.events["channel"] == int(channel)
        if projection is not None:
            mask &= self.events["projection"] == int(Pol(projection))
        return self.events["time"][mask]


def _make_events(shots, channels, projections, times) -> np.ndarray:
    out = np.empty(shots.shape[0], dtype=EVENT_DTYPE)
    out["shot"] = shots
    out["channel"] = channels
    out["projection"] = projections
    out["time"] = times
    return out


def _detect(photon_codes, rng, det_pols, efficiency):
    """Route photons over channels and sample the recorded projection.

    Returns (channel, projection, recorded) arrays.  The rng consumption
    pattern depends only on the configuration, never on the data.
    """
    n = photon_codes.shape[0]
    nch = len(det_pols)
    if nch > 1:
        ch = rng.integers(0, nch, n, dtype=np.uint8)
    else:
        ch = np.zeros(n, dtype=np.uint8)
    u = rng.random(n)
    keep = np.ones(n, dtype=bool)
    proj = np.zeros(n, dtype=np.uint8)
    for c, pols in enumerate(det_pols):
        m = ch == c
        if len(pols) == 2:
            p_first = _PROJ[photon_codes[m], int(pols[0])]
            proj[m] = np.where(u[m] < p_first, int(pols[0]), int(pols[1]))
        else:
            keep[m] = u[m] < _PROJ[photon_codes[m], int(pols[0])]
            proj[m] = int(pols[0])
    if efficiency < 1.0:
        keep &= rng.random(n) < efficiency
    return ch, proj, keep


def _exc_sign(pol: Pol) -> float:
    # R addresses |dn> -> |Tdn| (z = +1), L the opposite branch.
    return 1.0 if pol is Pol.R else -1.0


def _lifetime_batch(device, config, batch_index, start_shot, n):
    """Independent excite-and-decay shots (lifetime and zero-field DOCP)."""
    rng = substream(config.rng_seed, config.kind.value, batch_index)
    s_exc = _exc_sign(config.exc_pols[0])
    # depolarizing preparation: correct trion eigenstate with (1+p)/2
    correct = rng.random(n) < 0.5 * (1.0 + device.p_mem)
    z_t0 = s_exc * np.where(correct, 1.0, -1.0)
    tau = rng.exponential(device.t1_s, n)
    if device.noise.affects_excited:
        df = device.noise.sample(rng, n)
    else:
        df = 0.0
    z_t = z_t0 * np.cos(2.0 * math.pi * (device.f_e_hz + df) * tau)
    is_r = rng.random(n) < 0.5 * (1.0 + z_t)
    codes = np.where(is_r, int(Pol.R), int(Pol.L)).astype(np.uint8)
    ch, proj, keep = _detect(codes, rng, config.det_pols,
                             config.detection_efficiency)
    shots = (start_shot + np.arange(n, dtype=np.int64)).astype(np.uint32)
    times = shots * config.rep_period_s + tau
    events = _make_events(shots[keep], ch[keep], proj[keep], times[keep])
    return events, {"n_shots": n, "n_emitted": n}


def _pulsed_batch(device, config, batch_index, start_shot, n,
                  collect_state=False):
    """Two-pulse heralding shots.

    Pulse 1 is spin-selective circular: it excites only the addressed
    hole eigenstate, through the depolarizing preparation channel.  The
    first photon's circular label heralds the post-emission hole state
    exactly.  Pulse 2 coherently lifts the (possibly precessed) hole
    Bloch vector to the trion doublet with probability p_mem and does
    nothing otherwise.  Unexcited shots keep precessing and can still
    yield a (useless) photon 2; the map analysis drops them.

    With collect_state=True the diagnostics carry per-shot internals for
    white-box tests.
    """
    rng = substream(config.rng_seed, config.kind.value, batch_index)
    p = device.p_mem
    f_e, f_h = device.f_e_hz, device.f_h_hz
    dt = config.pulse_delay_s
    s1 = _exc_sign(config.exc_pols[0])

    z0 = np.where(rng.random(n) < 0.5, 1.0, -1.0)
    correct = rng.random(n) < 0.5 * (1.0 + p)
    tau1 = rng.exponential(device.t1_s, n)
    df_e1 = device.noise.sample(rng, n) if device.noise.affects_excited else 0.0
    df_h = device.noise.sample(rng, n) if device.noise.affects_ground else 0.0
    u_b1 = rng.random(n)
    u_s2 = rng.random(n)
    tau2 = rng.exponential(device.t1_s, n)
    df_e2 = device.noise.sample(rng, n) if device.noise.affects_excited else 0.0
    u_b2 = rng.random(n)

    addressed = z0 == s1
    z_t1 = z0 * np.where(correct, 1.0, -1.0) \
        * np.cos(2.0 * math.pi * (f_e + df_e1) * tau1)
    is_r1 = u_b1 < 0.5 * (1.0 + z_t1)
    z_h = np.where(is_r1, 1.0, -1.0)

    # ground-state Bloch vector at the arrival of pulse 2
    th_exc = 2.0 * math.pi * (f_h + df_h) * (dt - tau1)
    th_unexc = 2.0 * math.pi * (f_h + df_h) * dt
    b_y = np.where(addressed, -z_h * np.sin(th_exc), -z0 * np.sin(th_unexc))
    b_z = np.where(addressed, z_h * np.cos(th_exc), z0 * np.cos(th_unexc))
    in_ground = ~addressed | (tau1 < dt)
    success2 = in_ground & (u_s2 < p)

    th2 = 2.0 * math.pi * (f_e + df_e2) * tau2
    b_z_t = b_z * np.cos(th2) + b_y * np.sin(th2)
    is_r2 = u_b2 < 0.5 * (1.0 + b_z_t)

    code1 = np.where(is_r1, int(Pol.R), int(Pol.L)).astype(np.uint8)
    code2 = np.where(is_r2, int(Pol.R), int(Pol.L)).astype(np.uint8)
    ch1, proj1, keep1 = _detect(code1, rng, config.det_pols,
                                config.detection_efficiency)
    ch2, proj2, keep2 = _detect(code2, rng, config.det_pols,
                                config.detection_efficiency)
    keep1 &= addressed
    keep2 &= success2

    shots = (start_shot + np.arange(n, dtype=np.int64)).astype(np.uint32)
    t0 = shots * config.rep_period_s
    events = np.concatenate([
        _make_events(shots[keep1], ch1[keep1], proj1[keep1],
                     (t0 + tau1)[keep1]),
        _make_events(shots[keep2], ch2[keep2], proj2[keep2],
                     (t0 + dt + tau2)[keep2]),
    ])
    diag = {"n_shots": n, "n_emitted": int(np.count_nonzero(addressed))
            + int(np.count_nonzero(success2))}
    if collect_state:
        diag["state"] = {
            "photon1_exists": addressed,
            "photon1_channel": ch1,
            "photon1_projection": proj1,
            "photon1_recorded": keep1,
            "hole_z_after_emission": z_h,
            "pulse2_success": success2,
        }
    return events, diag


def _cw_batch(device, config, batch_index, start_seg, n):
    """Lockstep continuous-excitation segments.

    Poisson excitation attempts at pump_rate succeed with probability
    p_mem * (population of the addressed hole state); a success puts the
    trion exactly on the addressed branch and the emission after an
    exponential decay delay collapses the hole to the branch eigenstate.
    The branch itself is sampled from the time-averaged trion precession
    1/(1+(2 pi f_e T1)^2), not from the per-trajectory decay phase:
    conditioning the branch on the decay delay would lag the RR and RL
    oscillations by different amounts and pull their phase gap off pi.
    Between events the hole phase accumulates f_h plus the
    piecewise-constant jitter of its redraw window.  Segments are spaced
    two segment lengths apart so cross-segment pairs cannot fall inside
    any correlation window up to one segment length.
    """
    rng = substream(config.rng_seed, config.kind.value, batch_index)
    p = device.p_mem
    f_e, f_h = device.f_e_hz, device.f_h_hz
    seg_len = config.segment_length_s
    pump = config.pump_rate_hz
    s_addr = _exc_sign(config.exc_pols[0])
    win = CW_REDRAW_WINDOW_S
    n_win = int(math.ceil(seg_len / win)) + 1
    ground_noise = device.noise.affects_ground
    excited_noise = device.noise.affects_excited
    rows = np.arange(n)

    if ground_noise:
        delta = device.noise.sample(rng, (n, n_win))
        cum = np.concatenate(
            [np.zeros((n, 1)), np.cumsum(delta * win, axis=1)], axis=1)

        def noise_phase(t):
            k = np.clip((t / win).astype(np.int64), 0, n_win - 1)
            return 2.0 * math.pi * (cum[rows, k] + delta[rows, k] * (t - k * win))
    else:
        def noise_phase(t):
            return 0.0

    t_clock = np.zeros(n)
    t_reset = np.zeros(n)
    ph_reset = np.zeros(n)
    s = np.where(rng.random(n) < 0.5, 1.0, -1.0)
    active = np.ones(n, dtype=bool)

    ev_shot, ev_code, ev_time = [], [], []
    attempts = 0
    emissions = 0
    guard = int(3.0 * seg_len * pump + 10.0 * math.sqrt(seg_len * pump) + 200)
    for _ in range(guard):
        if not active.any():
            break
        t_att = t_clock + rng.exponential(1.0 / pump, n)
        active &= t_att < seg_len
        ph_att = noise_phase(t_att)
        theta = 2.0 * math.pi * f_h * (t_att - t_reset) + (ph_att - ph_reset)
        b_z = s * np.cos(theta)
        u1 = rng.random(n)
        success = active & (u1 < p * 0.5 * (1.0 + s_addr * b_z))
        tau = rng.exponential(device.t1_s, n)
        df_e = device.noise.sample(rng, n) if excited_noise else 0.0
        omega_t1 = 2.0 * math.pi * (f_e + df_e) * device.t1_s
        c_bar = 1.0 / (1.0 + omega_t1 ** 2)
        is_r = rng.random(n) < 0.5 * (1.0 + s_addr * c_bar)
        t_em = t_att + tau
        emit = success & (t_em < seg_len)
        idx = np.flatnonzero(emit)
        if idx.size:
            ev_shot.append(idx.astype(np.uint32))
            ev_code.append(np.where(is_r[idx], int(Pol.R),
                                    int(Pol.L)).astype(np.uint8))
            ev_time.append(t_em[idx])
            emissions += idx.size
        attempts += int(np.count_nonzero(active))
        # a success consumes the hole until the emission re-creates it
        t_clock = np.where(success, t_em, np.where(active, t_att, t_clock))
        t_reset = np.where(success, t_em, t_reset)
        if ground_noise:
            ph_em = noise_phase(t_em)
            ph_reset = np.where(success, ph_em, ph_reset)
        s = np.where(success, np.where(is_r, 1.0, -1.0), s)
    else:
        raise RuntimeError("cw segment loop exceeded its iteration guard")

    if ev_shot:
        seg_idx = np.concatenate(ev_shot)
        codes = np.concatenate(ev_code)
        t_in_seg = np.concatenate(ev_time)
    else:
        seg_idx = np.zeros(0, dtype=np.uint32)
        codes = np.zeros(0, dtype=np.uint8)
        t_in_seg = np.zeros(0)
    ch, proj, keep = _detect(codes, rng, config.det_pols,
                             config.detection_efficiency)
    shots = (start_seg + seg_idx.astype(np.int64)).astype(np.uint32)
    stride = 2.0 * seg_len
    times = shots * stride + t_in_seg
    events = _make_events(shots[keep], ch[keep], proj[keep], times[keep])
    return events, {"n_shots": n, "n_attempts": attempts,
                    "n_emitted": emissions}


def _run_batch(task):
    device, config, batch_index, start, count = task
    if config.kind in (ProtocolKind.LIFETIME, ProtocolKind.DOCP_ZERO_FIELD):
        return _lifetime_batch(device, config, batch_index, start, count)
    if config.kind is ProtocolKind.PULSED_2PC:
        return _pulsed_batch(device, config, batch_index, start, count)
    return _cw_batch(device, config, batch_index, start, count)


def _batch_size(kind: ProtocolKind) -> int:
    return CW_SEGMENT_BATCH if kind is ProtocolKind.CW_G2 else LIFETIME_BATCH


def resolve_workers(workers=None) -> int:
    """Worker count with the TRIONSIM_WORKERS environment override."""
    if workers is None:
        env = os.environ.get("TRIONSIM_WORKERS", "").strip()
        workers = int(env) if env else 1
    if workers < 1:
        raise ValueError("worker count must be >= 1")
    return workers


def run(device: DeviceParams, config: ProtocolConfig, workers=None) -> EventStream:
    """Simulate one protocol and return the merged, time-ordered stream."""
    size = _batch_size(config.kind)
    tasks = [(device, config, b, b * size, min(size, config.n_shots - b * size))
             for b in range((config.n_shots + size - 1) // size)]
    workers = resolve_workers(workers)
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(tasks))) as pool:
            results = list(pool.map(_run_batch, tasks, chunksize=1))
    else:
        results = [_run_batch(t) for t in tasks]

    events = np.concatenate([ev for ev, _ in results]) if results else \
        np.empty(0, dtype=EVENT_DTYPE)
    if events.shape[0]:
        order = np.lexsort((events["time"], events["shot"]))
        events = events[order]
    diagnostics: dict = {}
    for _, diag in results:
        for key, val in diag.items():
            if isinstance(val, (int, np.integer)):
                diagnostics[key] = diagnostics.get(key, 0) + int(val)
    diagnostics["n_events"] = int(events.shape[0])
    if config.kind is ProtocolKind.CW_G2:
        diagnostics["live_time_s"] = config.n_shots * config.segment_length_s
    return EventStream(events, device, config, diagnostics)
