"""Named end-to-end presets: simulate, correlate, fit, emit datasets.

Each preset runs a full protocol with the published device parameters,
recovers them back out of the synthetic data, and writes plot-ready CSV
datasets plus a summary table (configured vs recovered vs reference).
`scale` multiplies shot/segment counts for quick smoke runs.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import montecarlo
from .core import (DeviceParams, MU_B_EV_PER_T, NoiseModel, PLANCK_EV_S,
                   Pol, larmor_frequency)
from .correlator import (bin_lifetime, build_map2d, correlate_cw, docp,
                         lifetime_docp_trace, slice_map, write_docp_csv,
                         write_map_csv, _write_csv)
from .fitkit import (fft_frequency, fit_damped_cosine, fit_linear_zeeman,
                     format_fit_report, loglog_trend, window_average)
from .montecarlo import ProtocolConfig
from .rng import derive_seed

# shared device constants used by every preset
T1_S = 300e-12
P_MEM = 0.865
G_E = 2.09

# slice through the two-photon map at one full trion precession period
# (co-polarized probability maximum at 150 mT), +/- one bin
T1_SLICE_S = 228e-12
T1_SLICE_TOL_S = 10e-12
T2_FIT_WINDOW_S = (50e-12, 270e-12)

# pump sweep: nominal laser powers (uW) with their attempt rates; the
# power-to-rate mapping is a modeling choice, only the 20x span matters
POWER_SWEEP = ((0.5, 2e7), (2.0, 8e7), (5.0, 2e8), (10.0, 4e8))
_SWEEP_SEGMENTS = {2e7: 24576, 8e7: 8192, 2e8: 4096, 4e8: 2048}
_SWEEP_WINDOWS = {2e7: 100e-9, 8e7: 60e-9, 2e8: 40e-9, 4e8: 30e-9}

# reference values quoted for the device this model reproduces
REF_G_E = 2.09
REF_P_MEM = 0.865
REF_G_H_CW = 0.35
REF_TAU_CW_S = 16.51e-9
REF_G_H_PULSED = 0.362
REF_T2STAR_S = 15.9e-9
REF_F_PULSED_HZ = 761e6
REF_POWER_TABLE = {  # power_uw -> (amplitude, tau_ns, alpha)
    0.5: (0.7, 16.51, 1.278),
    2.0: (0.9455, 7.148, 0.8878),
    5.0: (0.9576, 3.548, 0.7531),
    10.0: (0.9635, 2.463, 1.078),
}

NAN = float("nan")


@dataclass
class SummaryRow:
    preset: str
    quantity: str
    configured: float
    recovered: float
    sigma: float
    reference: float


@dataclass
class PipelineResult:
    preset: str
    rows: list
    files: list


def _n_of(scale: float, nominal: int, floor: int = 64) -> int:
    return max(int(round(nominal * scale)), floor)


def _device(b_t: float, g_h: float = 0.35, noise: NoiseModel | None = None,
            g_e: float = G_E) -> DeviceParams:
    return DeviceParams(g_e=g_e, g_h=g_h, t1_s=T1_S, p_mem=P_MEM,
                        b_x_t=b_t, noise=noise or NoiseModel.quiet())


def _digest_meta(*streams) -> dict:
    return {"input_digest": "+".join(s.content_digest[:16] for s in streams)}


def run_pipeline(name: str, outdir, seed: int = 20260815, scale: float = 1.0,
                 workers: int | None = None) -> PipelineResult:
    if name not in PRESETS:
        known = ", ".join(sorted(PRESETS))
        raise ValueError(f"unknown preset {name!r} (known: {known})")
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    rows, files = PRESETS[name](outdir, seed, scale, workers)
    summary = outdir / "summary.csv"
    _write_csv(summary, [f"preset = {name}", f"seed = {seed}",
                         f"scale = {scale:.9g}"],
               ("preset", "quantity", "configured", "recovered", "sigma",
                "reference"),
               ((r.preset, r.quantity, r.configured, r.recovered, r.sigma,
                 r.reference) for r in rows))
    files.append(str(summary))
    return PipelineResult(name, rows, files)


def _run_fig1d(outdir, seed, scale, workers):
    device = _device(b_t=0.0)
    config = ProtocolConfig.docp_zero_field(
        n_shots=_n_of(scale, 1_000_000), rng_seed=seed)
    stream = montecarlo.run(device, config, workers=workers)
    co = bin_lifetime(stream, projection=Pol.R)
    cross = bin_lifetime(stream, projection=Pol.L)
    path = outdir / "fig1d_traces.csv"
    meta = _digest_meta(stream)
    _write_csv(path, [f"{k} = {v}" for k, v in meta.items()],
               ("bin_center_s", "co_counts", "co_error", "cross_counts",
                "cross_error"),
               zip(co.centers, co.counts, co.errors, cross.counts,
                   cross.errors))
    n_r, n_l = co.total, cross.total
    memory = (n_r - n_l) / (n_r + n_l)
    sigma = math.sqrt((1.0 - memory ** 2) / (n_r + n_l))
    rows = [SummaryRow("fig1d", "polarization_memory", P_MEM, memory, sigma,
                       REF_P_MEM)]
    return rows, [str(path)]


def _run_fig1f(outdir, seed, scale, workers):
    fields = (0.05, 0.10, 0.15)
    freqs, f_sigmas = [], []
    for i, b_t in enumerate(fields):
        device = _device(b_t=b_t)
        config = ProtocolConfig.lifetime(n_shots=_n_of(scale, 500_000),
                                         rng_seed=derive_seed(seed, "b", i))
        stream = montecarlo.run(device, config, workers=workers)
        trace = lifetime_docp_trace(stream)
        fit = fit_damped_cosine(trace, variant="pulsed",
                                fixed={"t2star": 1.0, "alpha": 1.0})
        freqs.append(fit["frequency"])
        f_sigmas.append(fit.sigmas["frequency"])
    freqs, f_sigmas = np.array(freqs), np.array(f_sigmas)
    de_ev = PLANCK_EV_S * freqs
    zfit = fit_linear_zeeman(np.array(fields), de_ev,
                             errors_ev=PLANCK_EV_S * f_sigmas)
    path = outdir / "fig1f_zeeman.csv"
    _write_csv(path, [],
               ("b_t", "f_hz", "f_sigma_hz", "delta_e_ev"),
               zip(fields, freqs, f_sigmas, de_ev))
    report = outdir / "fig1f_fit_report.txt"
    report.write_text(
        f"linear zeeman fit\ng_e = {zfit.g:.9g} +/- {zfit.sigma_g:.9g}\n"
        f"intercept_ev = {zfit.intercept_ev:.9g}\nsse = {zfit.residual_sse:.9g}\n")
    rows = [SummaryRow("fig1f", "g_e", G_E, zfit.g, zfit.sigma_g, REF_G_E)]
    return rows, [str(path), str(report)]


def _cw_device(b_t: float = 0.0375, g_h: float = REF_G_H_CW,
               t2star_s: float = REF_TAU_CW_S) -> DeviceParams:
    return _device(b_t=b_t, g_h=g_h,
                   noise=NoiseModel.lorentzian_from_t2star(t2star_s))


def _run_cw(device, n_segments, seed, pump_rate_hz, workers):
    config = ProtocolConfig.cw(n_segments=n_segments, rng_seed=seed,
                               pump_rate_hz=pump_rate_hz)
    return montecarlo.run(device, config, workers=workers)


def _cw_histograms(stream, window_s, normalize=False):
    h_rr = correlate_cw(stream, "RR", window_s=window_s, normalize=normalize)
    h_rl = correlate_cw(stream, "RL", window_s=window_s, normalize=normalize)
    return h_rr, h_rl


def _cw_osc_params(stream, window_s) -> dict:
    """Oscillation parameters from the normalized RR and RL fits.

    Emissions between a pair re-synchronize the phase, skewing the RR
    and RL envelopes in opposite directions; the pair mean cancels the
    skew to first order, so tau/f/alpha are reported as pair means.
    """
    fit_rr = fit_damped_cosine(correlate_cw(stream, "RR", window_s=window_s,
                                            normalize=True), variant="cw")
    fit_rl = fit_damped_cosine(correlate_cw(stream, "RL", window_s=window_s,
                                            normalize=True), variant="cw")
    out = {"fit_rr": fit_rr, "fit_rl": fit_rl}
    for name in ("frequency", "t2star", "alpha", "amplitude"):
        out[name] = 0.5 * (fit_rr[name] + fit_rl[name])
        out[name + "_sigma"] = 0.5 * math.hypot(fit_rr.sigmas[name],
                                                fit_rl.sigmas[name])
    out["gap"] = abs(math.remainder(fit_rl["phase"] - fit_rr["phase"],
                                    2.0 * math.pi))
    out["gap_sigma"] = math.hypot(fit_rr.sigmas["phase"],
                                  fit_rl.sigmas["phase"])
    return out


def _run_fig2a(outdir, seed, scale, workers):
    stream = _run_cw(_cw_device(), _n_of(scale, 8192), seed, 1e7, workers)
    h_rr, h_rl = _cw_histograms(stream, 100e-9, normalize=True)
    path = outdir / "fig2a_g2.csv"
    _write_csv(path, [f"{k} = {v}" for k, v in _digest_meta(stream).items()],
               ("delay_s", "g2_rr", "g2_rr_error", "g2_rl", "g2_rl_error"),
               zip(h_rr.centers, h_rr.counts, h_rr.errors, h_rl.counts,
                   h_rl.errors))
    center = np.argmin(np.abs(h_rr.centers))
    dip = float(h_rr.counts[center])
    rows = [SummaryRow("fig2a", "g2_rr_zero_delay", 0.0, dip,
                       float(h_rr.errors[center]), 0.0)]
    return rows, [str(path)]


def _run_fig2b(outdir, seed, scale, workers):
    device = _cw_device()
    stream = _run_cw(device, _n_of(scale, 49152), seed, 1e7, workers)
    trace = docp(*_cw_histograms(stream, 100e-9))
    path = outdir / "fig2b_docp.csv"
    write_docp_csv(path, trace, _digest_meta(stream))
    osc = _cw_osc_params(stream, 100e-9)
    f_hz = osc["frequency"]
    g_h = PLANCK_EV_S * f_hz / (MU_B_EV_PER_T * device.b_x_t)
    g_sigma = (PLANCK_EV_S * osc["frequency_sigma"]
               / (MU_B_EV_PER_T * device.b_x_t))
    report = outdir / "fig2b_fit_report.txt"
    report.write_text(
        format_fit_report(osc["fit_rr"], "cw g2 RR damped cosine",
                          stream.content_digest[:16])
        + format_fit_report(osc["fit_rl"], "cw g2 RL damped cosine",
                            stream.content_digest[:16]))
    rows = [
        SummaryRow("fig2b", "f_hz", larmor_frequency(device.g_h,
                                                     device.b_x_t),
                   f_hz, osc["frequency_sigma"],
                   larmor_frequency(REF_G_H_CW, 0.0375)),
        SummaryRow("fig2b", "g_h", device.g_h, g_h, g_sigma, REF_G_H_CW),
        SummaryRow("fig2b", "tau_s", REF_TAU_CW_S, osc["t2star"],
                   osc["t2star_sigma"], REF_TAU_CW_S),
        SummaryRow("fig2b", "alpha", 1.0, osc["alpha"],
                   osc["alpha_sigma"], 1.278),
        SummaryRow("fig2b", "rr_rl_phase_gap_rad", math.pi, osc["gap"],
                   osc["gap_sigma"], math.pi),
    ]
    return rows, [str(path), str(report)]


def _run_fig2c(outdir, seed, scale, workers):
    fields = (0.025, 0.0375, 0.05, 0.075)
    out_rows = []
    freqs, f_sig, taus = [], [], []
    for i, b_t in enumerate(fields):
        # jitter width grows linearly with field (frequency-proportional
        # nuclear-field spread), pinned to the 37.5 mT reference point
        t2star = REF_TAU_CW_S * 0.0375 / b_t
        device = _cw_device(b_t=b_t, t2star_s=t2star)
        stream = _run_cw(device, _n_of(scale, 16384),
                         derive_seed(seed, "b", i), 1e7, workers)
        osc = _cw_osc_params(stream, 100e-9)
        freqs.append(osc["frequency"])
        f_sig.append(osc["frequency_sigma"])
        taus.append(osc["t2star"])
        out_rows.append((b_t, osc["frequency"], osc["frequency_sigma"],
                         osc["t2star"], osc["t2star_sigma"], osc["alpha"]))
    path = outdir / "fig2c_field_sweep.csv"
    _write_csv(path, [], ("b_t", "f_hz", "f_sigma_hz", "tau_s",
                          "tau_sigma_s", "alpha"), out_rows)
    zfit = fit_linear_zeeman(np.array(fields), PLANCK_EV_S * np.array(freqs),
                             errors_ev=PLANCK_EV_S * np.array(f_sig))
    decreasing = float(all(np.diff(taus) < 0))
    rows = [
        SummaryRow("fig2c", "g_h", REF_G_H_CW, zfit.g, zfit.sigma_g,
                   REF_G_H_CW),
        SummaryRow("fig2c", "tau_decreasing_with_b", 1.0, decreasing, 0.0,
                   1.0),
    ]
    return rows, [str(path)]


def _pump_sweep(outdir, seed, scale, workers):
    """Shared cw power sweep; returns per-power oscillation parameters."""
    device = _cw_device()
    results = []
    for i, (power_uw, pump) in enumerate(POWER_SWEEP):
        n_seg = _n_of(scale, _SWEEP_SEGMENTS[pump])
        stream = _run_cw(device, n_seg, derive_seed(seed, "p", i), pump,
                         workers)
        osc = _cw_osc_params(stream, _SWEEP_WINDOWS[pump])
        results.append((power_uw, pump, osc))
    return results


def _run_fig2d(outdir, seed, scale, workers):
    results = _pump_sweep(outdir, seed, scale, workers)
    taus = [osc["t2star"] for _, _, osc in results]
    pumps = [pump for _, pump, _ in results]
    path = outdir / "fig2d_power.csv"
    _write_csv(path, [],
               ("power_uw", "pump_rate_hz", "amplitude", "tau_s",
                "tau_sigma_s", "alpha"),
               ((p, r, o["amplitude"], o["t2star"], o["t2star_sigma"],
                 o["alpha"]) for p, r, o in results))
    slope, _ = loglog_trend(pumps, taus)
    rows = [SummaryRow("fig2d", "tau_strictly_decreasing", 1.0,
                       float(all(np.diff(taus) < 0)), 0.0, 1.0),
            SummaryRow("fig2d", "tau_vs_pump_loglog_slope", NAN, slope, 0.0,
                       NAN)]
    for (power_uw, _, osc), tau in zip(results, taus):
        rows.append(SummaryRow("fig2d", f"tau_s_at_{power_uw:g}uw", NAN,
                               tau, osc["t2star_sigma"],
                               REF_POWER_TABLE[power_uw][1] * 1e-9))
    return rows, [str(path)]


def _run_table_s1(outdir, seed, scale, workers):
    results = _pump_sweep(outdir, seed, scale, workers)
    path = outdir / "table_s1.csv"
    _write_csv(path, [],
               ("power_uw", "pump_rate_hz", "amplitude", "tau_ns", "alpha"),
               ((p, r, o["amplitude"], o["t2star"] * 1e9, o["alpha"])
                for p, r, o in results))
    rows = []
    for power_uw, _, osc in results:
        ref_a, ref_tau, ref_alpha = REF_POWER_TABLE[power_uw]
        rows.extend([
            SummaryRow("table_s1", f"amplitude_at_{power_uw:g}uw", NAN,
                       osc["amplitude"], osc["amplitude_sigma"], ref_a),
            SummaryRow("table_s1", f"tau_ns_at_{power_uw:g}uw", NAN,
                       osc["t2star"] * 1e9, osc["t2star_sigma"] * 1e9,
                       ref_tau),
            SummaryRow("table_s1", f"alpha_at_{power_uw:g}uw", NAN,
                       osc["alpha"], osc["alpha_sigma"], ref_alpha),
        ])
    return rows, [str(path)]


def _pulsed_device() -> DeviceParams:
    return _device(b_t=0.15, g_h=REF_G_H_PULSED,
                   noise=NoiseModel.lorentzian_from_t2star(REF_T2STAR_S))


def _pulsed_maps(device, n_shots, seed, pulse_delay_s, workers):
    config = ProtocolConfig.pulsed(n_shots=n_shots, rng_seed=seed,
                                   pulse_delay_s=pulse_delay_s)
    stream = montecarlo.run(device, config, workers=workers)
    map_r = build_map2d(stream, ch2_projection=Pol.R)
    map_l = build_map2d(stream, ch2_projection=Pol.L)
    return stream, map_r, map_l


def _slice_docp(map_r, map_l):
    slice_r = slice_map(map_r, T1_SLICE_S, T1_SLICE_TOL_S)
    slice_l = slice_map(map_l, T1_SLICE_S, T1_SLICE_TOL_S)
    return docp(slice_r, slice_l)


def _run_fig3b(outdir, seed, scale, workers):
    device = _pulsed_device()
    stream, map_r, map_l = _pulsed_maps(device, _n_of(scale, 2_400_000),
                                        seed, 1.6e-9, workers)
    meta = _digest_meta(stream)
    path_r = outdir / "fig3b_map.csv"
    path_l = outdir / "fig3b_map_rl.csv"
    write_map_csv(path_r, map_r, meta)
    write_map_csv(path_l, map_l, meta)
    trace = _slice_docp(map_r, map_l)
    fit = fit_damped_cosine(trace, variant="pulsed",
                            fixed={"t2star": 1.0, "alpha": 1.0})
    f_e = larmor_frequency(device.g_e, device.b_x_t)
    rows = [SummaryRow("fig3b", "f_e_hz", f_e, fit["frequency"],
                       fit.sigmas["frequency"], f_e)]
    return rows, [str(path_r), str(path_l)]


def _run_fig3c(outdir, seed, scale, workers):
    device = _pulsed_device()
    delays = (3.1e-9, 3.75e-9)
    phases, sigmas, out = [], [], []
    for i, dt in enumerate(delays):
        stream, map_r, map_l = _pulsed_maps(
            device, _n_of(scale, 1_200_000), derive_seed(seed, "dt", i), dt,
            workers)
        trace = _slice_docp(map_r, map_l)
        fit = fit_damped_cosine(trace, variant="pulsed",
                                fixed={"t2star": 1.0, "alpha": 1.0})
        phases.append(fit["phase"])
        sigmas.append(fit.sigmas["phase"])
        for t, v, e, n, ok in zip(trace.times, trace.values, trace.errors,
                                  trace.n_total, trace.valid):
            if ok:
                out.append((dt, t, v, e, n))
    path = outdir / "fig3c_docp_vs_t2.csv"
    _write_csv(path, [], ("pulse_delay_s", "t2_s", "docp", "error",
                          "n_total"), out)
    f_h = larmor_frequency(device.g_h, device.b_x_t)
    configured = 2.0 * math.pi * f_h * (delays[1] - delays[0])
    configured = abs(math.remainder(configured, 2.0 * math.pi))
    shift = abs(math.remainder(phases[0] - phases[1], 2.0 * math.pi))
    rows = [SummaryRow("fig3c", "phase_shift_rad", configured, shift,
                       math.hypot(*sigmas), configured)]
    return rows, [str(path)]


def delay_sweep_grid() -> np.ndarray:
    return np.round(np.arange(0.6e-9, 10.5e-9 + 1e-13, 0.3e-9), 12)


def heralded_sweep(device, delays, n_shots, seed, workers=None):
    """Per-delay sliced DOCP series, keyed by readout-time bin."""
    per_delay = []
    pairs = []
    for i, dt in enumerate(delays):
        _, map_r, map_l = _pulsed_maps(device, n_shots,
                                       derive_seed(seed, "dt", i), float(dt),
                                       workers)
        per_delay.append(_slice_docp(map_r, map_l))
        pairs.append(map_r.diagnostics["shots_used"])
    return per_delay, pairs


def fit_heralded_sweep(delays, traces, t2_window_s=T2_FIT_WINDOW_S):
    """Per-t2-bin damped-cosine fits across the delay axis."""
    delays = np.asarray(delays, dtype=float)
    t2 = traces[0].times
    lo, hi = t2_window_s
    fits = []
    for j in np.nonzero((t2 >= lo) & (t2 <= hi))[0]:
        vals = np.array([tr.values[j] for tr in traces])
        errs = np.array([tr.errors[j] for tr in traces])
        ok = np.array([tr.valid[j] for tr in traces])
        if ok.sum() < 32:
            continue
        try:
            fit = fit_damped_cosine((delays[ok], vals[ok], errs[ok]),
                                    variant="pulsed", t0=T1_SLICE_S,
                                    fixed={"alpha": 1.0, "offset": 0.0})
        except ValueError:
            continue
        if fit.converged:
            fits.append((float(t2[j]), fit))
    if not fits:
        raise RuntimeError("no per-bin fits converged in the delay sweep")
    return fits


def _run_fig3d(outdir, seed, scale, workers):
    device = _pulsed_device()
    delays = delay_sweep_grid()
    traces, pairs = heralded_sweep(device, delays,
                                   _n_of(scale, 2_400_000), seed, workers)
    rows_out = []
    for dt, tr in zip(delays, traces):
        for t, v, e, n, ok in zip(tr.times, tr.values, tr.errors,
                                  tr.n_total, tr.valid):
            if ok and T2_FIT_WINDOW_S[0] <= t <= T2_FIT_WINDOW_S[1]:
                rows_out.append((dt, t, v, e, n))
    path = outdir / "fig3d_docp_vs_delay.csv"
    _write_csv(path, [f"min_heralded_pairs = {min(pairs)}"],
               ("pulse_delay_s", "t2_s", "docp", "error", "n_total"),
               rows_out)
    fits = fit_heralded_sweep(delays, traces)
    t2_centers = [t for t, _ in fits]
    f_avg = window_average(t2_centers, [f["frequency"] for _, f in fits],
                           T2_FIT_WINDOW_S)
    tau_avg = window_average(t2_centers, [f["t2star"] for _, f in fits],
                             T2_FIT_WINDOW_S)
    fit_path = outdir / "fig3d_fits.csv"
    _write_csv(fit_path, [],
               ("t2_s", "f_hz", "f_sigma_hz", "t2star_s", "t2star_sigma_s"),
               ((t, f["frequency"], f.sigmas["frequency"], f["t2star"],
                 f.sigmas["t2star"]) for t, f in fits))
    f_h = larmor_frequency(device.g_h, device.b_x_t)
    rows = [
        SummaryRow("fig3d", "f_hz", f_h, f_avg.mean, f_avg.sigma,
                   REF_F_PULSED_HZ),
        SummaryRow("fig3d", "t2star_s", REF_T2STAR_S, tau_avg.mean,
                   tau_avg.sigma, REF_T2STAR_S),
        SummaryRow("fig3d", "min_heralded_pairs", NAN, float(min(pairs)),
                   0.0, 1e5),
    ]
    return rows, [str(path), str(fit_path)]


def _run_figs6(outdir, seed, scale, workers):
    stream = _run_cw(_cw_device(), _n_of(scale, 8192), seed, 1e7, workers)
    trace = docp(*_cw_histograms(stream, 100e-9))
    est = fft_frequency(trace)
    path = outdir / "figs6_fft.csv"
    _write_csv(path, [f"{k} = {v}" for k, v in _digest_meta(stream).items()],
               ("frequency_hz", "magnitude"),
               zip(est.freqs_hz, est.magnitude))
    f_ref = larmor_frequency(REF_G_H_CW, 0.0375)
    rows = [SummaryRow("figs6", "fft_peak_hz", f_ref, est.frequency_hz,
                       est.sigma_hz, f_ref)]
    return rows, [str(path)]


PRESETS = {
    "fig1d": _run_fig1d,
    "fig1f": _run_fig1f,
    "fig2a": _run_fig2a,
    "fig2b": _run_fig2b,
    "fig2c": _run_fig2c,
    "fig2d": _run_fig2d,
    "table_s1": _run_table_s1,
    "fig3b": _run_fig3b,
    "fig3c": _run_fig3c,
    "fig3d": _run_fig3d,
    "figs6": _run_figs6,
}
