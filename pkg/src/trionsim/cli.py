"""Command-line entry point.

Exit codes are a stable contract: 0 success, 2 invalid configuration
(with a field-path diagnostic), 3 I/O failure, 4 numerical
non-convergence.  Worker count comes from --workers or TRIONSIM_WORKERS.
"""
from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import montecarlo
from .core import Pol, orthogonal
from .correlator import (build_map2d, correlate_cw, docp, bin_lifetime,
                         lifetime_docp_trace, slice_map, write_docp_csv,
                         write_map_csv, _write_csv)
from .events_io import ensure_compatible, read_events, write_events
from .fitkit import (fit_damped_cosine, fit_linear_zeeman,
                     format_fit_report, window_average)
from .montecarlo import ProtocolKind
from .pipelines import (PRESETS, T1_SLICE_S, T1_SLICE_TOL_S,
                        T2_FIT_WINDOW_S, fit_heralded_sweep, run_pipeline)
from .scenarios import AnalysisOptions, ConfigError, load_scenario

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NOCONV = 4


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="trionsim",
        description="Four-level trion spin simulator and analysis chain")
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="run a scenario, write events")
    p_sim.add_argument("scenario", help="scenario JSON file")
    p_sim.add_argument("-o", "--outdir", default=None)
    p_sim.add_argument("--seed", type=int, default=None,
                       help="override the scenario seed")
    p_sim.add_argument("--workers", type=int, default=None)
    p_sim.add_argument("--format", choices=("binary", "csv"), default=None)
    p_sim.set_defaults(func=cmd_simulate)

    p_ana = sub.add_parser("analyze", help="event files to CSV datasets")
    p_ana.add_argument("events", nargs="+", help="event stream file(s)")
    p_ana.add_argument("-o", "--outdir", default=".")
    p_ana.add_argument("--scenario", default=None,
                       help="scenario JSON supplying analysis options")
    p_ana.set_defaults(func=cmd_analyze)

    p_fit = sub.add_parser("fit", help="damped-cosine fit of a trace CSV")
    p_fit.add_argument("trace", help="CSV with time, value[, error] columns")
    p_fit.add_argument("--variant", choices=("pulsed", "cw"),
                       default="pulsed")
    p_fit.add_argument("--t0", type=float, default=0.0)
    p_fit.add_argument("--exclusion-window", type=float, default=None)
    p_fit.add_argument("--fixed", action="append", default=[],
                       metavar="NAME=VALUE")
    p_fit.add_argument("-o", "--report", default=None)
    p_fit.set_defaults(func=cmd_fit)

    p_pipe = sub.add_parser("pipeline", help="run a named figure preset")
    p_pipe.add_argument("preset", help=", ".join(sorted(PRESETS)))
    p_pipe.add_argument("-o", "--outdir", default=".")
    p_pipe.add_argument("--seed", type=int, default=20260815)
    p_pipe.add_argument("--scale", type=float, default=1.0)
    p_pipe.add_argument("--workers", type=int, default=None)
    p_pipe.set_defaults(func=cmd_pipeline)

    p_zee = sub.add_parser("zeeman",
                           help="g-factors from four-line energies vs field")
    p_zee.add_argument("table", help="CSV: b_t, e1..e4 line energies (eV)")
    p_zee.add_argument("--through-origin", action="store_true")
    p_zee.add_argument("-o", "--report", default=None)
    p_zee.set_defaults(func=cmd_zeeman)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except RuntimeError as exc:
        print(f"did not converge: {exc}", file=sys.stderr)
        return EXIT_NOCONV
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


def cmd_simulate(args) -> int:
    scenario = load_scenario(args.scenario)
    if args.seed is not None:
        scenario.protocol = replace(scenario.protocol, rng_seed=args.seed)
    outdir = Path(args.outdir or scenario.outputs.directory)
    outdir.mkdir(parents=True, exist_ok=True)
    fmt = args.format or scenario.outputs.format
    ext = "bin" if fmt == "binary" else "csv"
    for label, protocol in scenario.expand():
        stream = montecarlo.run(scenario.device, protocol,
                                workers=args.workers)
        suffix = f"_{label}" if label else ""
        path = outdir / f"{scenario.outputs.prefix}events{suffix}.{ext}"
        write_events(path, stream, fmt)
        print(f"wrote {path} ({len(stream)} events, "
              f"digest {stream.content_digest[:16]})")
    return EXIT_OK


def _load_streams(paths):
    streams = []
    for path in paths:
        try:
            streams.append(read_events(path))
        except ValueError as exc:
            raise OSError(str(exc)) from exc
    return streams


def cmd_analyze(args) -> int:
    streams = _load_streams(args.events)
    try:
        ensure_compatible(streams)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    opts = (load_scenario(args.scenario).analysis if args.scenario
            else AnalysisOptions())
    outdir = Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    kind = streams[0].config.kind
    if kind in (ProtocolKind.LIFETIME, ProtocolKind.DOCP_ZERO_FIELD):
        if len(streams) != 1:
            raise ConfigError("lifetime analysis takes exactly one file")
        return _analyze_lifetime(streams[0], opts, outdir)
    if kind is ProtocolKind.CW_G2:
        if len(streams) != 1:
            raise ConfigError("cw analysis takes exactly one file")
        return _analyze_cw(streams[0], opts, outdir)
    return _analyze_pulsed(streams, opts, outdir)


def _meta(stream) -> dict:
    return {"input_digest": stream.content_digest[:16]}


def _emit_report(path, fit, title, digest) -> int:
    text = format_fit_report(fit, title, digest)
    path.write_text(text)
    print(text, end="")
    print(f"wrote {path}")
    return EXIT_OK if fit.converged else EXIT_NOCONV


def _analyze_lifetime(stream, opts, outdir) -> int:
    kwargs = {}
    if opts.bin_s:
        kwargs["bin_s"] = opts.bin_s
    if opts.span_s:
        kwargs["span_s"] = opts.span_s
    co = bin_lifetime(stream, projection=stream.config.exc_pols[0],
                      **kwargs)
    cross = bin_lifetime(
        stream, projection=orthogonal(stream.config.exc_pols[0]), **kwargs)
    path = outdir / "fig1d_traces.csv"
    _write_csv(path, [f"{k} = {v}" for k, v in _meta(stream).items()],
               ("bin_center_s", "co_counts", "co_error", "cross_counts",
                "cross_error"),
               zip(co.centers, co.counts, co.errors, cross.counts,
                   cross.errors))
    trace = lifetime_docp_trace(stream, **kwargs)
    docp_path = outdir / "lifetime_docp.csv"
    write_docp_csv(docp_path, trace, _meta(stream))
    print(f"wrote {path}")
    print(f"wrote {docp_path}")
    if not (opts.fit.enabled and stream.device.b_x_t > 0):
        return EXIT_OK
    fixed = {"t2star": 1.0, "alpha": 1.0}
    fixed.update(opts.fit.fixed)
    fit = fit_damped_cosine(trace, variant=opts.fit.variant or "pulsed",
                            t0=opts.fit.t0, fixed=fixed)
    return _emit_report(outdir / "lifetime_fit_report.txt", fit,
                        "lifetime docp damped cosine",
                        stream.content_digest[:16])


def _analyze_cw(stream, opts, outdir) -> int:
    window = opts.window_s or 100e-9
    kwargs = {"window_s": window}
    if opts.bin_s:
        kwargs["bin_s"] = opts.bin_s
    hists = {p: correlate_cw(stream, p, normalize=opts.normalize,
                             start_stop=opts.start_stop, **kwargs)
             for p in ("RR", "RL")}
    path = outdir / "cw_g2.csv"
    _write_csv(path, [f"{k} = {v}" for k, v in _meta(stream).items()],
               ("delay_s", "g2_rr", "g2_rr_error", "g2_rl", "g2_rl_error"),
               zip(hists["RR"].centers, hists["RR"].counts,
                   hists["RR"].errors, hists["RL"].counts,
                   hists["RL"].errors))
    print(f"wrote {path}")
    raw = {p: correlate_cw(stream, p, **kwargs) for p in ("RR", "RL")}
    trace = docp(raw["RR"], raw["RL"])
    docp_path = outdir / "fig2b_docp.csv"
    write_docp_csv(docp_path, trace, _meta(stream))
    print(f"wrote {docp_path}")
    if not opts.fit.enabled:
        return EXIT_OK
    fit = fit_damped_cosine(trace, variant=opts.fit.variant or "cw",
                            t0=opts.fit.t0,
                            exclusion_window_s=opts.fit.exclusion_window_s,
                            fixed=opts.fit.fixed)
    return _emit_report(outdir / "fig2b_fit_report.txt", fit,
                        "cw docp damped cosine", stream.content_digest[:16])


def _analyze_pulsed(streams, opts, outdir) -> int:
    t1_slice = opts.t1_slice_s or T1_SLICE_S
    tol = opts.slice_tolerance_s or T1_SLICE_TOL_S
    window = opts.t2_fit_window_s or T2_FIT_WINDOW_S
    traces, delays, digests = [], [], []
    maps = None
    for stream in streams:
        map_r = build_map2d(stream, ch2_projection=Pol.R)
        map_l = build_map2d(stream, ch2_projection=Pol.L)
        maps = (map_r, map_l)
        traces.append(docp(slice_map(map_r, t1_slice, tol),
                           slice_map(map_l, t1_slice, tol)))
        delays.append(stream.config.pulse_delay_s)
        digests.append(stream.content_digest[:16])
    if len(streams) == 1:
        meta = _meta(streams[0])
        path = outdir / "fig3b_map.csv"
        write_map_csv(path, maps[0], meta)
        write_map_csv(outdir / "fig3b_map_rl.csv", maps[1], meta)
        slice_path = outdir / "fig3b_slice_docp.csv"
        write_docp_csv(slice_path, traces[0], meta)
        print(f"wrote {path}")
        print(f"wrote {slice_path}")
        if not opts.fit.enabled:
            return EXIT_OK
        fixed = {"t2star": 1.0, "alpha": 1.0}
        fixed.update(opts.fit.fixed)
        fit = fit_damped_cosine(traces[0],
                                variant=opts.fit.variant or "pulsed",
                                t0=opts.fit.t0, fixed=fixed)
        return _emit_report(outdir / "fig3b_fit_report.txt", fit,
                            "map slice damped cosine", digests[0])
    order = np.argsort(delays)
    delays = np.asarray(delays, dtype=float)[order]
    traces = [traces[i] for i in order]
    rows = []
    for dt, tr in zip(delays, traces):
        for t, v, e, n, ok in zip(tr.times, tr.values, tr.errors,
                                  tr.n_total, tr.valid):
            if ok and window[0] <= t <= window[1]:
                rows.append((dt, t, v, e, n))
    path = outdir / "fig3d_docp_vs_delay.csv"
    _write_csv(path, [f"input_digest = {'+'.join(digests)}"],
               ("pulse_delay_s", "t2_s", "docp", "error", "n_total"), rows)
    print(f"wrote {path}")
    fits = fit_heralded_sweep(delays, traces, window)
    t2s = [t for t, _ in fits]
    f_avg = window_average(t2s, [f["frequency"] for _, f in fits], window)
    tau_avg = window_average(t2s, [f["t2star"] for _, f in fits], window)
    fit_path = outdir / "fig3d_fits.csv"
    _write_csv(fit_path, [],
               ("t2_s", "f_hz", "f_sigma_hz", "t2star_s", "t2star_sigma_s"),
               ((t, f["frequency"], f.sigmas["frequency"], f["t2star"],
                 f.sigmas["t2star"]) for t, f in fits))
    report = (f"delay sweep window average over t2 in "
              f"[{window[0]:.3g}, {window[1]:.3g}] s\n"
              f"f_hz = {f_avg.mean:.9g} +/- {f_avg.sigma:.9g}\n"
              f"t2star_s = {tau_avg.mean:.9g} +/- {tau_avg.sigma:.9g}\n"
              f"n_bins = {f_avg.n}\n")
    report_path = outdir / "fig3d_fit_report.txt"
    report_path.write_text(report)
    print(report, end="")
    print(f"wrote {fit_path}")
    print(f"wrote {report_path}")
    return EXIT_OK


def _read_trace_csv(path):
    cols = None
    data = []
    with open(path, "r") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split(",")
            if cols is None and any(not _is_float(p) for p in parts):
                cols = parts
                continue
            data.append([float(p) for p in parts])
    if not data:
        raise OSError(f"{path}: no data rows")
    table = np.asarray(data)
    if table.shape[1] < 2:
        raise OSError(f"{path}: need at least two columns")
    sigma = table[:, 2] if table.shape[1] > 2 else None
    return table[:, 0], table[:, 1], sigma


def _is_float(text: str) -> bool:
    try:
        float(text)
        return True
    except ValueError:
        return False


def cmd_fit(args) -> int:
    t, y, sigma = _read_trace_csv(args.trace)
    fixed = {}
    for item in args.fixed:
        name, _, value = item.partition("=")
        if not value:
            raise ConfigError(f"--fixed {item!r}: expected NAME=VALUE")
        fixed[name.strip()] = float(value)
    trace = (t, y, sigma) if sigma is not None else (t, y)
    fit = fit_damped_cosine(trace, variant=args.variant, t0=args.t0,
                            exclusion_window_s=args.exclusion_window,
                            fixed=fixed)
    text = format_fit_report(fit, f"{args.variant} damped cosine",
                             str(args.trace))
    print(text, end="")
    if args.report:
        Path(args.report).write_text(text)
        print(f"wrote {args.report}")
    return EXIT_OK if fit.converged else EXIT_NOCONV


def cmd_pipeline(args) -> int:
    result = run_pipeline(args.preset, args.outdir, seed=args.seed,
                          scale=args.scale, workers=args.workers)
    widths = (10, 28, 14, 14, 12, 14)
    header = ("preset", "quantity", "configured", "recovered", "sigma",
              "reference")
    print("  ".join(h.ljust(w) for h, w in zip(header, widths)))
    for r in result.rows:
        cells = (r.preset, r.quantity, f"{r.configured:.6g}",
                 f"{r.recovered:.6g}", f"{r.sigma:.6g}",
                 f"{r.reference:.6g}")
        print("  ".join(c.ljust(w) for c, w in zip(cells, widths)))
    for path in result.files:
        print(f"wrote {path}")
    return EXIT_OK


def cmd_zeeman(args) -> int:
    with open(args.table, "r") as fh:
        rows = []
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split(",")
            if all(_is_float(p) for p in parts):
                rows.append([float(p) for p in parts])
    table = np.asarray(rows)
    if table.ndim != 2 or table.shape[1] != 5:
        raise ConfigError("zeeman table must have columns b_t, e1..e4")
    b_t = table[:, 0]
    energies = np.sort(table[:, 1:], axis=1)
    outer = energies[:, 3] - energies[:, 0]
    inner = energies[:, 2] - energies[:, 1]
    de_big = 0.5 * (outer + inner)
    de_small = 0.5 * (outer - inner)
    fit_e = fit_linear_zeeman(b_t, de_big, through_origin=args.through_origin)
    fit_h = fit_linear_zeeman(b_t, de_small,
                              through_origin=args.through_origin)
    text = ("four-line zeeman fit (larger splitting -> excited doublet)\n"
            f"g_e = {fit_e.g:.9g} +/- {fit_e.sigma_g:.9g}\n"
            f"g_h = {fit_h.g:.9g} +/- {fit_h.sigma_g:.9g}\n")
    print(text, end="")
    if args.report:
        Path(args.report).write_text(text)
        print(f"wrote {args.report}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
