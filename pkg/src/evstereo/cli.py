"""Command-line pipeline driver.

Subcommands: ``run`` (preprocess -> simulate -> ground truth -> metrics),
``synth`` (write stimulus fixtures), ``topology`` (build, check, export),
``eval`` (metrics over existing spike/trace files).

Exit codes: 0 ok, 1 runtime failure, 2 config/input error. Artifact files
are written to a temp name and renamed, so each is fully written or absent.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from .config import ConfigError, RunConfig, config_to_dict, load_config
from .events import LEFT, RIGHT, StereoEventStream, merge_streams, parse_event_file, write_event_file
from .groundtruth import (
    disparity_trajectory,
    project_markers,
    read_calibration_json,
    read_marker_csv,
    read_trace_csv,
    to_downscaled_coords,
    write_trace_csv,
)
from .metrics import build_report, write_com_csv
from .preprocess import preprocess_pipeline_resolved
from .simulator import (
    SpikeRecord,
    instantaneous_rates,
    read_spike_csv,
    simulate,
    window_centers_us,
    window_count,
    write_spike_csv,
)
from .synth import gen_stimulus, validate_profile_bounds
from .topology import (
    HardwareLimits,
    Population,
    Topology,
    build_topology,
    check_hardware_constraints,
    largest_feasible_d_max,
)


def _atomic_write(path: str, text: str) -> None:
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _build_topology(cfg: RunConfig) -> Topology:
    t = cfg.topology
    return build_topology(
        t.retina_width,
        t.retina_height,
        t.d_max,
        t.weights,
        polarity_mode=t.polarity_mode,
        continuity_radius=t.continuity_radius,
    )


def _load_file_stream(cfg: RunConfig) -> StereoEventStream:
    inp = cfg.input
    if inp.events is not None:
        return parse_event_file(inp.events, cfg.full_geometry)
    left = parse_event_file(inp.left_events, cfg.full_geometry, side=LEFT)
    right = parse_event_file(inp.right_events, cfg.full_geometry, side=RIGHT)
    return merge_streams(left, right)


def _file_ground_truth(cfg: RunConfig, n_windows: int, origin: tuple[int, int], t_offset: int):
    tracks3d = read_marker_csv(cfg.input.markers)
    if t_offset:
        for tr in tracks3d:
            tr.t = tr.t - t_offset  # markers share the recording clock
    p_left, p_right = read_calibration_json(cfg.input.calibration)
    factor = cfg.preprocess.downscale_factor if cfg.preprocess_enabled else 1
    size = (cfg.topology.retina_width, cfg.topology.retina_height)
    left2d = [
        to_downscaled_coords(tr, factor, origin, size)
        for tr in project_markers(tracks3d, p_left, cfg.full_geometry)
    ]
    right2d = [
        to_downscaled_coords(tr, factor, origin, size)
        for tr in project_markers(tracks3d, p_right, cfg.full_geometry)
    ]
    return disparity_trajectory(left2d, right2d, cfg.analysis.window_us, n_windows)


def _write_rates_csv(record: SpikeRecord, topology: Topology, window_us: int, n_windows: int, path: str) -> None:
    """Long-format rate export (nonzero entries only): one row per
    (window, neuron) with activity."""
    centers = window_centers_us(n_windows, window_us)
    rows = ["window_i,t_center_us,population,neuron_id,rate_hz"]
    for pop in (Population.COINC_EXC, Population.COINC_INH, Population.DISPARITY):
        rates = instantaneous_rates(record, window_us, pop, topology, n_windows)
        nz_rows, nz_cols = np.nonzero(rates.rates_hz)
        for r, c in zip(nz_rows, nz_cols):
            rows.append(
                f"{c},{centers[c]:.1f},{pop.name},{rates.neuron_ids[r]},{float(rates.rates_hz[r, c])!r}"
            )
    _atomic_write(path, "\n".join(rows) + "\n")


def _write_mean_rates_csv(record: SpikeRecord, topology: Topology, path: str) -> None:
    """Whole-recording mean rate per neuron with its coordinates (feeds the
    per-row rate-map and disparity-histogram plots)."""
    duration_s = record.duration_us * 1e-6 if record.duration_us else 1.0
    counts = np.bincount(record.neuron_ids, minlength=topology.n_neurons) if len(record) else np.zeros(topology.n_neurons, dtype=np.int64)
    rows = ["population,neuron_id,d,x_cyc,y,mean_rate_hz"]
    for pop in (Population.COINC_EXC, Population.COINC_INH, Population.DISPARITY):
        for nid in topology.population_ids(pop):
            _, coord, _ = topology.coord_of(int(nid))
            rate = counts[nid] / duration_s
            rows.append(f"{pop.name},{nid},{coord.d},{coord.x_cyc},{coord.y},{float(rate)!r}")
    _atomic_write(path, "\n".join(rows) + "\n")


def _write_disparity_hist_csv(record: SpikeRecord, topology: Topology, window_us: int, n_windows: int, path: str) -> None:
    """Spike counts binned by encoded disparity per window and population."""
    rows = ["population,window_i,d,count"]
    combined = {"C": (Population.COINC_EXC, Population.COINC_INH), "D": (Population.DISPARITY,)}
    for tag, pops in combined.items():
        mask = record.for_population(*pops)
        if not mask.any():
            continue
        d_n = topology.disparity_of_ids(record.neuron_ids[mask])
        wi = record.times[mask] // window_us
        keys, counts = np.unique(np.stack([wi, d_n]), axis=1, return_counts=True)
        for k in range(keys.shape[1]):
            w, d = int(keys[0, k]), int(keys[1, k])
            if 0 <= w < n_windows:
                rows.append(f"{tag},{w},{d},{counts[k]}")
    _atomic_write(path, "\n".join(rows) + "\n")


def _print_headline(report) -> None:
    print(f"sample: {report.sample_label}")
    print("population |   PCD (eps_d=%g) |   RMSE [px] | est. power [uW]" % report.eps_d)

    def fmt(v, spec):
        return ("%" + spec) % v if v is not None else "       n/a"

    energy = fmt(report.energy_uw, "15.2f")
    print(f"     D     | {fmt(report.pcd_d, '16.4f')} | {fmt(report.rmse_d, '11.4f')} | {energy}")
    print(f"     C     | {fmt(report.pcd_c, '16.4f')} | {fmt(report.rmse_c, '11.4f')} |")


# ---------------------------------------------------------------- commands


def _run_one(config_path: str, overrides: list[str], auto_crop: bool) -> int:
    cfg = load_config(config_path, overrides)
    if auto_crop:
        cfg.preprocess.crop_origin = None
    cfg.validate_for_run()
    out = cfg.output_dir
    os.makedirs(out, exist_ok=True)

    if cfg.input.is_synthetic:
        duration = cfg.input.duration_us
        stream, trace = gen_stimulus(
            cfg.input.synthetic, cfg.topology.geometry, duration, cfg.analysis.window_us
        )
        n_windows = trace.n_windows
    else:
        raw = _load_file_stream(cfg)
        # recordings normalize to start at t = 0; the marker clock shifts too
        t_offset = int(raw.t[0]) if len(raw) else 0
        if t_offset:
            raw = StereoEventStream(
                raw.t - t_offset, raw.x, raw.y, raw.p, raw.side, raw.geometry, _presorted=True
            )
        if cfg.preprocess_enabled:
            stream, origin = preprocess_pipeline_resolved(raw, cfg.preprocess)
        else:
            stream, origin = raw, (0, 0)
        if stream.geometry != cfg.topology.geometry:
            raise ConfigError(
                f"input geometry {stream.geometry} does not match the retina; "
                "enable preprocessing or fix the crop"
            )
        duration = stream.duration
        n_windows = window_count(duration, cfg.analysis.window_us)
        trace = _file_ground_truth(cfg, n_windows, origin, t_offset)

    topology = _build_topology(cfg)
    record = simulate(topology, stream, cfg.simulator, cfg.mismatch, duration_us=duration)
    n_windows = max(n_windows, window_count(record.duration_us, cfg.analysis.window_us))
    if n_windows > trace.n_windows:
        pad = n_windows - trace.n_windows
        for name in ("d_mean", "d_min", "d_max"):
            setattr(trace, name, np.concatenate([getattr(trace, name), np.full(pad, np.nan)]))
        trace.n_joints = np.concatenate([trace.n_joints, np.zeros(pad, dtype=np.int64)])
        trace.per_joint = np.hstack([trace.per_joint, np.full((trace.per_joint.shape[0], pad), np.nan)])

    report = build_report(
        record,
        topology,
        trace,
        cfg.analysis.window_us,
        cfg.analysis.eps_d,
        cfg.energy,
        config=config_to_dict(cfg),
        sample_label=cfg.sample_label,
        pcd_mode=cfg.analysis.pcd_mode,
    )

    write_event_file(stream, os.path.join(out, "input_events.csv"))
    write_spike_csv(record, os.path.join(out, "spikes.csv"))
    _write_rates_csv(record, topology, cfg.analysis.window_us, n_windows, os.path.join(out, "rates.csv"))
    write_trace_csv(trace, os.path.join(out, "disparity_trace.csv"))
    write_com_csv(report, os.path.join(out, "com.csv"))
    _write_mean_rates_csv(record, topology, os.path.join(out, "mean_rates.csv"))
    _write_disparity_hist_csv(
        record, topology, cfg.analysis.window_us, n_windows, os.path.join(out, "disparity_hist.csv")
    )
    report.write_json(os.path.join(out, "metrics.json"))
    _print_headline(report)
    return 0


def _run_one_safe(config_path: str, overrides: list[str], auto_crop: bool) -> int:
    try:
        return _run_one(config_path, overrides, auto_crop)
    except ConfigError as exc:
        print(f"config error (run {config_path}): {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as exc:
        print(f"error (run {config_path}): {exc}", file=sys.stderr)
        return 1


def cmd_run(args: argparse.Namespace) -> int:
    configs: list[str] = args.config
    overrides = args.set or []
    if len(configs) == 1:
        return _run_one(configs[0], overrides, args.auto_crop)
    jobs = max(1, args.jobs)
    if jobs == 1:
        codes = [_run_one_safe(c, overrides, args.auto_crop) for c in configs]
    else:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=jobs) as pool:
            codes = list(pool.map(_run_one_safe, configs, [overrides] * len(configs), [args.auto_crop] * len(configs)))
    return max(codes)


def cmd_synth(args: argparse.Namespace) -> int:
    cfg = load_config(args.config, args.set or [])
    if not cfg.input.is_synthetic:
        raise ConfigError("synth requires an input.synthetic profile")
    if cfg.input.duration_us is None or cfg.input.duration_us <= 0:
        raise ConfigError("synth requires a positive input.duration_us")
    try:
        validate_profile_bounds(cfg.input.synthetic, cfg.topology.geometry, cfg.input.duration_us)
    except ValueError as exc:
        raise ConfigError(f"input.synthetic: {exc}") from None
    out = cfg.output_dir
    os.makedirs(out, exist_ok=True)
    stream, trace = gen_stimulus(
        cfg.input.synthetic, cfg.topology.geometry, cfg.input.duration_us, cfg.analysis.window_us
    )
    left = stream.select(stream.side == LEFT)
    right = stream.select(stream.side == RIGHT)
    write_event_file(left, os.path.join(out, "left.csv"))
    write_event_file(right, os.path.join(out, "right.csv"))
    write_trace_csv(trace, os.path.join(out, "trace.csv"))
    print(f"wrote {len(left)} left / {len(right)} right events and {trace.n_windows} trace windows to {out}")
    return 0


def cmd_topology(args: argparse.Namespace) -> int:
    cfg = load_config(args.config, args.set or [])
    limits = HardwareLimits()
    if args.hardware_budget:
        best = largest_feasible_d_max(cfg.topology.retina_width, cfg.topology.retina_height, limits, cfg.topology.weights)
        if best is None:
            print("no disparity band fits the hardware budget")
            return 1
        print(f"largest feasible d_max under hardware limits: {best}")
        cfg.topology.d_max = best
    topology = _build_topology(cfg)
    report = check_hardware_constraints(topology, limits)
    out = cfg.output_dir
    os.makedirs(out, exist_ok=True)
    topology.write_json(os.path.join(out, "topology.json"))
    for line in report.summary_lines():
        print(line)
    print(f"constraint check: {'pass' if report.passed else 'FAIL (advisory)'}")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    cfg = load_config(args.config, args.set or [])
    topology = _build_topology(cfg)
    if not os.path.exists(args.spikes):
        raise ConfigError(f"spike file not found: {args.spikes}")
    if not os.path.exists(args.trace):
        raise ConfigError(f"trace file not found: {args.trace}")
    trace = read_trace_csv(args.trace)
    if trace.window_us != cfg.analysis.window_us:
        raise ConfigError(
            f"trace window {trace.window_us}us does not match analysis.window_us={cfg.analysis.window_us}"
        )
    duration = trace.n_windows * trace.window_us - 1
    record = read_spike_csv(args.spikes, topology, duration_us=duration)
    # energy needs input/delivery counters that spike CSVs do not carry
    report = build_report(
        record,
        topology,
        trace,
        cfg.analysis.window_us,
        cfg.analysis.eps_d,
        config=config_to_dict(cfg),
        sample_label=cfg.sample_label,
        pcd_mode=cfg.analysis.pcd_mode,
        with_energy=False,
    )
    out = cfg.output_dir
    os.makedirs(out, exist_ok=True)
    report.write_json(os.path.join(out, "metrics.json"))
    write_com_csv(report, os.path.join(out, "com.csv"))
    _print_headline(report)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="evstereo", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-c", "--config", required=True, help="JSON config file")
    common.add_argument(
        "--set", action="append", metavar="SECTION.KEY=VALUE", help="override a config key"
    )

    run = sub.add_parser("run", help="full pipeline: events -> spikes -> metrics")
    run.add_argument(
        "-c", "--config", action="append", required=True,
        help="JSON config file (repeatable; independent runs)",
    )
    run.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override a config key")
    run.add_argument(
        "--auto-crop", action="store_true",
        help="centre the crop on the event centroid of the first second",
    )
    run.add_argument("--jobs", type=int, default=1, help="run multiple configs concurrently")
    sub.add_parser("synth", parents=[common], help="generate stimulus event files + ground truth")
    topo = sub.add_parser("topology", parents=[common], help="build/check/export the network")
    topo.add_argument(
        "--hardware-budget",
        action="store_true",
        help="pick the largest d_max passing the hardware constraint check",
    )
    ev = sub.add_parser("eval", parents=[common], help="metrics over existing spike/trace files")
    ev.add_argument("--spikes", required=True, help="spike CSV from a previous run")
    ev.add_argument("--trace", required=True, help="disparity trace CSV")
    return parser


COMMANDS = {
    "run": cmd_run,
    "synth": cmd_synth,
    "topology": cmd_topology,
    "eval": cmd_eval,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error ({args.command}): {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as exc:
        print(f"error ({args.command}): {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
