"""Batch front end: build the benchmark, analyze, tune, simulate, report.

Every command reads a JSON configuration, writes its artifacts into an
output directory with write-then-rename semantics, and finishes by writing
a run manifest.  All angles in files are radians; arcseconds appear only
in rendered report text.  Exit codes: 0 ok, 2 configuration error,
3 model error, 4 analysis error, 5 infeasible design.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
import tempfile
import time

import numpy as np

from . import __version__
from .errors import (AnalysisError, ConfigError, DimensionError,
                     FlexsatError, IllPosedError, InfeasibleDesignError,
                     LabelError, ModelError, NotDetectableError,
                     NumericalError, UnstableError)
from .linsys import SignalTrace, is_stable, simulate
from .loscontrol import (ARCSEC, SIM_DIST_IN, SIM_NOISE_IN, ControllerDesign,
                         LosKinematics, WeightSet, fsm_channels,
                         fsm_control_law, generalized_family,
                         kalman_los_observer, los_closed_loop, pma_channels,
                         pma_control_law, tune_structured, zero_controller)
from .spacecraft import (EXTERNAL_IN, EXTERNAL_OUT, HarmonicSpec,
                         NoiseSpec, ParameterPoint, assemble_benchmark,
                         rw_harmonic_signal, sample_grid, transmissibility)

_EXIT_CONFIG, _EXIT_MODEL, _EXIT_ANALYSIS, _EXIT_INFEASIBLE = 2, 3, 4, 5

_MODEL_ERRORS = (ModelError, IllPosedError, UnstableError, DimensionError,
                 NotDetectableError, NumericalError)


# ---------------------------------------------------------------------------
# output plumbing

def _write_atomic(path: str, text: str) -> None:
    """Write-then-rename so a failed run never leaves a truncated file."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".part")
    try:
        with os.fdopen(fd, "w") as handle:
            handle.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


@dataclasses.dataclass
class RunManifest:
    """Record of one command invocation, written atomically at run end."""

    config: str
    command: str
    seed: int
    out_dir: str
    version: str = __version__
    wall_clock_s: float = 0.0
    steps: list = dataclasses.field(default_factory=list)

    def record(self, name: str, status: str) -> None:
        self.steps.append({"step": name, "status": status})

    def write(self) -> None:
        _write_atomic(os.path.join(self.out_dir, "manifest.json"),
                      json.dumps(dataclasses.asdict(self), indent=1,
                                 sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# SVG rendering (plain polylines, no plotting dependency)

_SVG_W, _SVG_H, _SVG_M = 800, 520, 60
_SVG_COLORS = ("#1f6fb2", "#c23b22", "#2e8540", "#8055a5", "#b8860b",
               "#127a87", "#784212", "#5d6d7e")


def _svg_plot(curves, overlays=(), log_x=True, log_y=True,
              xlabel="", ylabel="", title="") -> str:
    """Render labeled curves as an SVG polyline chart.

    ``curves`` is a list of ``(label, x, y)``; ``overlays`` draws dashed
    horizontal guide lines as ``(label, level)``.
    """
    def tx(v):
        return np.log10(np.maximum(v, 1e-300)) if log_x else np.asarray(v)

    def ty(v):
        return np.log10(np.maximum(v, 1e-300)) if log_y else np.asarray(v)

    xs = np.concatenate([tx(x) for _, x, _ in curves])
    ys = [ty(y) for _, _, y in curves]
    ys.extend(np.atleast_1d(ty(lvl)) for _, lvl in overlays)
    ys = np.concatenate(ys)
    x_lo, x_hi = float(xs.min()), float(xs.max())
    y_lo, y_hi = float(ys.min()), float(ys.max())
    x_hi += (x_hi == x_lo)
    y_hi += (y_hi == y_lo)

    def px(v):
        return _SVG_M + (v - x_lo) / (x_hi - x_lo) * (_SVG_W - 2 * _SVG_M)

    def py(v):
        return _SVG_H - _SVG_M - (v - y_lo) / (y_hi - y_lo) \
            * (_SVG_H - 2 * _SVG_M)

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{_SVG_W}" '
             f'height="{_SVG_H}" font-family="monospace" font-size="11">',
             f'<rect width="{_SVG_W}" height="{_SVG_H}" fill="white"/>',
             f'<text x="{_SVG_W // 2}" y="20" text-anchor="middle">'
             f'{title}</text>',
             f'<text x="{_SVG_W // 2}" y="{_SVG_H - 12}" '
             f'text-anchor="middle">{xlabel}</text>',
             f'<text x="14" y="{_SVG_H // 2}" text-anchor="middle" '
             f'transform="rotate(-90 14 {_SVG_H // 2})">{ylabel}</text>',
             f'<rect x="{_SVG_M}" y="{_SVG_M}" width="{_SVG_W - 2 * _SVG_M}"'
             f' height="{_SVG_H - 2 * _SVG_M}" fill="none" stroke="black"/>']
    ticks_x = np.arange(np.ceil(x_lo), np.floor(x_hi) + 0.5) if log_x \
        else np.linspace(x_lo, x_hi, 6)
    ticks_y = np.arange(np.ceil(y_lo), np.floor(y_hi) + 0.5) if log_y \
        else np.linspace(y_lo, y_hi, 6)
    for t in ticks_x:
        lbl = f"1e{int(t)}" if log_x else f"{t:.3g}"
        parts.append(f'<line x1="{px(t):.1f}" y1="{_SVG_M}" '
                     f'x2="{px(t):.1f}" y2="{_SVG_H - _SVG_M}" '
                     f'stroke="#dddddd"/>')
        parts.append(f'<text x="{px(t):.1f}" y="{_SVG_H - _SVG_M + 16}" '
                     f'text-anchor="middle">{lbl}</text>')
    for t in ticks_y:
        lbl = f"1e{int(t)}" if log_y else f"{t:.3g}"
        parts.append(f'<line x1="{_SVG_M}" y1="{py(t):.1f}" '
                     f'x2="{_SVG_W - _SVG_M}" y2="{py(t):.1f}" '
                     f'stroke="#dddddd"/>')
        parts.append(f'<text x="{_SVG_M - 6}" y="{py(t):.1f}" '
                     f'text-anchor="end">{lbl}</text>')
    for k, (label, level) in enumerate(overlays):
        yy = py(float(ty(level)))
        parts.append(f'<line x1="{_SVG_M}" y1="{yy:.1f}" '
                     f'x2="{_SVG_W - _SVG_M}" y2="{yy:.1f}" stroke="black" '
                     f'stroke-dasharray="6 4"/>')
        parts.append(f'<text x="{_SVG_W - _SVG_M - 4}" y="{yy - 4:.1f}" '
                     f'text-anchor="end">{label}</text>')
    for k, (label, x, y) in enumerate(curves):
        color = _SVG_COLORS[k % len(_SVG_COLORS)]
        pts = " ".join(f"{px(a):.2f},{py(b):.2f}"
                       for a, b in zip(tx(x), ty(y)))
        parts.append(f'<polyline points="{pts}" fill="none" '
                     f'stroke="{color}"/>')
        parts.append(f'<text x="{_SVG_M + 6}" y="{_SVG_M + 14 + 13 * k}" '
                     f'fill="{color}">{label}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


# ---------------------------------------------------------------------------
# configuration handling

_REQUIRED_SECTIONS = {
    "bodies": ("bus", "solar_array", "payload"),
    "joints": ("sadm",),
    "actuators": ("rws", "isolator", "pma", "fsm"),
    "sensors": ("fsm_sensitivity", "noise"),
    "acs": ("bandwidth_rad_s", "damping_ratio"),
    "grid": (),
}


def load_config(path: str) -> dict:
    try:
        with open(path) as handle:
            config = json.load(handle)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: line {exc.lineno} "
                          f"column {exc.colno}: {exc.msg}") from None
    if not isinstance(config, dict):
        raise ConfigError("config root must be a JSON object")
    for section, keys in _REQUIRED_SECTIONS.items():
        if section not in config:
            raise ConfigError(f"config missing section {section!r}")
        for key in keys:
            if key not in config[section]:
                raise ConfigError(
                    f"config section {section!r} missing key {key!r}")
    return config


def _parse_spec(text: str, what: str) -> dict:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"--{what} must be a JSON object: {exc.msg}") \
            from None
    if not isinstance(doc, dict):
        raise ConfigError(f"--{what} must be a JSON object")
    return doc


def _point_from_spec(spec: str | None) -> ParameterPoint:
    if not spec:
        return ParameterPoint()
    doc = _parse_spec(spec, "grid")
    omega = doc.get("omega", (0.0, 0.0, 0.0, 0.0))
    if np.isscalar(omega):
        omega = (omega,) * 4
    return ParameterPoint(omega=tuple(omega),
                          theta_sa_deg=doc.get("theta_sa_deg", 0.0),
                          delta=tuple(doc.get("delta", (1.0, 1.0))))


def _noise_from_config(config: dict) -> NoiseSpec:
    return NoiseSpec.from_config(config["sensors"]["noise"])


def _kin_from_config(config: dict) -> LosKinematics:
    return LosKinematics(
        s_fsm=np.diag(config["sensors"]["fsm_sensitivity"]))


# ---------------------------------------------------------------------------
# commands

def cmd_build(args, manifest: RunManifest) -> int:
    config = load_config(args.config)
    manifest.record("load_config", "ok")
    plant = assemble_benchmark(config)
    manifest.record("assemble", "ok")
    stable, abscissa = is_stable(plant.nominal)
    bundle = {
        "config": config,
        "inputs": list(EXTERNAL_IN),
        "outputs": list(EXTERNAL_OUT),
        "n_states": plant.nominal.n_states,
        "j_tot": plant.j_tot.tolist(),
        "nominal_stable": bool(stable),
        "spectral_abscissa": float(abscissa),
    }
    _write_atomic(os.path.join(args.out, "plant.json"),
                  json.dumps(bundle, indent=1, sort_keys=True) + "\n")
    manifest.record("write_bundle", "ok")
    return 0


def cmd_analyze(args, manifest: RunManifest) -> int:
    config = load_config(args.config)
    plant = assemble_benchmark(config)
    manifest.record("assemble", "ok")
    grid_cfg = _parse_spec(args.grid, "grid") if args.grid \
        else config["grid"]
    points = [pt for pt, _ in sample_grid(plant, grid_cfg)]
    from_ch = args.from_channels.split(",")
    to_ch = args.to_channels.split(",")
    for ch in from_ch:
        if ch not in plant.input_labels:
            raise AnalysisError(f"unknown channel {ch!r}")
    for ch in to_ch:
        if ch not in plant.output_labels:
            raise AnalysisError(f"unknown channel {ch!r}")
    freqs = np.logspace(-2, 3.5, args.points)
    curves = transmissibility(plant, points, from_ch, to_ch, freqs)
    manifest.record("transmissibility", "ok")
    lines = ["point_id,theta_sa_deg,delta,omega,freq_rad_s,sigma_max"]
    for k, (pt, grid, bounds) in enumerate(curves):
        head = (f"{k},{pt.theta_sa_deg!r},{pt.delta[0]!r},"
                f"{pt.omega[0]!r}")
        top = np.atleast_2d(bounds)[:, 0]
        for w, s in zip(grid, top):
            lines.append(f"{head},{float(w)!r},{float(s)!r}")
    _write_atomic(os.path.join(args.out, "analyze.csv"),
                  "\n".join(lines) + "\n")
    if args.svg:
        plotted = [(f"point {k}", grid,
                    np.maximum(np.atleast_2d(bounds)[:, 0], 1e-300))
                   for k, (_, grid, bounds) in enumerate(curves)]
        overlays = [("APE 10 arcsec", 10 * ARCSEC),
                    ("RPE 100 marcsec", 0.1 * ARCSEC),
                    ("RPE_f 40 marcsec", 0.04 * ARCSEC)]
        _write_atomic(os.path.join(args.out, "analyze.svg"),
                      _svg_plot(plotted, overlays,
                                xlabel="frequency [rad/s]",
                                ylabel="max singular value",
                                title=f"{','.join(from_ch)} to "
                                      f"{','.join(to_ch)}"))
    manifest.record("write_outputs", "ok")
    return 0


def _load_design(path: str) -> ControllerDesign:
    try:
        with open(path) as handle:
            return ControllerDesign.from_json(handle.read())
    except OSError as exc:
        raise ConfigError(f"cannot read design file: {exc}") from None
    except (KeyError, json.JSONDecodeError) as exc:
        raise ConfigError(f"malformed design file {path!r}: {exc}") \
            from None


def cmd_tune(args, manifest: RunManifest) -> int:
    config = load_config(args.config)
    plant = assemble_benchmark(config)
    manifest.record("assemble", "ok")
    kin = _kin_from_config(config)
    noise = _noise_from_config(config)
    weights = WeightSet()
    grid_cfg = _parse_spec(args.grid, "grid") if args.grid \
        else config["grid"]
    systems = sample_grid(plant, grid_cfg)
    if args.stage == "fsm":
        soft, hard = fsm_channels()
        init = fsm_control_law(kalman_los_observer(kin, noise), kin.s_fsm)
        family = generalized_family(systems, weights, kin, noise, "fsm")
    else:
        if not args.fsm_design:
            raise ConfigError("the pma stage needs --fsm-design")
        fsm_design = _load_design(args.fsm_design)
        soft, hard = pma_channels()
        family = generalized_family(systems, weights, kin, noise, "pma",
                                    fsm_controller=fsm_design.controller)
        init = pma_control_law(family, seed=args.seed)
    manifest.record("generalized_family", "ok")
    design = tune_structured(family, soft, hard, init,
                             budget=args.budget, seed=args.seed)
    manifest.record("tune", design.status)
    _write_atomic(os.path.join(args.out, f"design_{args.stage}.json"),
                  design.to_json() + "\n")
    _write_atomic(os.path.join(args.out, f"gammas_{args.stage}.csv"),
                  design.gamma_csv())
    manifest.record("write_outputs", "ok")
    if not design.feasible:
        print(f"infeasible: hard constraints not met "
              f"({design.gammas})", file=sys.stderr)
        return _EXIT_INFEASIBLE
    return 0


def _sa_ripple(level: float, duration: float, dt: float,
               seed: int) -> dict:
    """Two-axis drive-torque ripple inside the flat envelope."""
    n = int(round(duration / dt)) + 1
    t = np.arange(n) * dt
    rng = np.random.default_rng(seed)
    phases = rng.uniform(0.0, 2.0 * np.pi, 2)
    return {f"w_sa{i}": level * np.sin(0.7 * t + phases[i])
            for i in range(2)}


def ape_rpe(los: np.ndarray, dt: float, t_delta: float = 0.02) -> tuple:
    """Pointing metrics of a (n, 2) LOS trace.

    APE is the largest instantaneous error magnitude; RPE is the largest
    deviation from the mean over any sliding window of ``t_delta``.
    """
    mags = np.linalg.norm(los, axis=1)
    ape = float(mags.max()) if mags.size else 0.0
    w = max(1, int(round(t_delta / dt)))
    if los.shape[0] < w:
        return ape, 0.0
    kernel = np.ones(w) / w
    rpe = 0.0
    for axis in range(los.shape[1]):
        mean = np.convolve(los[:, axis], kernel, mode="valid")
        dev = 0.0
        for off in range(w):
            seg = los[off:off + mean.size, axis]
            dev = max(dev, float(np.abs(seg - mean).max()))
        rpe = max(rpe, dev)
    return ape, rpe


def cmd_simulate(args, manifest: RunManifest) -> int:
    config = load_config(args.config)
    plant = assemble_benchmark(config)
    manifest.record("assemble", "ok")
    kin = _kin_from_config(config)
    noise = _noise_from_config(config)
    point = _point_from_spec(args.grid)
    fsm = _load_design(args.fsm_design).controller if args.fsm_design \
        else None
    pma = _load_design(args.pma_design).controller if args.pma_design \
        else None
    loop = los_closed_loop(plant.at(point), kin, noise, fsm, pma)
    manifest.record("close_loops", "ok")

    dt, duration = args.dt, args.duration
    n = int(round(duration / dt)) + 1
    channels = {}
    for w, omega in enumerate(point.omega):
        labels = tuple(f"w_rws{5 * w + i}" for i in range(5))
        trace = rw_harmonic_signal(omega, HarmonicSpec(), duration, dt,
                                   args.seed + w, labels)
        channels.update(trace.channels)
    channels.update(_sa_ripple(args.sa_ripple, duration, dt,
                               args.seed + 100))
    rng = np.random.default_rng(args.seed + 200)
    for lbl in SIM_NOISE_IN:
        channels[lbl] = rng.standard_normal(n) / np.sqrt(dt)
    drive = SignalTrace(dt, {lbl: channels[lbl]
                             for lbl in SIM_DIST_IN + SIM_NOISE_IN})
    out = simulate(loop, drive)
    manifest.record("simulate", "ok")

    los = out.matrix(("los_c0", "los_c1"))
    ape, rpe = ape_rpe(los, dt)
    metrics = {
        "ape_rad": ape,
        "rpe_rad": rpe,
        "ape_arcsec": ape / ARCSEC,
        "rpe_arcsec": rpe / ARCSEC,
        "duration_s": duration,
        "dt_s": dt,
        "point": dataclasses.asdict(point),
        "loops": {"fsm": fsm is not None, "pma": pma is not None},
    }
    _write_atomic(os.path.join(args.out, "simulate.csv"), out.to_csv())
    _write_atomic(os.path.join(args.out, "metrics.json"),
                  json.dumps(metrics, indent=1, sort_keys=True) + "\n")
    if args.svg:
        t = out.time
        curves = [("|LOS_c| [rad]", np.maximum(t, dt),
                   np.maximum(np.linalg.norm(los, axis=1), 1e-300))]
        _write_atomic(os.path.join(args.out, "simulate.svg"),
                      _svg_plot(curves, log_x=False,
                                xlabel="time [s]",
                                ylabel="LOS error magnitude",
                                title="corrected line of sight"))
    manifest.record("write_outputs", "ok")
    return 0


def cmd_report(args, manifest: RunManifest) -> int:
    found = []
    for stage in ("fsm", "pma"):
        path = os.path.join(args.out, f"design_{stage}.json")
        if os.path.exists(path):
            found.append((stage, _load_design(path)))
    metrics_path = os.path.join(args.out, "metrics.json")
    metrics = None
    if os.path.exists(metrics_path):
        with open(metrics_path) as handle:
            metrics = json.load(handle)
    if not found and metrics is None:
        raise AnalysisError(f"nothing to report in {args.out!r}")
    lines = ["# Run report", ""]
    rows = ["stage,index,value,kind,worst_point"]
    for stage, design in found:
        lines += [f"## Stage `{stage}`",
                  f"- controller order: {design.controller.n_states}",
                  f"- status: {design.status}",
                  f"- evaluations: {design.evaluations}",
                  f"- feasible: {design.feasible}", ""]
        for name in sorted(design.gammas):
            kind = "hard" if name in design.hard else "soft"
            rows.append(f"{stage},{name},{design.gammas[name]!r},{kind},"
                        f"\"{design.worst_points.get(name)}\"")
            lines.append(f"- {name} = {design.gammas[name]:.4f} ({kind})")
        lines.append("")
    if metrics is not None:
        lines += ["## Time-domain metrics",
                  f"- APE: {metrics['ape_arcsec']:.3f} arcsec",
                  f"- RPE: {metrics['rpe_arcsec'] * 1000:.1f} marcsec",
                  f"- loops: {metrics['loops']}", ""]
    _write_atomic(os.path.join(args.out, "report.md"),
                  "\n".join(lines) + "\n")
    _write_atomic(os.path.join(args.out, "report.csv"),
                  "\n".join(rows) + "\n")
    manifest.record("write_outputs", "ok")
    return 0


# ---------------------------------------------------------------------------
# entry point

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="flexsat",
        description="Flexible-telescope micro-vibration workbench")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_config=True):
        if needs_config:
            p.add_argument("--config", required=True,
                           help="benchmark JSON configuration")
        p.add_argument("--out", default="flexsat_out",
                       help="output directory")
        p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("build", help="assemble and check the benchmark")
    common(p)

    p = sub.add_parser("analyze", help="disturbance-to-output envelopes")
    common(p)
    p.add_argument("--from", dest="from_channels",
                   default=",".join(f"w_rws{i}" for i in range(20)),
                   help="comma-separated disturbance channels")
    p.add_argument("--to", dest="to_channels", default="los0,los1",
                   help="comma-separated output channels")
    p.add_argument("--grid", default=None,
                   help="JSON parameter grid override")
    p.add_argument("--points", type=int, default=300)
    p.add_argument("--svg", action="store_true")

    p = sub.add_parser("tune", help="tune one control stage")
    common(p)
    p.add_argument("--stage", choices=("fsm", "pma"), required=True)
    p.add_argument("--budget", type=int, default=3000)
    p.add_argument("--grid", default=None,
                   help="JSON parameter grid override")
    p.add_argument("--fsm-design", default=None,
                   help="mirror-stage design JSON (required for pma)")

    p = sub.add_parser("simulate", help="time-domain run with metrics")
    common(p)
    p.add_argument("--grid", default=None,
                   help="JSON parameter point, e.g. "
                        '{"omega": 600, "theta_sa_deg": 45}')
    p.add_argument("--duration", type=float, default=60.0)
    p.add_argument("--dt", type=float, default=1e-3)
    p.add_argument("--fsm-design", default=None)
    p.add_argument("--pma-design", default=None)
    p.add_argument("--sa-ripple", type=float, default=0.1,
                   help="drive ripple amplitude, N*m")
    p.add_argument("--svg", action="store_true")

    p = sub.add_parser("report", help="summarize designs and metrics")
    common(p, needs_config=False)
    return parser


_COMMANDS = {"build": cmd_build, "analyze": cmd_analyze, "tune": cmd_tune,
             "simulate": cmd_simulate, "report": cmd_report}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    os.makedirs(args.out, exist_ok=True)
    manifest = RunManifest(config=getattr(args, "config", None) or "",
                           command=args.command, seed=args.seed,
                           out_dir=args.out)
    start = time.monotonic()
    try:
        code = _COMMANDS[args.command](args, manifest)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        manifest.record(args.command, f"config error: {exc}")
        code = _EXIT_CONFIG
    except InfeasibleDesignError as exc:
        if str(exc).startswith("NO_STABILIZING_INIT"):
            print(f"model error: {exc}", file=sys.stderr)
            manifest.record(args.command, f"model error: {exc}")
            code = _EXIT_MODEL
        else:
            print(f"infeasible: {exc}", file=sys.stderr)
            manifest.record(args.command, f"infeasible: {exc}")
            code = _EXIT_INFEASIBLE
    except _MODEL_ERRORS as exc:
        print(f"model error: {exc}", file=sys.stderr)
        manifest.record(args.command, f"model error: {exc}")
        code = _EXIT_MODEL
    except (AnalysisError, LabelError) as exc:
        print(f"analysis error: {exc}", file=sys.stderr)
        manifest.record(args.command, f"analysis error: {exc}")
        code = _EXIT_ANALYSIS
    except KeyError as exc:
        print(f"config error: missing key {exc}", file=sys.stderr)
        manifest.record(args.command, f"config error: missing key {exc}")
        code = _EXIT_CONFIG
    except FlexsatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        manifest.record(args.command, f"error: {exc}")
        code = _EXIT_MODEL
    manifest.wall_clock_s = time.monotonic() - start
    manifest.write()
    return code


if __name__ == "__main__":
    sys.exit(main())
