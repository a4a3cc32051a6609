"""Command-line surface wiring the library into reproduction runs.

Four subcommands cover the capability areas: ``bounds`` sweeps the
quantum detection and localization limits over (separation, contrast)
grids, ``tables`` prints integration-time tables for every simulated
system at a pinned scene, ``coronagraph`` emits intensity rasters, mode
spectra and throughput sweeps for the three designs, and ``montecarlo``
runs the sampling-plus-estimation harness over one truth scene or a
spiral of them.

Conventions shared by every subcommand: outputs land in ``--out-dir``
next to a ``<command>_manifest.json`` run manifest; every CSV starts
with a comment line recording the code version and seed followed by a
header row; exit code 0 means success, 2 a configuration or usage
error, 3 numerical non-convergence.  Telescope prescriptions come from
``--config`` or, when that is absent, the ``ARTIFACT_TELESCOPE_CONFIG``
environment variable.  Sweep axes are given as ``v1,v2,...`` lists or
``start:stop:count`` ranges (append ``:log`` for geometric spacing).
Intensity rasters are row-major little-endian float32 behind a 16-byte
header: magic ``FR32``, then uint32 width, height and a reserved zero.
"""

import argparse
import concurrent.futures
import json
import math
import os
import pathlib
import sys
import time
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .classical_info import cce_spade_binary, cfim_direct_imaging, cfim_spade
from .coronagraph import (
    extract_operator,
    output_state_image,
    perfect_plan,
    piaacmc_plan,
    vortex_plan,
    write_raster,
    write_transmission_csv,
)
from .estimation import (
    coarse_table,
    patch_efficiency,
    run_trials,
    spiral_truths,
    write_trials_csv,
)
from .modebasis import FourierZernikeBasis
from .optics import Scene, load_prescription, separation_from_sigma_units
from .quantum_bounds import (
    photon_requirement_map,
    qce,
    qfim_polar,
    sigma_loc,
    write_photon_map_csv,
)

__all__ = ["RunManifest", "main"]

CONFIG_ENV_VAR = "ARTIFACT_TELESCOPE_CONFIG"

_PE_TARGETS = (1e-1, 1e-2, 1e-3, 1e-4)
_REL_ERRORS = (1.0, 0.5, 0.1, 0.01)
_SPADE_TABLE_ORDER = 60
_EXTRACTION_DEFAULT_ORDER = 6
_CONVERGENCE_FLOOR = 0.9
_PATCH_MIN_TRIALS = 30

# plans are deterministic per design on the default grid; cache across
# subcommand calls within one process
_PLAN_CACHE = {}


@dataclass
class RunManifest:
    """Reproducibility record written next to every command's outputs.

    Re-running the same command with the parameters recorded here
    regenerates byte-identical CSVs on the same build; the wall-clock
    duration is the only field expected to differ between such runs.
    """

    command: str
    config: str
    parameters: dict
    outputs: list = field(default_factory=list)
    version: str = __version__
    seed: int = 0
    duration_s: float = 0.0

    def write(self, out_dir):
        path = pathlib.Path(out_dir) / f"{self.command}_manifest.json"
        payload = {
            "command": self.command,
            "config": self.config,
            "parameters": self.parameters,
            "outputs": self.outputs,
            "version": self.version,
            "seed": self.seed,
            "duration_s": round(self.duration_s, 3),
        }
        with open(path, "w") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
        return path


def parse_axis(text):
    """Parse a sweep axis spec into a float array.

    Accepts a comma-separated value list or ``start:stop:count`` with an
    optional trailing ``:log`` for geometric spacing.  A bare number
    yields a one-point axis.
    """
    if ":" in text:
        parts = text.split(":")
        if len(parts) == 4 and parts[3] == "log":
            return np.geomspace(float(parts[0]), float(parts[1]), int(parts[2]))
        if len(parts) == 3:
            return np.linspace(float(parts[0]), float(parts[1]), int(parts[2]))
        raise ValueError(
            f"bad axis spec {text!r}; use v1,v2,... or start:stop:count[:log]"
        )
    values = np.array([float(v) for v in text.split(",") if v.strip()])
    if values.size == 0:
        raise ValueError(f"empty axis spec {text!r}")
    return values


def _scalar_axis(text, flag):
    values = parse_axis(text)
    if values.size != 1:
        raise ValueError(f"{flag} must be a single value here, got {values.size}")
    return float(values[0])


def _load_config(args, required):
    if args.config is None:
        if required:
            raise ValueError(
                "no telescope configuration: pass --config or set "
                f"{CONFIG_ENV_VAR}"
            )
        return None, None
    return load_prescription(args.config), str(args.config)


def _out_dir(args):
    out = pathlib.Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _comment(seed):
    return f"artifact {__version__} seed={seed}"


def _pool_map(fn, items, jobs):
    """Order-preserving map over a process pool sized by --jobs.

    Falls back to a serial loop when one worker suffices; results are
    collected (and later written) by the calling process only.
    """
    jobs = max(1, min(int(jobs), len(items)))
    if jobs == 1:
        return [fn(item) for item in items]
    with concurrent.futures.ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def _write_csv(path, comment, header, rows):
    with open(path, "w", encoding="ascii") as fh:
        fh.write(f"# {comment}\n")
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_format_cell(v) for v in row) + "\n")


def _format_cell(value):
    if isinstance(value, (int, np.integer)):
        return "%d" % value
    if isinstance(value, float):
        return "%.17g" % value
    return str(value)


def _get_plan(design):
    plan = _PLAN_CACHE.get(design)
    if plan is None:
        maker = {
            "perfect": perfect_plan,
            "piaacmc": piaacmc_plan,
            "vortex": vortex_plan,
        }[design]
        plan = maker()
        _PLAN_CACHE[design] = plan
    return plan


def planet_throughput(plan, r_delta, phi=0.3):
    """Transmitted energy fraction of a unit source at radius r_delta.

    Probes the chain with a scene whose bare-star rendering places a
    unit-weight source exactly at polar (r_delta, phi); the integrated
    output intensity is then the off-axis throughput, free of any
    on-axis null residual.
    """
    probe = Scene(2.0 * r_delta, (phi + math.pi) % (2.0 * math.pi), 0.5)
    image = output_state_image(plan, probe, star_only=True)
    return float(image.sum()) * plan.grid.dx**2


# ---------------------------------------------------------------------------
# bounds


def _qce_rows(payload):
    r_sigma, b_values = payload
    r_delta = separation_from_sigma_units(r_sigma)
    return [(r_sigma, b, qce(Scene(r_delta, 0.0, b))) for b in b_values]


def _qfim_rows(payload):
    r_sigma, b_values = payload
    r_delta = separation_from_sigma_units(r_sigma)
    rows = []
    for b in b_values:
        fisher = qfim_polar(Scene(r_delta, 0.0, b))
        rows.append(
            (r_sigma, b, float(fisher.entries[0, 0]), float(fisher.entries[1, 1]))
        )
    return rows


def _budget_rows(payload):
    r_sigma, b_values, task, target, prescription = payload
    return photon_requirement_map(
        [r_sigma], b_values, task=task, target=target, prescription=prescription
    )


def cmd_bounds(args):
    """Sweep quantum limits over a (separation, contrast) grid to CSV."""
    t0 = time.perf_counter()
    prescription, config_path = _load_config(args, required=False)
    r_values = parse_axis(args.r_delta_over_sigma)
    b_values = parse_axis(args.contrast_b)
    out = _out_dir(args)
    comment = _comment(args.seed)

    if args.target == "qce":
        chunks = _pool_map(_qce_rows, [(r, b_values) for r in r_values], args.jobs)
        path = out / "bounds_qce.csv"
        _write_csv(
            path,
            comment,
            ["r_delta_over_sigma", "b", "qce"],
            [row for chunk in chunks for row in chunk],
        )
    elif args.target == "qfim":
        chunks = _pool_map(_qfim_rows, [(r, b_values) for r in r_values], args.jobs)
        path = out / "bounds_qfim.csv"
        _write_csv(
            path,
            comment,
            ["r_delta_over_sigma", "b", "k_rr", "k_phiphi"],
            [row for chunk in chunks for row in chunk],
        )
    else:
        target = args.pe_target if args.task == "detection" else args.rel_loc_error
        chunks = _pool_map(
            _budget_rows,
            [(r, b_values, args.task, target, prescription) for r in r_values],
            args.jobs,
        )
        path = out / "bounds_budget_map.csv"
        write_photon_map_csv(path, np.vstack(chunks), comment=comment)

    manifest = RunManifest(
        command="bounds",
        config=config_path,
        parameters={
            "target": args.target,
            "task": args.task,
            "r_delta_over_sigma": args.r_delta_over_sigma,
            "contrast_b": args.contrast_b,
            "pe_target": args.pe_target,
            "rel_loc_error": args.rel_loc_error,
            "jobs": args.jobs,
        },
        outputs=[path.name],
        seed=args.seed,
        duration_s=time.perf_counter() - t0,
    )
    manifest.write(out)
    print(f"wrote {path} ({r_values.size * b_values.size} grid points)")
    return 0


# ---------------------------------------------------------------------------
# tables


_TABLE_SYSTEMS = ("quantum", "spade", "perfect", "piaacmc", "vortex")


def _detection_exponents(scene):
    """Detection exponent per system; nulling chains use b * throughput."""
    out = {"quantum": qce(scene), "spade": float(cce_spade_binary(scene))}
    for design in ("perfect", "piaacmc", "vortex"):
        plan = _get_plan(design)
        out[design] = scene.b * planet_throughput(plan, scene.r_delta, scene.phi_delta)
    return out


def _localization_matrices(scene):
    """Localization information matrix per system at the pinned scene."""
    out = {
        "quantum": qfim_polar(scene),
        "spade": cfim_spade(FourierZernikeBasis(_SPADE_TABLE_ORDER), scene),
    }
    for design in ("perfect", "piaacmc", "vortex"):
        out[design] = cfim_direct_imaging(_get_plan(design), scene)
    return out


def _loc_seconds(fisher, rel_error, flux):
    r = fisher.scene.r_delta
    bracket = 1.0 / float(fisher.entries[0, 0]) + r * r / float(fisher.entries[1, 1])
    return bracket / (rel_error * r) ** 2 / flux


def _print_table(title, col_labels, rows):
    width = max(len(s) for s, _ in rows) + 2
    print(title)
    print(" " * width + "".join(f"{c:>14}" for c in col_labels))
    for system, values in rows:
        print(f"{system:<{width}}" + "".join(f"{v:>14.6g}" for v in values))


def cmd_tables(args):
    """Print and write an integration-time table for all systems.

    Selector 2 tabulates detection times against error-probability
    targets, selector 3 localization times against relative-error
    targets, both at the pinned sub-diffraction high-contrast scene.
    """
    t0 = time.perf_counter()
    prescription, config_path = _load_config(args, required=True)
    flux = prescription.photon_flux_hz
    scene = Scene(
        separation_from_sigma_units(args.r_delta_over_sigma),
        0.3,
        args.contrast_b,
    )
    out = _out_dir(args)
    kind = "detection" if args.table in ("2", "detection") else "localization"

    if kind == "detection":
        exponents = _detection_exponents(scene)
        rows = [
            (sys_name, [-math.log(pe) / (exponents[sys_name] * flux) for pe in _PE_TARGETS])
            for sys_name in _TABLE_SYSTEMS
        ]
        col_labels = [f"Pe={pe:g}" for pe in _PE_TARGETS]
        targets = _PE_TARGETS
        target_name = "pe_target"
        path = out / "detection_times.csv"
        title = (
            f"Detection integration time (s) at r_delta/sigma="
            f"{args.r_delta_over_sigma:g}, b={args.contrast_b:g}"
        )
    else:
        matrices = _localization_matrices(scene)
        rows = [
            (sys_name, [_loc_seconds(matrices[sys_name], rel, flux) for rel in _REL_ERRORS])
            for sys_name in _TABLE_SYSTEMS
        ]
        col_labels = [f"rel={rel:g}" for rel in _REL_ERRORS]
        targets = _REL_ERRORS
        target_name = "rel_loc_error"
        path = out / "localization_times.csv"
        title = (
            f"Localization integration time (s) at r_delta/sigma="
            f"{args.r_delta_over_sigma:g}, b={args.contrast_b:g}"
        )

    _print_table(title, col_labels, rows)
    _write_csv(
        path,
        _comment(args.seed),
        ["system", target_name, "seconds"],
        [
            (sys_name, target, seconds)
            for sys_name, values in rows
            for target, seconds in zip(targets, values)
        ],
    )
    manifest = RunManifest(
        command="tables",
        config=config_path,
        parameters={
            "table": args.table,
            "kind": kind,
            "r_delta_over_sigma": args.r_delta_over_sigma,
            "contrast_b": args.contrast_b,
        },
        outputs=[path.name],
        seed=args.seed,
        duration_s=time.perf_counter() - t0,
    )
    manifest.write(out)
    print(f"wrote {path}")
    return 0


# ---------------------------------------------------------------------------
# coronagraph


def cmd_coronagraph(args):
    """Emit a raster, mode spectrum or throughput sweep for one design."""
    t0 = time.perf_counter()
    plan = _get_plan(args.design)
    out = _out_dir(args)
    comment = _comment(args.seed)

    if args.output == "image":
        r_sigma = _scalar_axis(args.r_delta_over_sigma, "--r-delta-over-sigma")
        scene = Scene(
            separation_from_sigma_units(r_sigma), args.phi, args.contrast_b
        )
        image = output_state_image(plan, scene, star_only=args.star_only)
        path = out / f"{args.design}_image.f32"
        write_raster(path, image)
        detail = f"star_only={args.star_only}"
    elif args.output == "eigenmodes":
        op = extract_operator(plan, FourierZernikeBasis(args.n_max))
        path = out / f"{args.design}_modes.csv"
        write_transmission_csv(path, op, comment=comment)
        detail = f"{op.truncation} modes"
    else:
        r_values = parse_axis(args.r_delta_over_sigma)
        rows = [
            (r_sigma, planet_throughput(plan, separation_from_sigma_units(r_sigma)))
            for r_sigma in r_values
        ]
        path = out / f"{args.design}_throughput.csv"
        _write_csv(
            path, comment, ["r_delta_over_sigma", "planet_throughput"], rows
        )
        detail = f"{len(rows)} separations"

    manifest = RunManifest(
        command="coronagraph",
        config=None,
        parameters={
            "design": args.design,
            "output": args.output,
            "r_delta_over_sigma": args.r_delta_over_sigma,
            "phi": args.phi,
            "contrast_b": args.contrast_b,
            "star_only": args.star_only,
            "n_max": args.n_max,
        },
        outputs=[path.name],
        seed=args.seed,
        duration_s=time.perf_counter() - t0,
    )
    manifest.write(out)
    print(f"wrote {path} ({detail})")
    return 0


# ---------------------------------------------------------------------------
# montecarlo


def _cluster_worker(payload):
    """Run one trial cluster; safe to ship to a worker process."""
    index, r_delta, phi, b, photons, trials, seed, n_max = payload
    basis = FourierZernikeBasis(n_max)
    table = coarse_table(basis, b)
    scene = Scene(r_delta, phi, b)
    results = run_trials(scene, basis, photons, trials, seed, table=table)
    return index, results


def cmd_montecarlo(args):
    """Sample and estimate trial clusters; summarize patch efficiency.

    One cluster per truth scene: either the single scene given by the
    scene flags or ``--spiral N`` truth points along an arc.  Cluster k
    runs with seed ``--seed + k`` so any cluster reproduces in
    isolation.  Exits 3 when any cluster converges on fewer than 90% of
    its trials.
    """
    t0 = time.perf_counter()
    if args.trials < 1:
        raise ValueError("need at least one trial")
    out = _out_dir(args)
    b = args.contrast_b
    if args.spiral > 0:
        scenes = spiral_truths(
            args.spiral,
            separation_from_sigma_units(args.r_start),
            separation_from_sigma_units(args.r_end),
            b,
        )
    else:
        scenes = [
            Scene(
                separation_from_sigma_units(args.r_delta_over_sigma), args.phi, b
            )
        ]

    payloads = [
        (
            k,
            scene.r_delta,
            scene.phi_delta,
            b,
            args.photons,
            args.trials,
            args.seed + k,
            args.n_max,
        )
        for k, scene in enumerate(scenes)
    ]
    clusters = dict(_pool_map(_cluster_worker, payloads, args.jobs))

    outputs = []
    summary_rows = []
    worst_fraction = 1.0
    for k, scene in enumerate(scenes):
        results = clusters[k]
        name = (
            f"trials_cluster{k}.csv" if args.spiral > 0 else "montecarlo_trials.csv"
        )
        write_trials_csv(out / name, scene, results)
        outputs.append(name)
        n_conv = sum(int(t.estimate.converged) for t in results)
        worst_fraction = min(worst_fraction, n_conv / len(results))
        if len(results) >= _PATCH_MIN_TRIALS:
            patch, floor, ratio = patch_efficiency(scene, results, args.photons)
        else:
            patch, ratio = math.nan, math.nan
            floor = sigma_loc(qfim_polar(scene), args.photons)
        summary_rows.append(
            (
                k,
                scene.r_delta / separation_from_sigma_units(1.0),
                scene.phi_delta,
                patch,
                floor,
                ratio,
                n_conv,
                len(results),
            )
        )
        print(
            f"cluster {k}: r={summary_rows[-1][1]:.3f} sigma "
            f"phi={scene.phi_delta:.3f} ratio={ratio:.4f} "
            f"converged={n_conv}/{len(results)}"
        )

    summary_path = out / "montecarlo_summary.csv"
    _write_csv(
        summary_path,
        _comment(args.seed),
        [
            "cluster",
            "truth_r_over_sigma",
            "truth_phi",
            "sigma_patch",
            "sigma_floor",
            "patch_ratio",
            "n_converged",
            "n_trials",
        ],
        summary_rows,
    )
    outputs.append(summary_path.name)

    manifest = RunManifest(
        command="montecarlo",
        config=None,
        parameters={
            "trials": args.trials,
            "photons": args.photons,
            "n_max": args.n_max,
            "spiral": args.spiral,
            "r_delta_over_sigma": args.r_delta_over_sigma,
            "phi": args.phi,
            "contrast_b": b,
            "r_start": args.r_start,
            "r_end": args.r_end,
            "jobs": args.jobs,
        },
        outputs=outputs,
        seed=args.seed,
        duration_s=time.perf_counter() - t0,
    )
    manifest.write(out)
    print(f"wrote {summary_path}")
    if worst_fraction < _CONVERGENCE_FLOOR:
        print(
            f"error: worst cluster convergence {worst_fraction:.1%} below "
            f"{_CONVERGENCE_FLOOR:.0%}",
            file=sys.stderr,
        )
        return 3
    return 0


# ---------------------------------------------------------------------------
# parser


def _add_common(sub):
    sub.add_argument(
        "--config",
        default=os.environ.get(CONFIG_ENV_VAR),
        help="telescope prescription file (key = value lines); defaults to "
        f"${CONFIG_ENV_VAR}",
    )
    sub.add_argument("--out-dir", default=".", help="output directory")
    sub.add_argument("--seed", type=int, default=0, help="base RNG seed")
    sub.add_argument(
        "--jobs",
        type=int,
        default=os.cpu_count() or 1,
        help="work-pool size for parameter sweeps",
    )


def build_parser():
    parser = argparse.ArgumentParser(
        prog="artifact",
        description="Photon-information limits and measurement simulation "
        "for faint-companion detection and localization.",
    )
    parser.add_argument(
        "--version", action="version", version=f"artifact {__version__}"
    )
    subs = parser.add_subparsers(dest="command", required=True)

    bounds = subs.add_parser(
        "bounds", help="quantum-limit curves and photon requirement maps"
    )
    bounds.add_argument(
        "--target", choices=("qce", "qfim", "budget-map"), required=True
    )
    bounds.add_argument(
        "--r-delta-over-sigma",
        default="0.1:2:20",
        help="separation axis in diffraction-width units",
    )
    bounds.add_argument(
        "--contrast-b", default="1e-10:1e-5:20:log", help="brightness-ratio axis"
    )
    bounds.add_argument(
        "--task",
        choices=("detection", "localization"),
        default="detection",
        help="requirement mapped by budget-map",
    )
    bounds.add_argument(
        "--pe-target", type=float, default=1e-3, help="detection error target"
    )
    bounds.add_argument(
        "--rel-loc-error",
        type=float,
        default=0.1,
        help="relative localization error target",
    )
    _add_common(bounds)
    bounds.set_defaults(func=cmd_bounds)

    tables = subs.add_parser(
        "tables", help="integration-time tables for all simulated systems"
    )
    tables.add_argument(
        "--table",
        choices=("2", "3", "detection", "localization"),
        required=True,
        help="2/detection: error-probability table; 3/localization: "
        "relative-error table",
    )
    tables.add_argument("--r-delta-over-sigma", type=float, default=0.1)
    tables.add_argument("--contrast-b", type=float, default=1e-9)
    _add_common(tables)
    tables.set_defaults(func=cmd_tables)

    coro = subs.add_parser(
        "coronagraph", help="design rasters, mode spectra, throughput sweeps"
    )
    coro.add_argument(
        "--design", choices=("perfect", "piaacmc", "vortex"), required=True
    )
    coro.add_argument(
        "--output", choices=("image", "eigenmodes", "throughput"), required=True
    )
    coro.add_argument(
        "--r-delta-over-sigma",
        default="1.0",
        help="scene separation (image) or sweep axis (throughput)",
    )
    coro.add_argument("--phi", type=float, default=0.0, help="position angle")
    coro.add_argument("--contrast-b", type=float, default=1e-9)
    coro.add_argument(
        "--star-only",
        action="store_true",
        help="render the bare-star output only",
    )
    coro.add_argument(
        "--n-max",
        type=int,
        default=_EXTRACTION_DEFAULT_ORDER,
        help="radial order of the extraction basis",
    )
    _add_common(coro)
    coro.set_defaults(func=cmd_coronagraph)

    mc = subs.add_parser(
        "montecarlo", help="measurement sampling and localization trials"
    )
    mc.add_argument("--trials", type=int, default=500, help="trials per cluster")
    mc.add_argument(
        "--photons", type=float, default=3e11, help="mean photons per trial"
    )
    mc.add_argument("--n-max", type=int, default=10, help="sorter truncation")
    mc.add_argument("--r-delta-over-sigma", type=float, default=0.3)
    mc.add_argument("--phi", type=float, default=0.8)
    mc.add_argument("--contrast-b", type=float, default=1e-9)
    mc.add_argument(
        "--spiral",
        type=int,
        default=0,
        help="number of truth points along an arc (0: single scene)",
    )
    mc.add_argument(
        "--r-start", type=float, default=0.2, help="spiral start, sigma units"
    )
    mc.add_argument("--r-end", type=float, default=0.5, help="spiral end, sigma units")
    _add_common(mc)
    mc.set_defaults(func=cmd_montecarlo)

    return parser


def main(argv=None):
    """Entry point; returns the process exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
