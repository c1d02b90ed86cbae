import argparse
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from importlib import metadata
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence

import numpy as np
from numpy import random

from leb.deloc import (
    AcceptanceError,
    CalibrationConstants,
    CalibrationMissingError,
    ConfigurationError,
    StageError,
    TrialRecord,
)
from leb.deloc.distances import DistanceExperimentSpec, tail_probability_estimate
from leb.deloc.ensembles import derive_seed, draw, stream
from leb.deloc.experiments import (
    OptimizerParams,
    PipelineSpec,
    approx_eigen_residual,
    balancing_event_mc,
    disc_net,
    eigenvector_deloc_scan,
    full_pipeline,
    localization_search,
    main_threshold,
)
from leb.deloc.sv_probes import (
    SvProbeSpec,
    calibrate,
    calibration_path,
    coordinate_coisometry,
    fat_matrix_probe,
    intermediate_sv_probe,
    load_calibration,
    product_norm_probe,
    product_sv_probe,
    small_ball_probe,
    smallest_sv_probe,
    tall_matrix_probe,
)
from leb.deloc.test_projection import (
    TestProjectionInput,
    build_test_projection,
    coisometry_error,
    column_norm_ratio,
    kernel_residual,
)
from leb.deloc.trials import LogProgress, TrialRunner, summarize

from ._config import Config, load_config
from ._reports import ExperimentManifest, write_csv, write_json

__all__ = [
    "EXIT_ACCEPTANCE",
    "EXIT_CONFIGURATION",
    "EXIT_OK",
    "SUBCOMMANDS",
    "auto_l",
    "main",
    "replay",
    "run",
]

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIGURATION = 1
EXIT_ACCEPTANCE = 2

SUBCOMMANDS = (
    "calibrate",
    "deloc-scan",
    "test-projection",
    "distances",
    "sv-probe",
    "balancing",
    "localize",
    "pipeline",
)
UNCALIBRATED = ("calibrate", "test-projection")

COISOMETRY_TOLERANCE = 1e-10
KERNEL_TOLERANCE = 1e-6
RESIDUAL_RECHECK_TOLERANCE = 1e-8


def version() -> str:
    try:
        return metadata.version("leb.deloc")
    except metadata.PackageNotFoundError:
        return "0.0.0"


def auto_l(n: int) -> int:
    """ceil(log^2 n) clipped to [2, n / 4]."""
    return min(n // 4, max(2, math.ceil(math.log(n) ** 2)))


@dataclass
class Context:
    """What a subcommand needs: the configuration, the constants and where to write."""

    config: Config
    constants: CalibrationConstants
    out: Path
    manifest: ExperimentManifest
    calibration_file: Optional[Path] = None
    failures: List[str] = field(default_factory=list)

    @property
    def run(self) -> Dict[str, Any]:
        return dict(self.config["run"])

    def l(self, n: int) -> int:
        value = self.config.get("run", "l")
        l = auto_l(n) if str(value).lower() == "auto" else int(value)
        self.manifest.results["l"] = l
        return l

    def emit(self, name: str, records: Optional[List[TrialRecord]], summary: Dict[str, Any]):
        """Writes <name>.csv (when there are records) and <name>.json next to the manifest."""
        if records is not None:
            self.manifest.add_report(write_csv(self.out / f"{name}.csv", records))
        self.manifest.add_report(write_json(self.out / f"{name}.json", summary))

    def check(self, ok: bool, message: str) -> None:
        if not ok:
            log.error("acceptance check failed: %s", message)
            self.failures.append(message)


def _calibrate(ctx: Context) -> None:
    run = ctx.run
    constants = calibrate(ctx.config.dist(), run["n"], run["trials"], run["seed"], run["threads"])
    assert ctx.calibration_file is not None
    constants.save(ctx.calibration_file)
    log.info("calibration written to %s", ctx.calibration_file)
    ctx.constants = constants
    ctx.manifest.calibration = constants.to_dict()
    ctx.manifest.results["calibration_file"] = str(ctx.calibration_file)
    ctx.emit("calibration", None, constants.to_dict())


def _deloc_scan(ctx: Context) -> None:
    run = ctx.run
    n_list = list(ctx.config.get("experiments", "n_list")) or [run["n"]]
    report = eigenvector_deloc_scan(
        n_list,
        ctx.config.dist(),
        run["trials"],
        run["t"],
        run["seed"],
        ctx.constants,
        run["threads"],
    )
    summary: Dict[str, Any] = {
        "family": report.family,
        "t": report.t,
        "envelope": {str(n): bound for n, bound in report.envelope.items()},
        "summaries": {str(n): asdict(s) for n, s in report.summaries.items()},
        "violations": report.violations,
        "eigenpair_failures": report.failures,
    }
    if len(n_list) > 1:
        summary["scaling_spread"] = report.scaling_spread()
    ctx.emit("deloc_scan", report.records, summary)
    ctx.check(report.violations == 0, f"{report.violations} trial(s) above the envelope")


def _test_projection(ctx: Context) -> None:
    run = ctx.run
    n, dist, z = run["n"], ctx.config.dist(), ctx.config.z()
    l = ctx.l(n)
    c_window = ctx.config.get("spectral_window", "c_window")

    def trial_fn(trial: int, rng: random.Generator) -> TrialRecord:
        A = draw(dist, rng, (n, n)) - z * np.eye(n)
        try:
            tp = build_test_projection(TestProjectionInput(A, l), c_window, rng)
            # P must not depend on the designated columns 0, ..., l - 1.
            B = A.copy()
            B[:, :l] = draw(dist, rng, (n, l))
            other = build_test_projection(TestProjectionInput(B, l), c_window, rng)
        except StageError as exc:
            log.warning("trial %d: %s", trial, exc)
            return TrialRecord(trial, n, float("nan"), COISOMETRY_TOLERANCE, True, {"stage": 1.0})

        error, kernel = coisometry_error(tp), kernel_residual(tp)
        ratio, zero_block = column_norm_ratio(tp)
        measurable = bool(np.allclose(tp.P, other.P, rtol=0, atol=COISOMETRY_TOLERANCE))
        violated = (
            error > COISOMETRY_TOLERANCE
            or kernel > KERNEL_TOLERANCE
            or not zero_block
            or not measurable
        )
        extras = {
            "kernel": kernel,
            "ratio": ratio,
            "zero_block": float(zero_block),
            "measurable": float(measurable),
            "l_prime": float(tp.l_prime),
        }
        return TrialRecord(trial, n, error, COISOMETRY_TOLERANCE, violated, extras)

    records = TrialRunner(
        trial_fn, run["trials"], run["seed"], run["threads"], [LogProgress("test-projection")]
    ).run()
    violations = sum(r.violated for r in records)
    summary = {
        "n": n,
        "l": l,
        "z": z,
        "coisometry_error": asdict(summarize(r.statistic for r in records)),
        "kernel_residual": asdict(summarize(r.extras.get("kernel", math.nan) for r in records)),
        "column_norm_ratio": asdict(summarize(r.extras.get("ratio", math.nan) for r in records)),
        "violations": violations,
    }
    ctx.emit("test_projection", records, summary)
    ctx.check(violations == 0, f"{violations} test projection(s) broke the contract")


def _distances(ctx: Context) -> None:
    run, section = ctx.run, ctx.config["distances"]
    n = run["n"]
    k = section["k"] or max(4, n // 5)
    k0 = section["k0"] or math.ceil(3 * k / 4)
    k1 = section["k1"] or min(n, k + k // 2)
    spec = DistanceExperimentSpec(
        n,
        k,
        k0,
        k1,
        section["ratio"],
        section["shift"],
        ctx.config.dist(),
        run["trials"],
        run["seed"],
    )
    probe = ctx.constants.probe("anisotropic")
    stats = tail_probability_estimate(spec, probe.lower, probe.upper, run["threads"])
    summary = {
        "n": n,
        "k": k,
        "k0": k0,
        "k1": k1,
        "shift": section["shift"],
        "lower_bound": stats.lower_bound,
        "upper_bound": stats.upper_bound,
        "M": stats.M,
        "lower_frequency": stats.lower_frequency,
        "upper_frequency": stats.upper_frequency,
        "lower_budget": stats.lower_budget,
        "upper_budget": stats.upper_budget,
        "distances": asdict(summarize(stats.samples)),
    }
    ctx.emit("distances", stats.records, summary)
    limit = section["max_violation_rate"]
    ctx.check(stats.lower_frequency <= limit, f"lower-bound violations {stats.lower_frequency}")
    ctx.check(stats.upper_frequency <= limit, f"upper-bound violations {stats.upper_frequency}")


def _sv_probe(ctx: Context) -> None:
    run = ctx.run
    n, dist, name = run["n"], ctx.config.dist(), ctx.config.get("sv_probes", "probe")
    constants = ctx.constants.probe(name)
    trials, seed, threads = run["trials"], run["seed"], run["threads"]
    m = max(2, n // 4)

    def spec(shape) -> SvProbeSpec:
        return SvProbeSpec(shape, dist, trials, seed, None, constants)

    if name == "smallest_sv":
        stats = smallest_sv_probe(spec((2 * n, n)), threads)
    elif name == "intermediate_sv":
        stats = intermediate_sv_probe(spec((n, n)), n // 2, threads)
    elif name == "product_sv":
        P = coordinate_coisometry(m, n)
        stats = product_sv_probe(P, n, dist, trials, seed, constants, threads)
    elif name == "fat":
        stats = fat_matrix_probe(m, m // 2, spec((m, n)), threads)
    elif name == "tall":
        tall_m = max(1, n // 16)
        k = max(4 * tall_m, math.ceil(constants.upper * tall_m))
        stats = tall_matrix_probe(tall_m, k, spec((tall_m, n)), threads)
    elif name == "small_ball":
        stats = small_ball_probe(np.eye(n), np.zeros(n), dist, trials, seed, constants, threads)
    elif name == "product_norm":
        B = np.eye(n // 2, n)
        stats = product_norm_probe(
            B, dist, n, trials=trials, seed=seed, constants=constants, threads=threads
        )
    else:
        raise ConfigurationError(f"unknown singular value probe: {name}")

    summary = {
        "probe": name,
        "threshold": stats.threshold,
        "violations": stats.violations,
        "violation_frequency": stats.violation_frequency,
        "budget": stats.budget,
        "summary": asdict(stats.summary),
        "extras": stats.extras,
    }
    ctx.emit(name, stats.records, summary)
    limit = ctx.config.get("sv_probes", "max_violation_rate")
    ctx.check(stats.violation_frequency <= limit, f"{name} violations {stats.violation_frequency}")
    if "prefix_failures" in stats.extras:
        ctx.check(stats.extras["prefix_failures"] == 0, "prefix inequality failed")
    if "identity_failures" in stats.extras:
        ctx.check(stats.extras["identity_failures"] == 0, "negative second moment mismatch")


def _balancing(ctx: Context) -> None:
    run = ctx.run
    n = run["n"]
    l = ctx.l(n)
    estimate = balancing_event_mc(
        n,
        l,
        ctx.config.z(),
        ctx.config.dist(),
        run["trials"],
        ctx.constants,
        run["seed"],
        run["threads"],
    )
    summary = {
        "n": n,
        "l": l,
        "z": estimate.z,
        "alpha": estimate.alpha,
        "kappa": estimate.kappa,
        "frequency": estimate.frequency,
        "interval": list(estimate.interval),
        "target": estimate.target,
        "stage_errors": estimate.stage_errors,
    }
    ctx.emit("balancing", estimate.records, summary)
    ctx.check(
        estimate.frequency >= estimate.target - 3 * estimate.half_width,
        f"balancing frequency {estimate.frequency} below {estimate.target}",
    )


def _localize(ctx: Context) -> None:
    run, section = ctx.run, ctx.config["experiments"]
    n, dist = run["n"], ctx.config.dist()
    l = ctx.l(n)
    W = main_threshold(n, l, ctx.constants.C_W)
    w = section["w"]
    net = disc_net(2 * ctx.constants.C1 * math.sqrt(n), 1 / math.sqrt(n))
    size = min(section["net_samples"], len(net))
    picks = stream(run["seed"]).choice(len(net), size=size, replace=False)
    points = [net[i] for i in sorted(picks)]

    def trial_fn(trial: int, rng: random.Generator) -> TrialRecord:
        G = draw(dist, rng, (n, n))
        params = OptimizerParams(
            section["rounds"],
            section["iterations"],
            section["starts"],
            seed=derive_seed(run["seed"], trial),
        )
        result = localization_search(G, W, l, points, params)
        _, recomputed = approx_eigen_residual(G, result.vector)
        agrees = abs(recomputed - result.residual) <= RESIDUAL_RECHECK_TOLERANCE * max(
            1.0, result.residual
        )
        extras = {
            "inf_norm": result.inf_norm,
            "feasible": float(result.feasible),
            "recomputed": recomputed,
            "agrees": float(agrees),
        }
        witness = result.is_witness(w)
        return TrialRecord(trial, n, result.residual, w / math.sqrt(n), witness, extras)

    records = TrialRunner(
        trial_fn, run["trials"], run["seed"], run["threads"], [LogProgress("localize")]
    ).run()
    witnesses = sum(r.violated for r in records)
    disagreements = sum(not r.extras["agrees"] for r in records)
    summary = {
        "n": n,
        "l": l,
        "W": W,
        "w": w,
        "net_size": len(net),
        "net_points": points,
        "witnesses": witnesses,
        "residual_disagreements": disagreements,
        "residuals": asdict(summarize(r.statistic for r in records)),
    }
    ctx.emit("localize", records, summary)
    rate = witnesses / len(records)
    ctx.check(rate <= section["max_witness_rate"], f"localization witnesses in {rate:.2%}")
    ctx.check(disagreements == 0, f"{disagreements} residual(s) failed recomputation")


def _pipeline(ctx: Context) -> None:
    run, section = ctx.run, ctx.config["experiments"]
    spec = PipelineSpec(
        run["n"],
        run["t"],
        run["s"],
        ctx.config.dist(),
        run["trials"],
        run["seed"],
        section["w"],
        section["net_samples"],
        OptimizerParams(section["rounds"], section["iterations"], section["starts"]),
        ctx.constants,
    )
    result = full_pipeline(spec, run["threads"])
    ctx.manifest.results.update(vacuous=result.vacuous, l=result.manifest["l"])
    if result.report is not None:
        ctx.emit("pipeline_deloc", result.report.records, {"violations": result.report.violations})
        ctx.emit("pipeline_localize", result.records, result.manifest["localization"])
    ctx.emit("pipeline", None, result.manifest)
    if not result.vacuous:
        ctx.check(result.report is not None and result.report.violations == 0, "envelope violated")


HANDLERS: Dict[str, Callable[[Context], None]] = {
    "calibrate": _calibrate,
    "deloc-scan": _deloc_scan,
    "test-projection": _test_projection,
    "distances": _distances,
    "sv-probe": _sv_probe,
    "balancing": _balancing,
    "localize": _localize,
    "pipeline": _pipeline,
}


def _execute(
    subcommand: str,
    config: Config,
    constants: CalibrationConstants,
    out: Path,
    calibration_file: Optional[Path] = None,
    calibration_snapshot: bool = True,
) -> int:
    manifest = ExperimentManifest(
        subcommand,
        config.to_dict(),
        constants.to_dict() if calibration_snapshot else None,
        config.get("run", "seed"),
        version(),
    )
    ctx = Context(config, constants, out, manifest, calibration_file)
    started = time.perf_counter()
    log.info("running %s, writing to %s", subcommand, out)
    HANDLERS[subcommand](ctx)
    manifest.wall_clock = time.perf_counter() - started
    manifest.save(out / "manifest.json")

    if ctx.failures:
        raise AcceptanceError("; ".join(ctx.failures))
    return EXIT_OK


def run(
    subcommand: str,
    config_path: Optional[str] = None,
    overrides: Sequence[str] = (),
    out: str = "results",
    calibration: Optional[str] = None,
) -> int:
    """Runs one subcommand and writes its reports and manifest into `out`.

    Returns 0 on success. Raises ConfigurationError (exit code 1) before any sampling when the
    configuration or a required calibration file is invalid, and AcceptanceError (exit code 2)
    after the reports are written when an acceptance check fails.

    """
    if subcommand not in HANDLERS:
        raise ConfigurationError(f"unknown subcommand: {subcommand}")
    config = load_config(config_path, overrides)
    dist = config.dist()
    calibration_file = Path(calibration) if calibration else calibration_path(dist)

    if subcommand in UNCALIBRATED:
        constants = CalibrationConstants(dist.kind.value)
    else:
        if calibration and not calibration_file.is_file():
            raise CalibrationMissingError(f"no calibration file at {calibration_file}")
        constants = (
            CalibrationConstants.load(calibration_file)
            if calibration
            else load_calibration(dist)
        )
    return _execute(
        subcommand,
        config,
        constants,
        Path(out),
        calibration_file,
        subcommand not in UNCALIBRATED,
    )


def replay(manifest_path: str, out: str, threads: Optional[int] = None) -> int:
    """Re-runs a recorded command from its manifest alone."""
    try:
        manifest = ExperimentManifest.load(manifest_path)
    except (OSError, TypeError, ValueError) as exc:
        raise ConfigurationError(f"cannot read manifest {manifest_path}: {exc}") from exc

    values = manifest.config
    if threads is not None:
        values = {**values, "run": {**values["run"], "threads": threads}}
    config = Config(values)
    if manifest.command == "calibrate":
        constants = CalibrationConstants(config.dist().kind.value)
        target = Path(out) / "calibration.snapshot.json"
    else:
        snapshot = manifest.calibration
        constants = (
            CalibrationConstants.from_dict(snapshot)
            if snapshot is not None
            else CalibrationConstants(config.dist().kind.value)
        )
        target = None
    return _execute(
        manifest.command, config, constants, Path(out), target, manifest.calibration is not None
    )


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI file with one section per module")
    common.add_argument("--calibration", help="calibration JSON file")
    common.add_argument("--out", default="results", help="output directory")
    common.add_argument("--n", type=int, help="dimension")
    common.add_argument("--trials", type=int)
    common.add_argument("--seed", type=int)
    common.add_argument("--threads", type=int)
    common.add_argument("--l", help="integer or 'auto' for ceil(log^2 n)")
    common.add_argument(
        "--set",
        action="append",
        default=[],
        metavar="SECTION.KEY=VALUE",
        help="override a config value; may be repeated",
    )
    common.add_argument("--log-level", default="INFO")

    parser = argparse.ArgumentParser(
        prog="deloc", description="Monte Carlo checks of eigenvector delocalization."
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {version()}")
    commands = parser.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        commands.add_parser(name, parents=[common])
    replay_parser = commands.add_parser("replay", parents=[common])
    replay_parser.add_argument("manifest", help="manifest.json of an earlier run")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(
        level=args.log_level.upper(),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )

    overrides = list(args.set)
    for flag in ("n", "trials", "seed", "threads", "l"):
        value = getattr(args, flag)
        if value is not None:
            overrides.append(f"run.{flag}={value}")

    try:
        if args.command == "replay":
            return replay(args.manifest, args.out, args.threads)
        return run(args.command, args.config, overrides, args.out, args.calibration)
    except (ConfigurationError, ValueError) as exc:
        log.error("configuration error: %s", exc)
        return EXIT_CONFIGURATION
    except AcceptanceError as exc:
        log.error("acceptance failure: %s", exc)
        return EXIT_ACCEPTANCE
