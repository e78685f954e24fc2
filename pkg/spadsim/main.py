"""
Command-line entry point of the spadsim toolkit.

This module wires the services into the ``spadsim`` click group:
simulate, sweep, keyrate, hwcheck and bench. Every subcommand reads one
JSON run config, writes its artifacts to the output directory, and ends
with a single machine-readable ``RESULT {...}`` line on stdout.
"""

import functools
import hashlib
import statistics
import time
from pathlib import Path
from typing import Any, Callable, Dict, Optional

import click
import numpy as np
import orjson
from pydantic import ValidationError

from spadsim.config import Settings
from spadsim.constants import EXIT_CODES, RESULT_PREFIX
from spadsim.exceptions import ConfigError, SpadSimError
from spadsim.schemas import BenchSpec, CompensatorConfig, RunConfig, Scenario, load_run_config
from spadsim.services.charstats import dark_at_matched_efficiency, threshold_sweep
from spadsim.services.compensator import process_codes, process_stream
from spadsim.services.hwbudget import budget_check, min_length_for_bandwidth, rf_bandwidth, thermal_flux
from spadsim.services.keyrate import find_gain_crossing, gain_curve, rate_grid
from spadsim.services.sigmodel import simulate_gate_train
from spadsim.utils.io import write_decisions, write_frames, write_gain_curve, write_ground_truth, write_rates, write_sweep
from spadsim.utils.logging import get_logger, log_performance, setup_logging

logger = get_logger(__name__)


class RunContext:
    """Resolved per-invocation options shared by the subcommands."""

    def __init__(self, config: RunConfig, out_dir: Path, seed: Optional[int], threads: int):
        self.config = config
        self.out_dir = out_dir
        self.seed = seed
        self.threads = threads

    def scenario(self, scenario: Optional[Scenario] = None) -> Scenario:
        """Scenario with the --seed override applied (re-validated)."""
        scenario = scenario or self.config.scenario
        if self.seed is None:
            return scenario
        return Scenario.model_validate({**scenario.model_dump(), "seed": self.seed})

    def path(self, name: str) -> Path:
        return self.out_dir / name


def emit_result(summary: Dict[str, Any]) -> None:
    """Print the final machine-readable summary line."""
    click.echo(RESULT_PREFIX + orjson.dumps(summary, option=orjson.OPT_SORT_KEYS | orjson.OPT_SERIALIZE_NUMPY).decode())


def run_options(func: Callable) -> Callable:
    """Shared --config/--out/--seed/--threads options and exit-code mapping."""

    @click.option("--config", "config_path", required=True, type=click.Path(dir_okay=False), help="JSON run config.")
    @click.option("--out", "out_dir", default=None, type=click.Path(file_okay=False), help="Output directory.")
    @click.option("--seed", default=None, type=click.IntRange(0, 2**64 - 1), help="Override scenario seeds.")
    @click.option("--threads", default=None, type=click.IntRange(min=1), help="Worker threads (env SPADSIM_THREADS).")
    @click.pass_obj
    @functools.wraps(func)
    def wrapper(settings: Settings, config_path, out_dir, seed, threads):
        name = func.__name__.removeprefix("cmd_")
        try:
            config = load_run_config(config_path)
            directory = Path(out_dir or config.output.directory or settings.OUTPUT_DIR)
            directory.mkdir(parents=True, exist_ok=True)
            ctx = RunContext(config, directory, seed, threads or settings.THREADS)
            start = time.perf_counter()
            code = func(ctx)
            log_performance(name, time.perf_counter() - start)
        except (ConfigError, ValidationError) as e:
            logger.error(f"{name}: configuration error: {e}")
            click.echo(f"error: {e}", err=True)
            raise click.exceptions.Exit(EXIT_CODES["CONFIG_ERROR"])
        except (SpadSimError, OSError) as e:
            logger.error(f"{name}: run failed: {e}")
            click.echo(f"error: {e}", err=True)
            raise click.exceptions.Exit(EXIT_CODES["RUNTIME_ERROR"])
        except Exception as e:
            logger.error(f"{name}: unexpected error: {e}", exc_info=True)
            click.echo(f"error: unexpected {type(e).__name__}: {e}", err=True)
            raise click.exceptions.Exit(EXIT_CODES["RUNTIME_ERROR"])
        raise click.exceptions.Exit(code or EXIT_CODES["OK"])

    return wrapper


@click.group()
@click.option("--log-level", default=None, help="Logging level (defaults to SPADSIM_LOG_LEVEL).")
@click.pass_context
def cli(ctx: click.Context, log_level: Optional[str]) -> None:
    """Gated single-photon avalanche detector simulation toolkit."""
    settings = Settings()
    setup_logging(level=log_level or settings.LOG_LEVEL)
    ctx.obj = settings


@cli.command("simulate")
@run_options
def cmd_simulate(ctx: RunContext) -> int:
    """Simulate a gate train and discriminate it."""
    ctx.config.require("scenario", "compensator")
    scenario = ctx.scenario()
    compensator = ctx.config.compensator

    start = time.perf_counter()
    result = simulate_gate_train(scenario, threads=ctx.threads)
    log_performance("simulate_gate_train", time.perf_counter() - start, scenario.n_gates * scenario.n_channels)

    streams = []
    channels = []
    for frames, truth in zip(result.frames, result.truth):
        decisions, state = process_stream(frames, compensator, scenario.adc)
        streams.append(decisions)
        write_frames(ctx.path(f"frames_ch{frames.channel}.bin"), frames)
        write_ground_truth(ctx.path(f"ground_truth_ch{frames.channel}.csv"), truth)
        channels.append(
            {
                "channel": frames.channel,
                "gates": len(frames),
                "avalanches": int(truth.avalanche.sum()),
                "causes": truth.cause_counts(),
                "clicks": int(decisions.click.sum()),
                "withheld": int(decisions.withheld.sum()),
                "template_accepted": state.accepted_count,
                "template_rejected": state.rejected_count,
                "frame_checksum": frames.checksum(),
            }
        )
        click.echo(
            f"channel {frames.channel}: {len(frames)} gates, {channels[-1]['avalanches']} avalanches, "
            f"{channels[-1]['clicks']} clicks, {channels[-1]['withheld']} withheld"
        )
    write_decisions(ctx.path("decisions.csv"), streams)

    emit_result({"command": "simulate", "seed": scenario.seed, "channels": channels, "out": str(ctx.out_dir)})
    return EXIT_CODES["OK"]


@cli.command("sweep")
@run_options
def cmd_sweep(ctx: RunContext) -> int:
    """P_PD / P_DK versus discrimination level, optionally A/B."""
    ctx.config.require("scenario", "compensator", "sweep")
    spec = ctx.config.sweep
    thresholds = spec.threshold_values()

    def sweep(scenario: Scenario, filename: str):
        result = threshold_sweep(
            ctx.scenario(scenario),
            thresholds,
            ctx.config.compensator,
            threads=ctx.threads,
            reprocess=spec.reprocess,
            poisson_mu=spec.poisson_mu,
        )
        write_sweep(ctx.path(filename), result.rows)
        return result

    sweep_a = sweep(ctx.config.scenario, "sweep.csv")
    click.echo(f"{'v_th':>10} {'p_pd':>10} {'p_dk':>12}")
    for row in sweep_a.rows:
        click.echo(f"{row.v_th:>10.5f} {row.p_pd:>10.5f} {row.p_dk:>12.4e}")

    summary: Dict[str, Any] = {
        "command": "sweep",
        "rows": len(sweep_a),
        "frame_checksum": sweep_a.rows[0].frame_checksum,
    }
    if spec.scenario_b is not None:
        sweep_b = sweep(spec.scenario_b, "sweep_b.csv")
        ratio = dark_at_matched_efficiency(sweep_a, sweep_b, spec.target_p_pd)
        click.echo(f"dark_at_matched_efficiency at P_PD={spec.target_p_pd}: {ratio:.6f}")
        summary["dark_ratio"] = ratio
        summary["target_p_pd"] = spec.target_p_pd
    emit_result(summary)
    return EXIT_CODES["OK"]


@cli.command("keyrate")
@run_options
def cmd_keyrate(ctx: RunContext) -> int:
    """Key-rate grid and dark-count gain curve."""
    ctx.config.require("keyrate")
    grid = ctx.config.keyrate
    losses = grid.loss_values()

    points = rate_grid(grid.base, losses, grid.mu, grid.p_dk)
    write_rates(ctx.path("rates.csv"), points)
    curve = gain_curve(grid.base, losses, grid.reduction_factor)
    write_gain_curve(ctx.path("gain.csv"), curve)
    crossing = find_gain_crossing(grid.base, losses, grid.target_ratio, grid.reduction_factor)

    summary: Dict[str, Any] = {
        "command": "keyrate",
        "points": len(points),
        "gain_points": len(curve),
        "target_ratio": grid.target_ratio,
        "crossing_loss_db": None,
        "crossing_ratio": None,
    }
    if crossing is not None:
        click.echo(f"dark-count gain {crossing.ratio:.4f} at {crossing.loss_db:.4f} dB")
        summary["crossing_loss_db"] = crossing.loss_db
        summary["crossing_ratio"] = crossing.ratio
    else:
        click.echo(f"dark-count gain never reaches {grid.target_ratio} on the loss grid")
    emit_result(summary)
    return EXIT_CODES["OK"]


@cli.command("hwcheck")
@run_options
def cmd_hwcheck(ctx: RunContext) -> int:
    """Bond-wire bandwidth and thermal budget check; nonzero exit on budget failure."""
    ctx.config.require("hw")
    hw = ctx.config.hw
    calibration = "wires" not in hw.model_fields_set

    bandwidth = rf_bandwidth(hw.rf)
    length = min_length_for_bandwidth(hw.rf, hw.target_bandwidth_hz)
    thermal = thermal_flux(hw.wires, hw.delta_t_k)
    check = budget_check(thermal.total_mw, hw.budget_mw)

    ceiling = ">= " if bandwidth.reached_ceiling else ""
    bound = ">= " if length.at_bound else ""
    click.echo(f"RF link: {hw.rf.wire_length_mm:.3f} mm, L = {hw.rf.inductance_h * 1e9:.3f} nH")
    click.echo(f"  -3 dB bandwidth      {ceiling}{bandwidth.f_3db_hz / 1e9:.4f} GHz")
    click.echo(f"  max length @ {hw.target_bandwidth_hz / 1e9:.3f} GHz  {bound}{length.length_mm:.4f} mm")
    click.echo(f"Thermal harness ({'calibration default' if calibration else 'configured'}), dT = {hw.delta_t_k} K")
    for wire in thermal.per_wire:
        click.echo(f"  {wire.count:>3} x {wire.material:<24} {wire.flux_mw:>10.3f} mW")
    click.echo(f"  total {thermal.total_mw:.3f} mW / budget {check.budget_mw:.3f} mW -> "
               f"{'PASS' if check.passed else 'FAIL'} (margin {check.margin_mw:.3f} mW)")

    emit_result(
        {
            "command": "hwcheck",
            "f_3db_hz": bandwidth.f_3db_hz,
            "reached_ceiling": bandwidth.reached_ceiling,
            "max_length_mm": length.length_mm,
            "length_at_bound": length.at_bound,
            "flux_mw": thermal.total_mw,
            "budget_mw": check.budget_mw,
            "margin_mw": check.margin_mw,
            "passed": check.passed,
            "harness": "calibration" if calibration else "configured",
        }
    )
    if not check.passed:
        logger.error(f"Thermal flux {thermal.total_mw:.3f} mW exceeds budget {check.budget_mw:.3f} mW")
        return EXIT_CODES["CHECK_FAILED"]
    return EXIT_CODES["OK"]


@cli.command("bench")
@run_options
def cmd_bench(ctx: RunContext) -> int:
    """Compensator throughput on pre-generated single-channel frames."""
    ctx.config.require("scenario")
    scenario = ctx.scenario()
    compensator = ctx.config.compensator or CompensatorConfig()
    bench = ctx.config.bench or BenchSpec()
    if scenario.n_gates < compensator.warmup:
        raise ConfigError(
            f"bench needs n_gates >= warm-up ({compensator.warmup}), got {scenario.n_gates}"
        )

    single = scenario.model_copy(update={"devices": scenario.devices[:1]})
    frames = simulate_gate_train(single, threads=ctx.threads).frames[0]
    codes = np.ascontiguousarray(frames.codes, dtype=np.int64)

    # first call compiles the kernel
    process_codes(codes[: min(len(codes), compensator.warmup + 1)], compensator, scenario.adc)

    rates = []
    peaks = None
    for trial in range(bench.trials):
        start = time.perf_counter()
        peaks, _, _, _ = process_codes(codes, compensator, scenario.adc)
        elapsed = time.perf_counter() - start
        log_performance(f"bench trial {trial}", elapsed, len(codes))
        rates.append(len(codes) / elapsed if elapsed > 0 else float("inf"))

    median = statistics.median(rates)
    report = {
        "command": "bench",
        "gates": len(codes),
        "trials": bench.trials,
        "samples_per_gate": frames.samples_per_gate,
        "bits": frames.bits,
        "gates_per_s_min": min(rates),
        "gates_per_s_median": median,
        "gates_per_s_max": max(rates),
        "ns_per_gate_median": 1e9 / median,
        "meets_target": median >= bench.target_gates_per_s,
        "meets_minimum": median >= bench.min_gates_per_s,
        "output_checksum": hashlib.sha256(np.ascontiguousarray(peaks, dtype="<f8").tobytes()).hexdigest(),
    }
    click.echo(
        f"{len(codes)} gates x {frames.samples_per_gate} samples ({frames.bits} bit): "
        f"min {report['gates_per_s_min']:,.0f} / median {median:,.0f} / max {report['gates_per_s_max']:,.0f} "
        f"gates/s, {report['ns_per_gate_median']:.1f} ns/gate"
    )
    if not report["meets_target"]:
        logger.warning(f"Median throughput {median:,.0f} gates/s below target {bench.target_gates_per_s:,.0f}")
    emit_result(report)
    if not report["meets_minimum"]:
        logger.error(f"Median throughput {median:,.0f} gates/s below minimum {bench.min_gates_per_s:,.0f}")
        return EXIT_CODES["CHECK_FAILED"]
    return EXIT_CODES["OK"]
