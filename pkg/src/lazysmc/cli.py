"""Batch command-line front end: simulate, filter, kalman.

Exit codes: 0 ok, 2 config error, 3 inference degeneracy, 4 io error.
All outputs are deterministic functions of (config, seed), byte-identical
across runs and worker counts.
"""

from __future__ import annotations

import argparse
import math
import sys

import numpy as np

from .formats import ConfigError, RunConfig, read_dataset, write_dataset, write_result
from .inference import ParticleDegeneracyError, particle_filter, particle_stream
from .model import ObservationSchedule, run_ssm
from .mot import GlobalParams, MultiObjectModel, default_params
from .ssm import (
    LinearGaussianProgram,
    LinearGaussianSSMSpec,
    NonlinearProgram,
    NonlinearSSMSpec,
    kalman_filter,
    simulate_lgssm,
)

_SIMULATE_STREAM = 9

_NONLINEAR_FNS = {
    "linear": lambda x, theta: theta * x,
    "identity": lambda x, theta: x,
    "square": lambda x, theta: x * x,
    "sin": lambda x, theta: math.sin(x),
}


def _lgssm_spec(config: RunConfig) -> LinearGaussianSSMSpec:
    p = config.params
    allowed = {"theta", "init_mean", "init_var", "trans_var", "obs_var", "obs_coeff"}
    spec_kwargs = {k: p[k] for k in allowed if k in p}
    try:
        return LinearGaussianSSMSpec(T=config.T, **spec_kwargs)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _nonlinear_spec(config: RunConfig) -> NonlinearSSMSpec:
    p = config.params
    try:
        f = _NONLINEAR_FNS[p.get("f", "linear")]
        g = _NONLINEAR_FNS[p.get("g", "identity")]
    except KeyError as exc:
        raise ConfigError(
            f"unknown f/g name {exc}; options: {sorted(_NONLINEAR_FNS)}") from exc
    kwargs = {k: p[k] for k in ("theta", "init_mean", "init_var",
                                "trans_var", "obs_var") if k in p}
    return NonlinearSSMSpec(f=f, g=g, T=config.T, **kwargs)


def _mot_params(config: RunConfig) -> GlobalParams:
    p = config.params
    matrix_keys = {"l", "u", "M", "A", "Q", "B", "R"}
    try:
        if matrix_keys <= set(p):
            return GlobalParams.from_dict(p)
        scalars = {k: p[k] for k in ("d", "lam", "mu", "tau") if k in p}
        return default_params(**scalars)
    except (ValueError, KeyError) as exc:
        raise ConfigError(f"bad mot params: {exc}") from exc


def _require_out(config: RunConfig) -> str:
    if not config.out:
        raise ConfigError("an output path is required (--out or config 'out')")
    return config.out


def _require_data(config: RunConfig) -> str:
    if not config.data:
        raise ConfigError("an input dataset is required (--data or config 'data')")
    return config.data


# -- commands -----------------------------------------------------------


def cmd_simulate(config: RunConfig) -> None:
    rng = particle_stream(config.seed, _SIMULATE_STREAM)
    if config.model == "lgssm":
        theta, xs, ys = simulate_lgssm(_lgssm_spec(config), rng)
        rows = [{"t": t + 1, "y": float(y)} for t, y in enumerate(ys)]
        truth = {"theta": theta, "x": [float(x) for x in xs]}
    elif config.model == "nonlinear":
        spec = _nonlinear_spec(config)
        execution = run_ssm(NonlinearProgram(spec), None, config.T, rng)
        execution.run_to_done()
        payload = execution.extract()
        rows = [{"t": t + 1, "y": float(y)}
                for t, y in enumerate(execution.program.sim_obs)]
        truth = payload
    else:
        program = MultiObjectModel(_mot_params(config))
        execution = run_ssm(program, None, config.T, rng)
        execution.run_to_done()
        truth = execution.extract()
        rows = [{"t": t + 1, "observations": [list(map(float, o)) for o in obs]}
                for t, obs in enumerate(program.sim_observations)]
    write_dataset(_require_out(config), config, rows, truth)


def _schedule_from_rows(config: RunConfig, rows: list[dict]) -> ObservationSchedule:
    if len(rows) != config.T:
        raise ConfigError(
            f"dataset has {len(rows)} steps but config.T = {config.T}")
    if config.model == "mot":
        values = {row["t"]: [np.asarray(o, dtype=float) for o in row["observations"]]
                  for row in rows}
    else:
        values = {row["t"]: float(row["y"]) for row in rows}
    return ObservationSchedule(values)


def cmd_filter(config: RunConfig) -> None:
    header, rows, _ = read_dataset(_require_data(config))
    if header["model"] != config.model:
        raise ConfigError(
            f"dataset holds model {header['model']!r}, config asks {config.model!r}")
    schedule = _schedule_from_rows(config, rows)
    if config.model == "lgssm":
        spec = _lgssm_spec(config)
        sampling = config.params.get("sampling", "delayed")
        def factory(sched, rng):
            return run_ssm(LinearGaussianProgram(spec, sampling), sched, config.T, rng)
    elif config.model == "nonlinear":
        spec = _nonlinear_spec(config)
        def factory(sched, rng):
            return run_ssm(NonlinearProgram(spec), sched, config.T, rng)
    else:
        params = _mot_params(config)
        def factory(sched, rng):
            return run_ssm(MultiObjectModel(params), sched, config.T, rng)
    result = particle_filter(factory, schedule, config.particles,
                             config.resample_threshold, config.seed,
                             config.threads)
    sections = [
        {"kind": "evidence", "log_z": result.evidence.log_z,
         "increments": result.evidence.per_step_log_increments},
        {"kind": "ess", "trace": result.ess_trace},
        {"kind": "posterior", "sample": result.posterior.payload,
         "particle_index": result.posterior.particle_index},
    ]
    write_result(_require_out(config), config, sections)


def cmd_kalman(config: RunConfig) -> None:
    if config.model != "lgssm":
        raise ConfigError("kalman mode supports only the lgssm model")
    header, rows, _ = read_dataset(_require_data(config))
    if header["model"] != "lgssm":
        raise ConfigError(f"kalman mode needs an lgssm dataset, got {header['model']!r}")
    if not rows:
        raise ConfigError("dataset holds no observations")
    spec = _lgssm_spec(config)
    if spec.theta is None:
        raise ConfigError("kalman mode requires a fixed theta in params")
    ys = [float(row["y"]) for row in rows]
    oracle = kalman_filter(spec, ys)
    sections = [{
        "kind": "kalman",
        "log_likelihood": oracle.log_lik,
        "step_log_liks": oracle.step_log_liks,
        "filtered_means": oracle.filtered_means,
        "filtered_vars": oracle.filtered_vars,
        "predicted_means": oracle.predicted_means,
        "predicted_vars": oracle.predicted_vars,
    }]
    write_result(_require_out(config), config, sections)


# -- entry point ----------------------------------------------------------


MODES_CHOICES = ("simulate", "filter", "kalman")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lazysmc",
        description="Simulate and filter state-space / tracking models.")
    parser.add_argument("--config", help="JSON config file; flags override its fields")
    parser.add_argument("--mode", choices=MODES_CHOICES)
    parser.add_argument("--model", choices=("lgssm", "nonlinear", "mot"))
    parser.add_argument("--seed", type=int)
    parser.add_argument("--particles", type=int)
    parser.add_argument("--threads", type=int)
    parser.add_argument("--steps", type=int, dest="T", help="number of time steps T")
    parser.add_argument("--resample-threshold", type=float, dest="resample_threshold")
    parser.add_argument("--data", help="input dataset (filter/kalman)")
    parser.add_argument("--out", help="output file path")
    return parser


_COMMANDS = {"simulate": cmd_simulate, "filter": cmd_filter, "kalman": cmd_kalman}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    overrides = {k: getattr(args, k) for k in (
        "mode", "model", "seed", "particles", "threads", "T",
        "resample_threshold", "data", "out")}
    try:
        config = RunConfig.load(args.config, overrides)
        _COMMANDS[config.mode](config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except ParticleDegeneracyError as exc:
        print(f"inference degeneracy: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 4
    return 0


if __name__ == "__main__":
    sys.exit(main())
