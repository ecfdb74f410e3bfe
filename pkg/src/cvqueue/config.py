"""Scenario and sweep configuration.

A ScenarioConfig carries every knob of a single run with defaults; a
MatrixConfig expands a template scenario over the loss x penetration x
mode grid with paired seeds. Configs load from ``key = value`` INI
sections, and the CLI applies flag overrides on top.
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field, replace

from .pipeline import ALL_MODES, PipelineMode
from .traffic import QUEUE_SPEED_THRESHOLD, CarFollowingParams, SignalState

DEFAULT_LOSSES = (0.02, 0.04, 0.08, 0.16)
DEFAULT_PENETRATIONS = (0.10, 0.20, 0.30, 0.40, 0.50, 0.75, 1.00)


def mode_from_name(name: str) -> PipelineMode:
    for mode in ALL_MODES:
        if mode.name == name:
            return mode
    raise ValueError(f"unknown mode name: {name!r}")


@dataclass
class ScenarioConfig:
    """Every parameter of one scenario run, with desk-scale defaults.

    The corridor geometry defaults were calibrated so the all-vehicle
    mean speed crosses the queue threshold once per signal cycle (queue
    share around 30% of intervals after a short warmup).
    """

    # traffic
    corridor_length: float = 600.0
    signal_position: float = 560.0
    green_s: float = 150.0
    red_s: float = 150.0
    demand_rate: float = 0.30
    v_max: float = 6.0
    accel: float = 1.5
    decel: float = 3.0
    min_gap: float = 2.0
    vehicle_length: float = 5.0
    dt: float = 0.1
    queue_threshold: float = QUEUE_SPEED_THRESHOLD

    # channel
    loss_rate: float = 0.02
    rsu_position: float | None = None  # default: corridor midpoint
    range_m: float | None = None       # default: whole corridor

    # learning
    svm_c: float = 1.0
    svm_tol: float = 1e-4
    svm_max_iter: int = 10000

    # windowing
    window_capacity: int = 100
    adwin_delta: float = 0.01

    # pipeline
    aggregation_interval: float = 10.0
    retrain_every: int = 1
    bootstrap_duration: float = 900.0
    bootstrap_light_duration: float = 300.0
    bootstrap_light_demand: float = 0.06
    min_retrain_size: int = 30
    rescue_slots: int = 3

    # run
    cv_penetration: float = 1.0
    mode: PipelineMode = field(default_factory=lambda: ALL_MODES[0])
    seed: int = 1
    duration: float = 3600.0

    def __post_init__(self) -> None:
        if self.rsu_position is None:
            self.rsu_position = self.corridor_length / 2.0
        if self.range_m is None:
            self.range_m = self.corridor_length
        if not 0.0 <= self.loss_rate <= 1.0:
            raise ValueError("loss_rate must lie in [0, 1]")
        if not 0.0 < self.cv_penetration <= 1.0:
            raise ValueError("cv_penetration must lie in (0, 1]")
        if self.signal_position >= self.corridor_length:
            raise ValueError("signal must sit inside the corridor")
        cycle = self.green_s + self.red_s
        if self.duration < 10 * cycle:
            raise ValueError("duration must cover at least 10 signal cycles")
        if self.retrain_every < 1:
            raise ValueError("retrain_every must be >= 1")
        n_int = self.duration / self.aggregation_interval
        if abs(n_int - round(n_int)) > 1e-9:
            raise ValueError("duration must be a whole number of intervals")
        slots_per_interval = int(round(self.aggregation_interval / self.dt))
        if not 1 <= self.rescue_slots <= slots_per_interval:
            raise ValueError("rescue_slots must fit inside one interval")

    def car_params(self) -> CarFollowingParams:
        return CarFollowingParams(v_max=self.v_max, accel=self.accel,
                                  decel=self.decel, min_gap=self.min_gap,
                                  vehicle_length=self.vehicle_length, dt=self.dt)

    def signal(self) -> SignalState:
        return SignalState(location=self.signal_position, green_s=self.green_s,
                           red_s=self.red_s)

    def n_intervals(self) -> int:
        return int(round(self.duration / self.aggregation_interval))


@dataclass
class MatrixConfig:
    """Sweep grid: modes x losses x penetrations x paired seeds."""

    template: ScenarioConfig = field(default_factory=ScenarioConfig)
    losses: tuple[float, ...] = DEFAULT_LOSSES
    penetrations: tuple[float, ...] = DEFAULT_PENETRATIONS
    modes: tuple[PipelineMode, ...] = ALL_MODES
    n_seeds: int = 5
    base_seed: int = 1

    def seeds(self) -> tuple[int, ...]:
        return tuple(self.base_seed + i for i in range(self.n_seeds))

    def scenario(self, loss: float, pen: float, mode: PipelineMode,
                 seed: int) -> ScenarioConfig:
        return replace(self.template, loss_rate=loss, cv_penetration=pen,
                       mode=mode, seed=seed)


_SCENARIO_FIELDS = {f.name: f.type for f in dataclasses.fields(ScenarioConfig)}
_INT_FIELDS = {"svm_max_iter", "window_capacity", "retrain_every", "seed",
               "min_retrain_size", "rescue_slots"}


def _parse_scenario_value(key: str, raw: str):
    if key == "mode":
        return mode_from_name(raw)
    if key in _INT_FIELDS:
        return int(raw)
    return float(raw)


def load_config(path) -> MatrixConfig:
    """Read a MatrixConfig from an INI file.

    Scenario fields may appear in any of the [traffic], [channel],
    [learning], [windowing], [pipeline], [run] sections; the [matrix]
    section holds losses, penetrations, modes, n_seeds and base_seed as
    comma-separated lists / scalars. Unknown keys are rejected.
    """
    parser = configparser.ConfigParser()
    with open(path) as fh:
        parser.read_file(fh)
    scenario_kwargs = {}
    matrix_kwargs = {}
    for section in parser.sections():
        for key, raw in parser.items(section):
            if section == "matrix":
                if key == "losses":
                    matrix_kwargs["losses"] = tuple(float(v) for v in raw.split(","))
                elif key == "penetrations":
                    matrix_kwargs["penetrations"] = tuple(float(v) for v in raw.split(","))
                elif key == "modes":
                    matrix_kwargs["modes"] = tuple(mode_from_name(v.strip())
                                                   for v in raw.split(","))
                elif key == "n_seeds":
                    matrix_kwargs["n_seeds"] = int(raw)
                elif key == "base_seed":
                    matrix_kwargs["base_seed"] = int(raw)
                else:
                    raise ValueError(f"unknown [matrix] key: {key}")
            else:
                if key not in _SCENARIO_FIELDS:
                    raise ValueError(f"unknown scenario key: {key}")
                scenario_kwargs[key] = _parse_scenario_value(key, raw)
    return MatrixConfig(template=ScenarioConfig(**scenario_kwargs), **matrix_kwargs)
