"""Deterministic single-corridor traffic microsimulation.

One signalized 1-D corridor: vehicles enter at position 0, follow a
collision-free Krauss-style rule toward the exit at ``corridor_length``,
and stop for a fixed-cycle signal. Queue formation behind the red phase
is the mechanism of interest; everything else is kept minimal.

Determinism contract: identical (seed, params, duration) produce
bit-identical trajectories. All floating-point updates run in a fixed
sequential order (leader first) and time is derived from an integer
tick counter.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

# 5 mph expressed in m/s; the queue / no-queue boundary for ground truth.
QUEUE_SPEED_THRESHOLD = 2.2352


@dataclass
class CarFollowingParams:
    """Kinematic limits shared by every vehicle."""

    v_max: float = 13.9
    accel: float = 1.5
    decel: float = 3.0
    min_gap: float = 2.0
    vehicle_length: float = 5.0
    dt: float = 0.1

    def __post_init__(self) -> None:
        for name in ("v_max", "accel", "decel", "min_gap", "vehicle_length", "dt"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be strictly positive")
        if self.dt > 1.0:
            raise ValueError("dt must be <= 1.0 s")


@dataclass
class SignalState:
    """Fixed-cycle signal; phase is a pure function of time.

    The cycle starts green: green for ``green_s`` seconds, then red for
    ``red_s`` seconds, repeating.
    """

    location: float
    green_s: float = 40.0
    red_s: float = 60.0

    def __post_init__(self) -> None:
        if self.green_s <= 0 or self.red_s <= 0:
            raise ValueError("green_s and red_s must be strictly positive")

    @property
    def cycle_s(self) -> float:
        return self.green_s + self.red_s

    def phase(self, t: float) -> str:
        return "green" if (t % self.cycle_s) < self.green_s else "red"

    def is_green(self, t: float) -> bool:
        return (t % self.cycle_s) < self.green_s


@dataclass
class VehicleState:
    """One vehicle. ``position`` is the front bumper, meters from entry.

    ``cv_draw`` is the uniform variate behind the ``is_cv`` Bernoulli so
    penetration sweeps can re-threshold the same vehicle population
    (``is_cv == cv_draw < penetration``).
    """

    id: int
    position: float
    speed: float
    is_cv: bool
    cv_draw: float = 0.0


@dataclass
class World:
    """Corridor state: vehicles ordered by position (ascending)."""

    corridor_length: float
    signal: SignalState
    params: CarFollowingParams = field(default_factory=CarFollowingParams)
    vehicles: list[VehicleState] = field(default_factory=list)
    tick: int = 0
    pending_spawns: int = 0
    next_id: int = 0

    @property
    def clock(self) -> float:
        return self.tick * self.params.dt

    def mean_speed(self) -> float:
        if not self.vehicles:
            return 0.0
        return sum(v.speed for v in self.vehicles) / len(self.vehicles)


def spawn(world: World, demand_rate: float, cv_penetration: float,
          rng: np.random.Generator) -> World:
    """Maybe add one vehicle at the entry.

    An arrival occurs with probability ``demand_rate * dt``; arrivals that
    find the entry region occupied are deferred, not dropped. The CV flag
    is Bernoulli(cv_penetration) via a retained uniform draw.
    """
    if not 0.0 <= cv_penetration <= 1.0:
        raise ValueError("cv_penetration must lie in [0, 1]")
    p = world.params
    if rng.random() < demand_rate * p.dt:
        world.pending_spawns += 1
    if world.pending_spawns > 0 and _entry_free(world):
        u = float(rng.random())
        world.vehicles.insert(0, VehicleState(
            id=world.next_id,
            position=0.0,
            speed=0.0,
            is_cv=u < cv_penetration,
            cv_draw=u,
        ))
        world.next_id += 1
        world.pending_spawns -= 1
    return world


def _entry_free(world: World) -> bool:
    # A new front bumper sits at 0; the current tail's rear must leave
    # at least min_gap of slack.
    if not world.vehicles:
        return True
    tail = world.vehicles[0]
    p = world.params
    return tail.position - p.vehicle_length - p.min_gap >= 0.0


def step(world: World) -> World:
    """Advance the world by one dt.

    Vehicles update front-to-back so each follower sees its leader's new
    state; speeds are clamped so the net gap never drops below min_gap
    and no vehicle crosses a red stop line. Vehicles past the corridor
    end are removed.
    """
    p = world.params
    world.tick += 1
    t = world.tick * p.dt
    green = world.signal.is_green(t)
    sig_x = world.signal.location
    vehicles = world.vehicles

    for i in range(len(vehicles) - 1, -1, -1):
        veh = vehicles[i]
        v = min(veh.speed + p.accel * p.dt, p.v_max)

        if i + 1 < len(vehicles):
            lead = vehicles[i + 1]  # already moved this step
            slack = lead.position - p.vehicle_length - p.min_gap - veh.position
            slack = max(slack, 0.0)
            v = min(v,
                    math.sqrt(lead.speed * lead.speed + 2.0 * p.decel * slack),
                    slack / p.dt)
        if not green and veh.position <= sig_x:
            slack = max(sig_x - p.min_gap - veh.position, 0.0)
            v = min(v, math.sqrt(2.0 * p.decel * slack), slack / p.dt)

        v = max(v, 0.0)
        new_pos = veh.position + v * p.dt
        # Re-clamp against fp rounding of (slack/dt)*dt.
        if i + 1 < len(vehicles):
            new_pos = min(new_pos, vehicles[i + 1].position - p.vehicle_length - p.min_gap)
        if not green and veh.position <= sig_x:
            new_pos = min(new_pos, sig_x - p.min_gap)
        veh.speed = v
        veh.position = new_pos

    world.vehicles = [v for v in vehicles if v.position <= world.corridor_length]
    return world


def ground_truth(world: World, threshold: float = QUEUE_SPEED_THRESHOLD) -> bool:
    """Queue state: mean speed of ALL vehicles strictly below threshold.

    An empty corridor is not a queue.
    """
    if threshold <= 0:
        raise ValueError("threshold must be strictly positive")
    if not world.vehicles:
        return False
    return world.mean_speed() < threshold


@dataclass
class SlotState:
    """World observation at one broadcast slot."""

    t: float
    ids: np.ndarray
    positions: np.ndarray
    speeds: np.ndarray
    cv_draws: np.ndarray


@dataclass
class Snapshot:
    """Per-interval observation of the corridor used by the edge pipeline.

    ``slots`` holds the final broadcast slots of the interval (oldest
    first, newest last); ``truth`` is the queue label evaluated at the
    interval end (``t_end``). The stored per-vehicle uniforms let
    callers materialize CV flags for any penetration from the same
    vehicle population.
    """

    t_end: float
    slots: list[SlotState]
    truth: bool

    @property
    def t_snap(self) -> float:
        return self.slots[-1].t


def _capture(world: World) -> SlotState:
    return SlotState(
        t=world.clock,
        ids=np.array([v.id for v in world.vehicles], dtype=np.int64),
        positions=np.array([v.position for v in world.vehicles]),
        speeds=np.array([v.speed for v in world.vehicles]),
        cv_draws=np.array([v.cv_draw for v in world.vehicles]),
    )


def record_snapshots(world: World, demand_rate: float, cv_penetration: float,
                     duration: float, interval: float,
                     rng: np.random.Generator, n_slots: int = 3,
                     trace: TrajectoryLogger | None = None) -> list[Snapshot]:
    """Run the corridor for ``duration`` seconds, one Snapshot per interval.

    Spawning happens every tick; each snapshot captures the last
    ``n_slots`` broadcast slots before the interval boundary and the
    queue label at the boundary itself.
    """
    p = world.params
    steps_per_interval = int(round(interval / p.dt))
    n_steps = int(round(duration / p.dt))
    if steps_per_interval <= 0 or n_steps % steps_per_interval != 0:
        raise ValueError("duration must be a whole number of intervals")
    if not 1 <= n_slots <= steps_per_interval:
        raise ValueError("n_slots must fit inside one interval")
    snapshots: list[Snapshot] = []
    slots: list[SlotState] = []

    for k in range(1, n_steps + 1):
        spawn(world, demand_rate, cv_penetration, rng)
        step(world)
        if trace is not None:
            trace.log(world)
        rem = k % steps_per_interval
        if rem == 0:
            snapshots.append(Snapshot(t_end=world.clock, slots=slots,
                                      truth=ground_truth(world)))
            slots = []
        elif steps_per_interval - rem <= n_slots:
            slots.append(_capture(world))
    return snapshots


class TrajectoryLogger:
    """Per-step vehicle trace: ``t,vehicle_id,position_m,speed_mps,is_cv``."""

    HEADER = ["t", "vehicle_id", "position_m", "speed_mps", "is_cv"]

    def __init__(self, path):
        try:
            self._fh = open(path, "w", newline="")
        except OSError as exc:
            raise RuntimeError(f"cannot open trajectory log {path}") from exc
        self._writer = csv.writer(self._fh)
        self._writer.writerow(self.HEADER)

    def log(self, world: World) -> None:
        t = world.clock
        for v in world.vehicles:
            self._writer.writerow([t, v.id, v.position, v.speed, int(v.is_cv)])

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
        return False
