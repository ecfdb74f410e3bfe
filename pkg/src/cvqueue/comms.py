"""Basic-safety-message broadcast and the lossy roadside channel.

Connected vehicles broadcast one BSM per 0.1 s tick; the roadside unit
hears a BSM when the sender is inside coverage and an independent
Bernoulli drop does not occur. One uniform is drawn per input BSM in
order (even out-of-range ones) so delivery patterns are reproducible
and loss sweeps stay variance-paired on a shared generator.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .traffic import World


@dataclass(frozen=True)
class BSM:
    """One broadcast record; position stands in for latitude/longitude."""

    vehicle_id: int
    timestamp: float
    position: float
    speed: float


@dataclass
class ChannelParams:
    loss_rate: float = 0.0
    rsu_position: float = 0.0
    range_m: float = 1.0

    def __post_init__(self) -> None:
        if not 0.0 <= self.loss_rate <= 1.0:
            raise ValueError("loss_rate must lie in [0, 1]")
        if self.range_m <= 0:
            raise ValueError("range_m must be strictly positive")


def emit(world: World, t: float) -> list[BSM]:
    """One BSM per connected vehicle, in corridor order; non-CVs are silent."""
    return [BSM(vehicle_id=v.id, timestamp=t, position=v.position, speed=v.speed)
            for v in world.vehicles if v.is_cv]


def transmit(bsms: list[BSM], channel: ChannelParams,
             rng: np.random.Generator) -> list[BSM]:
    """Deliver the subset of BSMs that are in range and survive the drop.

    Input order is preserved and payloads are never copied or mutated.
    """
    if not bsms:
        return []
    u = rng.random(len(bsms))
    out = []
    for b, ui in zip(bsms, u):
        if abs(b.position - channel.rsu_position) <= channel.range_m and ui >= channel.loss_rate:
            out.append(b)
    return out


class DeliveryLogger:
    """Delivered-BSM log: ``t,vehicle_id,position_m,speed_mps,delivered``."""

    HEADER = ["t", "vehicle_id", "position_m", "speed_mps", "delivered"]

    def __init__(self, path):
        try:
            self._fh = open(path, "w", newline="")
        except OSError as exc:
            raise RuntimeError(f"cannot open delivery log {path}") from exc
        self._writer = csv.writer(self._fh)
        self._writer.writerow(self.HEADER)

    def log(self, emitted: list[BSM], delivered: list[BSM]) -> None:
        got = {id(b) for b in delivered}
        for b in emitted:
            self._writer.writerow(
                [b.timestamp, b.vehicle_id, b.position, b.speed, int(id(b) in got)])

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
        return False
