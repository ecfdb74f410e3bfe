"""Training-window maintenance: fixed-capacity FIFO and adaptive cut.

The adaptive window watches a bounded real-valued signal (here: the
per-interval prediction-correctness bit) and drops its oldest prefix
whenever some split of the window into prefix/suffix shows a mean
difference that a Hoeffding-style bound deems significant:

    eps_cut = sqrt( ln(4 / delta') / (2 m) ),   m = 1 / (1/n0 + 1/n1),
    delta'  = delta / n

with n the current window length. Splits are evaluated exhaustively
after every insert (the exact desk-scale form, quadratic worst case);
the first satisfying prefix (scanning oldest-first) is dropped and the
scan restarts until no split fires.
"""

from __future__ import annotations

import csv
import math
from typing import Sequence

import numpy as np


class FixedWindow:
    """FIFO training buffer of constant capacity; oldest entries first."""

    def __init__(self, capacity: int, samples: Sequence = ()):
        if capacity <= 0:
            raise ValueError("capacity must be a positive count")
        self.capacity = capacity
        self.samples: list = list(samples)
        if len(self.samples) > capacity:
            raise ValueError("initial samples exceed capacity")

    def __len__(self) -> int:
        return len(self.samples)

    def extend(self, new_samples: Sequence) -> None:
        self.samples.extend(new_samples)
        overflow = len(self.samples) - self.capacity
        if overflow > 0:
            del self.samples[:overflow]


def fixed_update(window: FixedWindow, new_samples: Sequence) -> FixedWindow:
    """Append then evict exactly the overflow from the oldest end."""
    window.extend(new_samples)
    return window


def eps_cut(n0: int, n1: int, n: int, delta: float) -> float:
    """Cut threshold for a prefix/suffix split of an n-long window."""
    delta_prime = delta / n
    m = 1.0 / (1.0 / n0 + 1.0 / n1)
    return math.sqrt(math.log(4.0 / delta_prime) / (2.0 * m))


class AdwinWindow:
    """Adaptive-size window over a stream of bounded reals."""

    def __init__(self, delta: float = 0.01, values: Sequence[float] = ()):
        if not 0.0 < delta < 1.0:
            raise ValueError("delta must lie in (0, 1)")
        self.delta = delta
        self.values: list[float] = [float(v) for v in values]

    def __len__(self) -> int:
        return len(self.values)

    def mean(self) -> float:
        return float(np.mean(self.values)) if self.values else 0.0

    def insert(self, value: float) -> bool:
        """Append one observation, then shed any significant old prefix.

        Returns True when at least one prefix was dropped.
        """
        if not math.isfinite(value):
            raise ValueError("monitored values must be finite")
        self.values.append(float(value))
        cut_occurred = False
        while True:
            k = self._first_cut_split()
            if k is None:
                break
            del self.values[:k]
            cut_occurred = True
        return cut_occurred

    def _first_cut_split(self) -> int | None:
        n = len(self.values)
        if n < 2:
            return None
        arr = np.asarray(self.values)
        prefix = np.cumsum(arr)
        total = prefix[-1]
        n0 = np.arange(1, n)
        n1 = n - n0
        mean0 = prefix[:-1] / n0
        mean1 = (total - prefix[:-1]) / n1
        log_term = math.log(4.0 * n / self.delta)
        eps = np.sqrt(log_term * 0.5 * (1.0 / n0 + 1.0 / n1))
        hits = np.abs(mean0 - mean1) >= eps
        if not hits.any():
            return None
        return int(np.argmax(hits)) + 1


def adwin_insert(state: AdwinWindow, value: float) -> tuple[AdwinWindow, bool]:
    """Functional form of AdwinWindow.insert."""
    return state, state.insert(value)


def adwin_sync(training_set: list, state: AdwinWindow) -> list:
    """Trim the training set (oldest first) to the adaptive window length."""
    excess = len(training_set) - len(state)
    if excess <= 0:
        return training_set
    return training_set[excess:]


class WindowLogger:
    """Window-evolution log: ``t,policy,window_len,cut_occurred``."""

    HEADER = ["t", "policy", "window_len", "cut_occurred"]

    def __init__(self, path):
        try:
            self._fh = open(path, "w", newline="")
        except OSError as exc:
            raise RuntimeError(f"cannot open window log {path}") from exc
        self._writer = csv.writer(self._fh)
        self._writer.writerow(self.HEADER)

    def log(self, t: float, policy: str, window_len: int, cut_occurred: bool) -> None:
        self._writer.writerow([t, policy, window_len, int(cut_occurred)])

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
        return False
