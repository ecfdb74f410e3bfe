"""Soft-margin linear SVM for the queue / no-queue decision.

The classifier consumes two aggregated features (average CV speed,
average CV separation), z-score normalized against the current training
window. Training solves the usual hinge-loss objective through its dual
with a deterministic SMO (maximal-violating-pair working set, second
order gain for the partner index). The tracked training objective is
the negative dual, which the pair updates never increase.

Labels are booleans throughout: True = queue, False = no queue.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import EmptyTrainingSet, StorageFailure

STD_FLOOR = 1e-9


@dataclass(frozen=True)
class FeatureVector:
    avg_speed: float
    avg_separation: float

    def as_array(self) -> np.ndarray:
        return np.array([self.avg_speed, self.avg_separation])


@dataclass(frozen=True)
class LabeledSample:
    features: FeatureVector
    label: bool
    t: float


@dataclass(frozen=True)
class Normalizer:
    """Per-feature z-score parameters (population convention)."""

    mean: tuple[float, float]
    std: tuple[float, float]

    def transform(self, features: FeatureVector) -> np.ndarray:
        return np.array([
            (features.avg_speed - self.mean[0]) / self.std[0],
            (features.avg_separation - self.mean[1]) / self.std[1],
        ])

    def transform_matrix(self, x: np.ndarray) -> np.ndarray:
        return (x - np.asarray(self.mean)) / np.asarray(self.std)


@dataclass(frozen=True)
class SvmModel:
    weights: tuple[float, float]
    bias: float
    C: float

    def decision(self, x_normalized: np.ndarray) -> float:
        return float(self.weights[0] * x_normalized[0]
                     + self.weights[1] * x_normalized[1] + self.bias)


def label_str(label: bool) -> str:
    return "queue" if label else "no_queue"


def features_matrix(samples: Sequence[LabeledSample]) -> np.ndarray:
    return np.array([(s.features.avg_speed, s.features.avg_separation)
                     for s in samples])


def labels_vector(samples: Sequence[LabeledSample]) -> np.ndarray:
    return np.array([1.0 if s.label else -1.0 for s in samples])


def normalize_fit(samples: Sequence[LabeledSample]) -> Normalizer:
    """Per-feature mean/std over the window; std floored at STD_FLOOR."""
    if len(samples) == 0:
        raise EmptyTrainingSet("cannot fit a normalizer on zero samples")
    x = features_matrix(samples)
    mean = x.mean(axis=0)
    std = np.maximum(x.std(axis=0), STD_FLOOR)
    return Normalizer(mean=(float(mean[0]), float(mean[1])),
                      std=(float(std[0]), float(std[1])))


@dataclass
class SmoResult:
    weights: tuple[float, float]
    bias: float
    alpha: np.ndarray
    iterations: int
    converged: bool
    objective_history: list[float]


def smo_solve(x: np.ndarray, y: np.ndarray, C: float, tol: float,
              max_iter: int, alpha0: np.ndarray | None = None,
              track_objective: bool = False) -> SmoResult:
    """Solve the dual SVM problem on normalized features.

    x: (n, d) features, y: (n,) labels in {-1, +1}. alpha0, when given,
    warm-starts the solver; it is clipped to the box and repaired to the
    equality constraint first. Stops once the maximal KKT violation
    (m - M) drops to tol.
    """
    n = x.shape[0]
    k = x @ x.T
    q = (y[:, None] * y[None, :]) * k
    if alpha0 is None:
        alpha = np.zeros(n)
        g = -np.ones(n)
    else:
        alpha = _repair_feasibility(np.clip(alpha0, 0.0, C), y, C)
        g = q @ alpha - 1.0

    diag = np.einsum("ii->i", k).copy()
    tau = 1e-12
    snap = 1e-12 * max(1.0, C)  # treat alphas this close to a bound as bounded
    history: list[float] = []
    if track_objective:
        history.append(_neg_dual(alpha, g))

    it = 0
    converged = False
    while it < max_iter:
        vals = -y * g
        interior_lo = alpha > snap
        interior_hi = alpha < C - snap
        up = ((y > 0) & interior_hi) | ((y < 0) & interior_lo)
        low = ((y > 0) & interior_lo) | ((y < 0) & interior_hi)
        if not up.any() or not low.any():
            converged = True
            break
        vu = np.where(up, vals, -np.inf)
        i = int(np.argmax(vu))
        m = vals[i]
        vl = np.where(low, vals, np.inf)
        big_m = float(np.min(vl))
        if m - big_m <= tol:
            converged = True
            break

        # Second-order partner: maximize gain among violating candidates.
        cand = low & (vals < m)
        bt = m - vals
        at = np.maximum(diag[i] + diag - 2.0 * k[i], tau)
        gain = np.where(cand, bt * bt / at, -np.inf)
        j = int(np.argmax(gain))

        eta = max(diag[i] + diag[j] - 2.0 * k[i, j], tau)
        delta_unc = y[j] * (y[i] * g[i] - y[j] * g[j]) / eta
        if y[i] == y[j]:
            lo = max(0.0, alpha[i] + alpha[j] - C)
            hi = min(C, alpha[i] + alpha[j])
        else:
            lo = max(0.0, alpha[j] - alpha[i])
            hi = min(C, C + alpha[j] - alpha[i])
        aj_new = _snap_bounds(min(max(alpha[j] + delta_unc, lo), hi), C, snap)
        dj = aj_new - alpha[j]
        if dj == 0.0:
            break  # numerically stuck; gap is already at fp resolution
        ai_new = _snap_bounds(min(max(alpha[i] - y[i] * y[j] * dj, 0.0), C), C, snap)
        di = ai_new - alpha[i]
        alpha[j] = aj_new
        alpha[i] = ai_new
        g += q[:, i] * di + q[:, j] * dj
        it += 1
        if track_objective:
            history.append(_neg_dual(alpha, g))

    w = (alpha * y) @ x
    bias = _bias_from_kkt(alpha, y, g, x, w, C)
    return SmoResult(weights=(float(w[0]), float(w[1])), bias=bias,
                     alpha=alpha, iterations=it, converged=converged,
                     objective_history=history)


def _snap_bounds(a: float, C: float, snap: float) -> float:
    if a < snap:
        return 0.0
    if a > C - snap:
        return C
    return a


def _neg_dual(alpha: np.ndarray, g: np.ndarray) -> float:
    # dual = sum(alpha) - 0.5 a'Qa, and Qa = g + 1.
    return float(-(alpha.sum() - 0.5 * alpha @ (g + 1.0)))


def _repair_feasibility(alpha: np.ndarray, y: np.ndarray, C: float) -> np.ndarray:
    """Restore sum(alpha * y) == 0 by shrinking the heavy side, oldest first."""
    s = float(alpha @ y)
    if s == 0.0:
        return alpha
    side = 1.0 if s > 0 else -1.0
    excess = abs(s)
    for t in range(len(alpha)):
        if excess <= 0:
            break
        if y[t] == side and alpha[t] > 0:
            take = min(alpha[t], excess)
            alpha[t] -= take
            excess -= take
    if excess > 1e-9:
        # Cannot happen from a box-feasible alpha, but fall back cold.
        alpha[:] = 0.0
    return alpha


def _bias_from_kkt(alpha, y, g, x, w, C) -> float:
    vals = -y * g
    free = (alpha > 0) & (alpha < C)
    if free.any():
        return float(np.mean(vals[free]))
    up = ((y > 0) & (alpha < C)) | ((y < 0) & (alpha > 0))
    low = ((y > 0) & (alpha > 0)) | ((y < 0) & (alpha < C))
    if up.any() and low.any():
        m = float(np.max(vals[up]))
        big_m = float(np.min(vals[low]))
        return (m + big_m) / 2.0
    return 0.0


def fit_svm(samples: Sequence[LabeledSample], C: float = 1.0, tol: float = 1e-4,
            max_iter: int = 10000,
            warm_alpha: np.ndarray | None = None
            ) -> tuple[SvmModel, np.ndarray | None]:
    """Train on pre-normalized samples; also return the dual variables.

    A single-class window yields the constant classifier for that class
    (zero weights, bias +/-1) and no dual variables.
    """
    if len(samples) == 0:
        raise EmptyTrainingSet("cannot train on zero samples")
    y = labels_vector(samples)
    if np.all(y > 0):
        return SvmModel(weights=(0.0, 0.0), bias=1.0, C=C), None
    if np.all(y < 0):
        return SvmModel(weights=(0.0, 0.0), bias=-1.0, C=C), None
    x = features_matrix(samples)
    res = smo_solve(x, y, C=C, tol=tol, max_iter=max_iter, alpha0=warm_alpha)
    return SvmModel(weights=res.weights, bias=res.bias, C=C), res.alpha


def train(samples: Sequence[LabeledSample], C: float = 1.0, tol: float = 1e-4,
          max_iter: int = 10000,
          warm_alpha: np.ndarray | None = None) -> SvmModel:
    """Train on pre-normalized samples (see fit_svm)."""
    return fit_svm(samples, C=C, tol=tol, max_iter=max_iter,
                   warm_alpha=warm_alpha)[0]


def predict(model: SvmModel, normalizer: Normalizer,
            features: FeatureVector) -> bool:
    """Queue iff the decision value is strictly positive; ties are no-queue."""
    return model.decision(normalizer.transform(features)) > 0.0


def save_checkpoint(path, model: SvmModel, normalizer: Normalizer,
                    window_size: int, timestamp: float) -> None:
    """Write the deployable model state as key = value text."""
    lines = [
        f"weight_speed = {model.weights[0]!r}",
        f"weight_separation = {model.weights[1]!r}",
        f"bias = {model.bias!r}",
        f"C = {model.C!r}",
        f"mean_speed = {normalizer.mean[0]!r}",
        f"mean_separation = {normalizer.mean[1]!r}",
        f"std_speed = {normalizer.std[0]!r}",
        f"std_separation = {normalizer.std[1]!r}",
        f"window_size = {window_size}",
        f"timestamp = {timestamp!r}",
    ]
    try:
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")
    except OSError as exc:
        raise StorageFailure(f"cannot write checkpoint {path}") from exc


def load_checkpoint(path) -> tuple[SvmModel, Normalizer, int, float]:
    try:
        with open(path) as fh:
            raw = dict(line.split(" = ") for line in fh.read().splitlines() if line)
    except OSError as exc:
        raise StorageFailure(f"cannot read checkpoint {path}") from exc
    model = SvmModel(weights=(float(raw["weight_speed"]),
                              float(raw["weight_separation"])),
                     bias=float(raw["bias"]), C=float(raw["C"]))
    norm = Normalizer(mean=(float(raw["mean_speed"]), float(raw["mean_separation"])),
                      std=(float(raw["std_speed"]), float(raw["std_separation"])))
    return model, norm, int(raw["window_size"]), float(raw["timestamp"])
