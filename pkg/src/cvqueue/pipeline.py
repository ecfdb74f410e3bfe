"""Per-interval edge pipeline: aggregate, predict, verify, retrain.

Three stages mirror the deployment tiers. Vehicles broadcast (mobile
stage); the roadside stage aggregates delivered BSMs into one feature
vector per interval and predicts queue / no-queue with the current
model; the backend stage verifies the prediction against ground truth,
folds the verified sample into the active training-window policy, and
re-fits the model. The prediction path never mutates the model; a new
(model, normalizer) pair is swapped in atomically after each retrain.

Interval conventions: prediction k uses the final broadcast slot of
interval k (the freshest data the roadside can hold when the interval
closes); the truth label is evaluated at the interval boundary. An
interval with zero CVs heard repeats the previous prediction and
contributes nothing to the training window.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Sequence

import numpy as np

from .comms import BSM
from .errors import DegenerateBootstrap, NotBootstrapped, StorageFailure
from .learning import (FeatureVector, LabeledSample, Normalizer, SvmModel,
                       fit_svm, label_str, normalize_fit, predict)
from .traffic import (CarFollowingParams, SignalState, Snapshot, World,
                      record_snapshots)
from .windowing import AdwinWindow, FixedWindow, adwin_sync

if TYPE_CHECKING:
    from .config import ScenarioConfig

DATA = "data"
NO_DATA = "no_data"


@dataclass(frozen=True)
class IntervalAggregate:
    """Roadside-stage aggregate for one interval."""

    t_start: float
    t_end: float
    avg_speed: float | None
    avg_separation: float | None
    n_cvs_heard: int
    status: str

    def features(self) -> FeatureVector:
        return FeatureVector(avg_speed=self.avg_speed,
                             avg_separation=self.avg_separation)


@dataclass(frozen=True)
class PipelineMode:
    """Learner mode: frozen model, or feedback with a window policy."""

    feedback: bool
    window_policy: str = "fixed"  # meaningful only when feedback is True
    retrain_every: int = 1

    def __post_init__(self) -> None:
        if self.window_policy not in ("fixed", "dynamic"):
            raise ValueError("window_policy must be 'fixed' or 'dynamic'")
        if self.retrain_every < 1:
            raise ValueError("retrain_every must be >= 1")

    @property
    def name(self) -> str:
        if not self.feedback:
            return "no_feedback"
        return f"feedback_{self.window_policy}"


MODE_NO_FEEDBACK = PipelineMode(feedback=False)
MODE_FEEDBACK_FIXED = PipelineMode(feedback=True, window_policy="fixed")
MODE_FEEDBACK_DYNAMIC = PipelineMode(feedback=True, window_policy="dynamic")
ALL_MODES = (MODE_NO_FEEDBACK, MODE_FEEDBACK_FIXED, MODE_FEEDBACK_DYNAMIC)


@dataclass(frozen=True)
class IntervalRecord:
    interval: int
    prediction: bool
    truth: bool
    aggregate: IntervalAggregate


Timeline = list  # list[IntervalRecord], chronological, one per interval


def aggregate(delivered_bsms: Sequence[BSM], t_start: float, t_end: float,
              fallback_separation: float) -> IntervalAggregate:
    """Reduce an interval's delivered BSMs to the two model features.

    Uses the latest BSM per distinct CV. avg_separation is the mean gap
    between consecutive CVs ordered by position; with a single CV it
    falls back to the maximal observable separation (the RSU range).
    """
    latest: dict[int, BSM] = {}
    for b in delivered_bsms:
        if not t_start <= b.timestamp < t_end:
            raise ValueError("BSM timestamp outside the aggregation interval")
        prev = latest.get(b.vehicle_id)
        if prev is None or b.timestamp >= prev.timestamp:
            latest[b.vehicle_id] = b
    n = len(latest)
    if n == 0:
        return IntervalAggregate(t_start=t_start, t_end=t_end, avg_speed=None,
                                 avg_separation=None, n_cvs_heard=0,
                                 status=NO_DATA)
    ordered = sorted(latest.values(), key=lambda b: b.position)
    avg_speed = sum(b.speed for b in ordered) / n
    if n == 1:
        avg_sep = fallback_separation
    else:
        gaps = [ordered[i + 1].position - ordered[i].position for i in range(n - 1)]
        avg_sep = sum(gaps) / len(gaps)
    return IntervalAggregate(t_start=t_start, t_end=t_end, avg_speed=avg_speed,
                             avg_separation=avg_sep, n_cvs_heard=n, status=DATA)


def snapshot_bsms(snap: Snapshot, cv_penetration: float) -> list[list[BSM]]:
    """Materialize the per-slot broadcasts of one snapshot.

    Equivalent to running emit() at each slot on a world whose CV flags
    were drawn at this penetration: the stored uniforms are
    re-thresholded, so sweeps over penetration share one vehicle
    population. Slots come oldest first.
    """
    out = []
    for slot in snap.slots:
        bsms = []
        for i in range(len(slot.ids)):
            if slot.cv_draws[i] < cv_penetration:
                bsms.append(BSM(vehicle_id=int(slot.ids[i]), timestamp=slot.t,
                                position=float(slot.positions[i]),
                                speed=float(slot.speeds[i])))
        out.append(bsms)
    return out


def assemble_interval(delivered_slots: list[list[BSM]]) -> list[BSM]:
    """Pick the BSMs the roadside aggregates for one interval.

    The freshest slot alone is used when it heard at least two distinct
    CVs; otherwise the view widens to every retained slot (the
    latest-per-CV rule in aggregate() then resolves duplicates). This
    keeps interval features maximally fresh while making data *presence*
    depend on which CVs exist rather than on single-slot packet luck.
    """
    final = delivered_slots[-1]
    if len({b.vehicle_id for b in final}) >= 2:
        return final
    return [b for slot in delivered_slots for b in slot]


@dataclass
class BootstrapResult:
    model: SvmModel
    normalizer: Normalizer
    samples: list[LabeledSample]
    heard_counts: list[int]

    def reference_heard(self) -> float:
        return sum(self.heard_counts) / len(self.heard_counts)


def bootstrap(scenario: "ScenarioConfig", rng: np.random.Generator) -> BootstrapResult:
    """Train the initial model from a clean simulation epoch.

    The epoch runs at 100% penetration and zero loss, opening with a
    light-demand phase so the training set spans sparse as well as
    congested feature ranges (a dense-only epoch leaves the separation
    normalizer degenerate). One ground-truth labeled sample is collected
    per interval. If the epoch covers only one class the epoch length
    is doubled, up to three attempts.
    """
    duration = scenario.bootstrap_duration
    for _ in range(3):
        world = World(corridor_length=scenario.corridor_length,
                      signal=SignalState(location=scenario.signal_position,
                                         green_s=scenario.green_s,
                                         red_s=scenario.red_s),
                      params=scenario.car_params())
        light = min(scenario.bootstrap_light_duration, duration / 2)
        snaps = record_snapshots(world, scenario.bootstrap_light_demand, 1.0,
                                 light, scenario.aggregation_interval, rng,
                                 n_slots=scenario.rescue_slots)
        snaps += record_snapshots(world, scenario.demand_rate, 1.0,
                                  duration - light,
                                  scenario.aggregation_interval, rng,
                                  n_slots=scenario.rescue_slots)
        samples = []
        heard = []
        for snap in snaps:
            bsms = assemble_interval(snapshot_bsms(snap, 1.0))
            agg = aggregate(bsms, snap.t_end - scenario.aggregation_interval,
                            snap.t_end, scenario.range_m)
            if agg.status == DATA:
                samples.append(LabeledSample(features=agg.features(),
                                             label=snap.truth, t=snap.t_end))
                heard.append(agg.n_cvs_heard)
        labels = {s.label for s in samples}
        if labels == {True, False}:
            normalizer = normalize_fit(samples)
            xs = [LabeledSample(FeatureVector(*normalizer.transform(s.features)),
                                s.label, s.t) for s in samples]
            model, _ = fit_svm(xs, C=scenario.svm_c, tol=scenario.svm_tol,
                               max_iter=scenario.svm_max_iter)
            return BootstrapResult(model=model, normalizer=normalizer,
                                   samples=samples, heard_counts=heard)
        duration *= 2
    raise DegenerateBootstrap(
        "bootstrap epochs kept producing a single class; check traffic parameters")


class VerifiedStore:
    """Append-only store of verified samples, optionally backed by CSV.

    Schema: ``t_end,avg_speed_mps,avg_separation_m,truth,prediction,correct``.
    """

    HEADER = ["t_end", "avg_speed_mps", "avg_separation_m",
              "truth", "prediction", "correct"]

    def __init__(self, path=None):
        self.rows: list[tuple] = []
        self._fh = None
        self._writer = None
        if path is not None:
            try:
                self._fh = open(path, "w", newline="")
            except OSError as exc:
                raise StorageFailure(f"cannot open verified store {path}") from exc
            self._writer = csv.writer(self._fh)
            self._writer.writerow(self.HEADER)

    def append(self, sample: LabeledSample, correctness: bool) -> None:
        prediction = sample.label if correctness else (not sample.label)
        row = (sample.t, sample.features.avg_speed,
               sample.features.avg_separation, label_str(sample.label),
               label_str(prediction), int(correctness))
        self.rows.append(row)
        if self._writer is not None:
            try:
                self._writer.writerow(row)
            except OSError as exc:
                raise StorageFailure("verified store sink became unwritable") from exc

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
        return False


def store_verified(store: VerifiedStore, sample: LabeledSample,
                   correctness: bool) -> VerifiedStore:
    """Append one verified (features, truth, correctness) record."""
    store.append(sample, correctness)
    return store


def read_verified_store(path) -> list[tuple]:
    """Parse a verified-store CSV back into typed rows."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != VerifiedStore.HEADER:
            raise ValueError(f"unexpected store header: {header}")
        return [(float(r[0]), float(r[1]), float(r[2]), r[3], r[4], int(r[5]))
                for r in reader]


class PipelineState:
    """Mutable per-scenario learner state across intervals."""

    def __init__(self, mode: PipelineMode, boot: BootstrapResult,
                 fixed_capacity: int, adwin_delta: float,
                 svm_c: float = 1.0, svm_tol: float = 1e-4,
                 svm_max_iter: int = 10000, min_retrain_size: int = 30,
                 store: VerifiedStore | None = None,
                 window_log=None):
        self.mode = mode
        self.model = boot.model
        self.normalizer = boot.normalizer
        self.svm_c = svm_c
        self.svm_tol = svm_tol
        self.svm_max_iter = svm_max_iter
        self.min_retrain_size = min_retrain_size
        self.last_prediction = False  # persistence seed: no queue
        self.interval_idx = 0
        self.timeline: Timeline = []
        self.store = store
        self.window_log = window_log
        self._alpha: np.ndarray | None = None
        self._dirty = False

        if mode.feedback and mode.window_policy == "fixed":
            seed = boot.samples[-fixed_capacity:]
            self.fixed = FixedWindow(fixed_capacity, seed)
            self.adwin = None
        elif mode.feedback:
            self.fixed = None
            self.training = list(boot.samples)
            # Drift monitor: per-sample prediction-correctness bits.
            # Seeding one value per bootstrap sample (the bootstrap
            # model's own training correctness) keeps the monitored
            # stream and the training set aligned one-to-one, so a cut
            # maps directly onto window rows.
            bits = [float(predict(boot.model, boot.normalizer, s.features) == s.label)
                    for s in boot.samples]
            self.adwin = AdwinWindow(delta=adwin_delta, values=bits)
        else:
            self.fixed = None
            self.adwin = None

    def window_samples(self) -> list[LabeledSample]:
        if not self.mode.feedback:
            return []
        if self.mode.window_policy == "fixed":
            return list(self.fixed.samples)
        return list(self.training)

    def run_interval(self, agg: IntervalAggregate, truth: bool) -> bool:
        """One roadside prediction plus the backend feedback update."""
        if self.model is None or self.normalizer is None:
            raise NotBootstrapped("no initial model; run bootstrap first")
        self.interval_idx += 1

        if agg.status == DATA:
            prediction = predict(self.model, self.normalizer, agg.features())
        else:
            prediction = self.last_prediction
        self.last_prediction = prediction
        self.timeline.append(IntervalRecord(interval=self.interval_idx,
                                            prediction=prediction, truth=truth,
                                            aggregate=agg))

        if self.mode.feedback and agg.status == DATA:
            correct = prediction == truth
            sample = LabeledSample(features=agg.features(), label=truth,
                                   t=agg.t_end)
            if self.store is not None:
                store_verified(self.store, sample, correct)
            cut = False
            if self.mode.window_policy == "fixed":
                before = len(self.fixed)
                self.fixed.extend([sample])
                dropped = max(0, before + 1 - len(self.fixed))
                self._shift_alpha(dropped, appended=1)
                win_len = len(self.fixed)
            else:
                self.training.append(sample)
                cut = self.adwin.insert(1.0 if correct else 0.0)
                before = len(self.training)
                self.training = adwin_sync(self.training, self.adwin)
                dropped = before - len(self.training)
                self._shift_alpha(dropped, appended=1)
                win_len = len(self.training)
            if self.window_log is not None:
                self.window_log.log(agg.t_end, self.mode.window_policy,
                                    win_len, cut)
            self._dirty = True
            if self.interval_idx % self.mode.retrain_every == 0:
                self._retrain()
        elif self.mode.feedback and self.store is not None:
            # Verified store only holds intervals with observed features.
            pass
        return prediction

    def _shift_alpha(self, dropped: int, appended: int) -> None:
        if self._alpha is None:
            return
        a = self._alpha
        if dropped > 0:
            a = a[dropped:]
        if appended > 0:
            a = np.concatenate([a, np.zeros(appended)])
        self._alpha = a

    def _retrain(self) -> None:
        if not self._dirty:
            return
        samples = self.window_samples()
        if not samples:
            return
        if (self.mode.window_policy == "dynamic"
                and len(samples) < self.min_retrain_size):
            # A drift cut just truncated the window; keep serving the
            # pre-cut model until the fresh window can support a stable
            # normalizer/model fit.
            return
        normalizer = normalize_fit(samples)
        xs = [LabeledSample(FeatureVector(*normalizer.transform(s.features)),
                            s.label, s.t) for s in samples]
        warm = self._alpha if self._alpha is not None and len(self._alpha) == len(xs) else None
        model, alpha = fit_svm(xs, C=self.svm_c, tol=self.svm_tol,
                               max_iter=self.svm_max_iter, warm_alpha=warm)
        # Atomic swap: predictions only ever see a consistent pair.
        self.model, self.normalizer = model, normalizer
        self._alpha = alpha
        self._dirty = False


def run_interval(state: PipelineState, agg: IntervalAggregate,
                 truth: bool) -> tuple[bool, PipelineState]:
    """Functional form of PipelineState.run_interval."""
    return state.run_interval(agg, truth), state


def write_timeline(path, timeline: Timeline) -> None:
    """Timeline CSV: ``interval_idx,prediction,truth,status,n_cvs_heard``."""
    try:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["interval_idx", "prediction", "truth", "status",
                             "n_cvs_heard"])
            for rec in timeline:
                writer.writerow([rec.interval, label_str(rec.prediction),
                                 label_str(rec.truth), rec.aggregate.status,
                                 rec.aggregate.n_cvs_heard])
    except OSError as exc:
        raise StorageFailure(f"cannot write timeline {path}") from exc
