"""Experiment driver: scenario matrix, accuracy grids, significance.

One traffic simulation per seed feeds every cell: penetration is
re-thresholded from stored per-vehicle uniforms, the channel stream is
keyed by seed alone (so loss sweeps see identical draws), and the three
learner modes consume identical aggregate sequences. Paired comparisons
(McNemar on discordant intervals, plus an across-cells paired t-test on
cell means) therefore differ only in the learner.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import stats

from .comms import ChannelParams, transmit
from .config import MatrixConfig, ScenarioConfig
from .errors import EmptyTimeline, IncomparableTimelines, StorageFailure
from .pipeline import (DATA, BootstrapResult, IntervalRecord, PipelineMode,
                       PipelineState, Timeline, aggregate, assemble_interval,
                       bootstrap, snapshot_bsms)
from .traffic import Snapshot, TrajectoryLogger, World, record_snapshots

# Sub-stream tags so traffic, bootstrap and channel draws never alias.
_TRAFFIC_STREAM = 0
_BOOTSTRAP_STREAM = 1
_CHANNEL_STREAM = 2


def _rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, stream]))


def accuracy(timeline: Timeline) -> float:
    """Fraction of intervals whose prediction matches the truth."""
    if len(timeline) == 0:
        raise EmptyTimeline("accuracy of an empty timeline is undefined")
    hits = sum(1 for rec in timeline if rec.prediction == rec.truth)
    return hits / len(timeline)


def mcnemar_exact(b: int, c: int) -> float:
    """Two-sided exact McNemar p-value from discordant counts."""
    n = b + c
    if n == 0:
        return 1.0
    k = min(b, c)
    tail = sum(math.comb(n, i) for i in range(k + 1))
    return min(1.0, 2.0 * tail / 2.0 ** n)


def discordant_counts(timeline_a: Timeline, timeline_b: Timeline) -> tuple[int, int]:
    if len(timeline_a) != len(timeline_b):
        raise IncomparableTimelines("timelines have different lengths")
    b = c = 0
    for ra, rb in zip(timeline_a, timeline_b):
        if ra.truth != rb.truth:
            raise IncomparableTimelines("timelines disagree on ground truth")
        a_ok = ra.prediction == ra.truth
        b_ok = rb.prediction == rb.truth
        if a_ok and not b_ok:
            b += 1
        elif b_ok and not a_ok:
            c += 1
    return b, c


def compare_significance(timeline_a: Timeline, timeline_b: Timeline) -> float:
    """Exact McNemar test between paired runs over the same truth."""
    b, c = discordant_counts(timeline_a, timeline_b)
    return mcnemar_exact(b, c)


@dataclass
class RunResult:
    mode_name: str
    loss_rate: float
    penetration: float
    seed: int
    timeline: Timeline
    accuracy: float


@dataclass(frozen=True)
class CellStats:
    mean_accuracy: float
    std: float
    n_seeds: int
    per_seed: tuple[float, ...]


@dataclass(frozen=True)
class Comparison:
    pair: str
    loss_rate: float
    penetration: float
    p_value: float
    significant_at_95: bool


@dataclass(frozen=True)
class OverallTest:
    pair: str
    t_stat: float
    p_value: float
    significant_at_95: bool


@dataclass
class AccuracyReport:
    grid: dict[tuple[str, float, float], CellStats]
    comparisons: list[Comparison]
    overall: list[OverallTest]
    n_seeds: int
    runs: list[RunResult] = field(default_factory=list)


class MatrixAborted(RuntimeError):
    """A scenario failed; partial results were dumped."""

    def __init__(self, message: str, partial_path=None):
        super().__init__(message)
        self.partial_path = partial_path


def simulate_seed(template: ScenarioConfig, seed: int,
                  trace: TrajectoryLogger | None = None) -> list[Snapshot]:
    """Shared per-seed traffic run; CV flags resolve later per penetration."""
    world = World(corridor_length=template.corridor_length,
                  signal=template.signal(), params=template.car_params())
    return record_snapshots(world, template.demand_rate, 1.0,
                            template.duration, template.aggregation_interval,
                            _rng(seed, _TRAFFIC_STREAM),
                            n_slots=template.rescue_slots, trace=trace)


def bootstrap_seed(template: ScenarioConfig, seed: int) -> BootstrapResult:
    return bootstrap(replace(template, seed=seed), _rng(seed, _BOOTSTRAP_STREAM))


def build_aggregates(template: ScenarioConfig, snaps: list[Snapshot],
                     penetration: float, loss: float, seed: int,
                     delivery_log=None) -> list:
    """Emit, transmit and aggregate every interval for one (pen, loss)."""
    channel = ChannelParams(loss_rate=loss, rsu_position=template.rsu_position,
                            range_m=template.range_m)
    chan_rng = _rng(seed, _CHANNEL_STREAM)
    interval = template.aggregation_interval
    out = []
    for snap in snaps:
        delivered_slots = []
        for bsms in snapshot_bsms(snap, penetration):
            delivered = transmit(bsms, channel, chan_rng)
            delivered_slots.append(delivered)
            if delivery_log is not None:
                delivery_log.log(bsms, delivered)
        chosen = assemble_interval(delivered_slots)
        out.append(aggregate(chosen, snap.t_end - interval, snap.t_end,
                             template.range_m))
    return out


def run_learner(template: ScenarioConfig, mode: PipelineMode,
                boot: BootstrapResult, aggregates: list,
                truths: list[bool], store=None, window_log=None) -> Timeline:
    state = PipelineState(mode=replace(mode, retrain_every=template.retrain_every),
                          boot=boot,
                          fixed_capacity=template.window_capacity,
                          adwin_delta=template.adwin_delta,
                          svm_c=template.svm_c, svm_tol=template.svm_tol,
                          svm_max_iter=template.svm_max_iter,
                          min_retrain_size=template.min_retrain_size,
                          store=store, window_log=window_log)
    for agg, truth in zip(aggregates, truths):
        state.run_interval(agg, truth)
    return state.timeline


def run_single(cfg: ScenarioConfig, store=None, window_log=None,
               trace: TrajectoryLogger | None = None,
               delivery_log=None) -> RunResult:
    """One scenario end to end (own simulation, bootstrap and learner)."""
    snaps = simulate_seed(cfg, cfg.seed, trace=trace)
    boot = bootstrap_seed(cfg, cfg.seed)
    aggs = build_aggregates(cfg, snaps, cfg.cv_penetration, cfg.loss_rate,
                            cfg.seed, delivery_log=delivery_log)
    truths = [s.truth for s in snaps]
    timeline = run_learner(cfg, cfg.mode, boot, aggs, truths,
                           store=store, window_log=window_log)
    return RunResult(mode_name=cfg.mode.name, loss_rate=cfg.loss_rate,
                     penetration=cfg.cv_penetration, seed=cfg.seed,
                     timeline=timeline, accuracy=accuracy(timeline))


def run_matrix(matrix: MatrixConfig, out_dir=None, keep_runs: bool = False,
               progress: bool = False) -> AccuracyReport:
    """Sweep the full grid with paired seeds and assemble the report.

    A failing scenario aborts the sweep after dumping the completed
    cells next to the requested output.
    """
    template = matrix.template
    seeds = matrix.seeds()
    runs: list[RunResult] = []
    try:
        for seed in seeds:
            snaps = simulate_seed(template, seed)
            truths = [s.truth for s in snaps]
            boot = bootstrap_seed(template, seed)
            for pen in matrix.penetrations:
                for loss in matrix.losses:
                    aggs = build_aggregates(template, snaps, pen, loss, seed)
                    for mode in matrix.modes:
                        timeline = run_learner(template, mode, boot, aggs, truths)
                        runs.append(RunResult(mode_name=mode.name,
                                              loss_rate=loss, penetration=pen,
                                              seed=seed, timeline=timeline,
                                              accuracy=accuracy(timeline)))
                        if progress:
                            r = runs[-1]
                            print(f"seed={seed} pen={pen:.2f} loss={loss:.2f} "
                                  f"{r.mode_name}: acc={r.accuracy:.4f}", flush=True)
    except Exception as exc:
        partial = _dump_partial(runs, matrix, out_dir)
        raise MatrixAborted(f"matrix aborted: {exc} (partial dump: {partial})",
                            partial_path=partial) from exc
    report = assemble_report(runs, matrix)
    if keep_runs:
        report.runs = runs
    return report


def assemble_report(runs: list[RunResult], matrix: MatrixConfig) -> AccuracyReport:
    mode_names = [m.name for m in matrix.modes]
    by_key: dict[tuple[str, float, float], dict[int, RunResult]] = {}
    for r in runs:
        by_key.setdefault((r.mode_name, r.loss_rate, r.penetration), {})[r.seed] = r

    grid: dict[tuple[str, float, float], CellStats] = {}
    for key, per_seed in by_key.items():
        accs = tuple(per_seed[s].accuracy for s in sorted(per_seed))
        arr = np.array(accs)
        grid[key] = CellStats(mean_accuracy=float(arr.mean()),
                              std=float(arr.std()), n_seeds=len(accs),
                              per_seed=accs)

    pairs = []
    if "feedback_fixed" in mode_names and "no_feedback" in mode_names:
        pairs.append(("feedback_fixed", "no_feedback"))
    if "feedback_dynamic" in mode_names and "no_feedback" in mode_names:
        pairs.append(("feedback_dynamic", "no_feedback"))
    if "feedback_dynamic" in mode_names and "feedback_fixed" in mode_names:
        pairs.append(("feedback_dynamic", "feedback_fixed"))

    comparisons: list[Comparison] = []
    overall: list[OverallTest] = []
    for mode_a, mode_b in pairs:
        pair_name = f"{mode_a}_vs_{mode_b}"
        cells_a, cells_b = [], []
        for loss in matrix.losses:
            for pen in matrix.penetrations:
                b_tot = c_tot = 0
                for seed in matrix.seeds():
                    ra = by_key[(mode_a, loss, pen)][seed]
                    rb = by_key[(mode_b, loss, pen)][seed]
                    b, c = discordant_counts(ra.timeline, rb.timeline)
                    b_tot += b
                    c_tot += c
                p = mcnemar_exact(b_tot, c_tot)
                comparisons.append(Comparison(pair=pair_name, loss_rate=loss,
                                              penetration=pen, p_value=p,
                                              significant_at_95=p < 0.05))
                cells_a.append(grid[(mode_a, loss, pen)].mean_accuracy)
                cells_b.append(grid[(mode_b, loss, pen)].mean_accuracy)
        if len(cells_a) > 1 and not np.allclose(cells_a, cells_b):
            t_stat, p = stats.ttest_rel(cells_a, cells_b)
            t_stat, p = float(t_stat), float(p)
        else:
            t_stat, p = 0.0, 1.0
        overall.append(OverallTest(pair=pair_name, t_stat=t_stat, p_value=p,
                                   significant_at_95=p < 0.05))
    return AccuracyReport(grid=grid, comparisons=comparisons, overall=overall,
                          n_seeds=matrix.n_seeds)


ACCURACY_HEADER = ["mode", "loss_rate", "penetration", "mean_accuracy", "std",
                   "n_seeds"]
COMPARISON_HEADER = ["pair", "penetration", "loss_rate", "p_value", "significant"]
OVERALL_HEADER = ["pair", "t_stat", "p_value", "significant"]


def emit_report(report: AccuracyReport, out_dir) -> dict[str, str]:
    """Write accuracy.csv, comparisons.csv and overall.csv; return paths."""
    import os
    os.makedirs(out_dir, exist_ok=True)
    paths = {
        "accuracy": os.path.join(out_dir, "accuracy.csv"),
        "comparisons": os.path.join(out_dir, "comparisons.csv"),
        "overall": os.path.join(out_dir, "overall.csv"),
    }
    try:
        with open(paths["accuracy"], "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(ACCURACY_HEADER)
            for key in sorted(report.grid):
                mode, loss, pen = key
                cell = report.grid[key]
                writer.writerow([mode, repr(loss), repr(pen),
                                 repr(cell.mean_accuracy), repr(cell.std),
                                 cell.n_seeds])
        with open(paths["comparisons"], "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(COMPARISON_HEADER)
            for comp in sorted(report.comparisons,
                               key=lambda c: (c.pair, c.loss_rate, c.penetration)):
                writer.writerow([comp.pair, repr(comp.penetration),
                                 repr(comp.loss_rate), repr(comp.p_value),
                                 int(comp.significant_at_95)])
        with open(paths["overall"], "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(OVERALL_HEADER)
            for test in sorted(report.overall, key=lambda t: t.pair):
                writer.writerow([test.pair, repr(test.t_stat),
                                 repr(test.p_value),
                                 int(test.significant_at_95)])
    except OSError as exc:
        raise StorageFailure(f"cannot write report into {out_dir}") from exc
    return paths


def load_accuracy_csv(path) -> dict[tuple[str, float, float], tuple[float, float, int]]:
    """Parse accuracy.csv back: key -> (mean, std, n_seeds)."""
    out = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != ACCURACY_HEADER:
            raise ValueError(f"unexpected header: {header}")
        for row in reader:
            out[(row[0], float(row[1]), float(row[2]))] = (
                float(row[3]), float(row[4]), int(row[5]))
    return out


def _dump_partial(runs: list[RunResult], matrix: MatrixConfig, out_dir):
    import os
    target = out_dir if out_dir is not None else "."
    os.makedirs(target, exist_ok=True)
    path = os.path.join(target, "partial_accuracy.csv")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["mode", "loss_rate", "penetration", "seed", "accuracy"])
        for r in sorted(runs, key=lambda r: (r.mode_name, r.loss_rate,
                                             r.penetration, r.seed)):
            writer.writerow([r.mode_name, repr(r.loss_rate),
                             repr(r.penetration), r.seed, repr(r.accuracy)])
    return path
