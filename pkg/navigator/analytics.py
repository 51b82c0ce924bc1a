"""
Evaluation engine: navigation, room and observation metrics, the last-frames answerer,
backtrack-level runs and model comparison tables
"""
import logging
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from . import config
from .dataset import backtrack_start
from .exceptions import EmptyDatasetError, ReportMismatchError
from .ml.policy import rollout
from .models import (
    Dataset, EpisodeTrace, EvalConfig, FovParams, GridMap, QuestionType, Sample, Split,
)
from .utils import canonical_json, derive_seed, round_float, safe_divide

logger = logging.getLogger(__name__)

METRIC_COLUMNS = ['d_delta', 'd_T', 'd_min', 'r_e', 'r_T', 'r_delta', 'o_m', 'o_T', 'o_delta', 'acc']

# Expected ordering on mean d_delta, best first
TREND_ORDER = ['pemr_b', 'pemr_a', 'baseline_fpe', 'baseline']


def _last(flags: List[bool], window: int) -> List[bool]:
    return flags[-window:] if window > 0 else []


def _require_traces(traces: Sequence[EpisodeTrace]):
    if not traces:
        raise EmptyDatasetError("Metrics need at least one episode")


# ============================================================================
# Metric families
# ============================================================================

def nav_metrics(traces: Sequence[EpisodeTrace]) -> Tuple[float, float]:
    """(mean d_delta, mean d_T) in cells"""
    _require_traces(traces)
    d_T = np.array([t.final_distance for t in traces])
    d_0 = np.array([t.start_distance for t in traces])
    return float(np.mean(d_0 - d_T)), float(np.mean(d_T))


def room_metrics(traces: Sequence[EpisodeTrace],
                 window: int = config.LAST_WINDOW) -> Tuple[float, float, float]:
    """(r_e, r_T, r_delta): in the target room at any step / in the last window steps"""
    _require_traces(traces)
    entered = np.mean([any(t.room_flags()) for t in traces])
    at_end = np.mean([any(_last(t.room_flags(), window)) for t in traces])
    return float(entered), float(at_end), float(entered - at_end)


def observation_metrics(traces: Sequence[EpisodeTrace],
                        window: int = config.LAST_WINDOW) -> Tuple[float, float, float]:
    """(o_m, o_T, o_delta); o_delta is 0 when the target was never seen"""
    _require_traces(traces)
    seen = float(np.mean([any(t.visibility_flags()) for t in traces]))
    seen_late = float(np.mean([any(_last(t.visibility_flags(), window)) for t in traces]))
    o_delta = 1.0 - safe_divide(seen_late, seen, default=1.0)
    return seen, seen_late, o_delta


def answer_question(trace: EpisodeTrace, sample: Sample, grid: GridMap,
                    window: int = config.LAST_WINDOW, seed: int = 0) -> Tuple[str, bool]:
    """Read the answer off the map if the target was seen in the last frames, else guess"""
    target = grid.object_by_id(sample.question.target_object_id)
    seen = any(_last(trace.visibility_flags(), window))
    if sample.question.qtype == QuestionType.ROOM_OF:
        truth, choices = grid.room_type_at(target.x, target.y), config.ROOM_TYPES
    else:
        truth, choices = target.color, config.OBJECT_COLORS
    if seen:
        answer = truth
    else:
        answer = choices[int(np.random.default_rng(seed).integers(len(choices)))]
    return answer, answer == sample.answer


# ============================================================================
# Reports
# ============================================================================

@dataclass
class LevelMetrics:
    """Every metric for one backtrack level"""
    level: int
    episodes: int
    d_delta: float
    d_T: float
    d_min: float
    r_e: float
    r_T: float
    r_delta: float
    o_m: float
    o_T: float
    o_delta: float
    acc: float
    o_degenerate: bool = False
    well_checked: int = 0
    under_checked: int = 0

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> 'LevelMetrics':
        return cls(**{k: data[k] for k in cls.__dataclass_fields__ if k in data})


def aggregate_level(level: int, traces: Sequence[EpisodeTrace],
                    window: int = config.LAST_WINDOW) -> LevelMetrics:
    d_delta, d_T = nav_metrics(traces)
    r_e, r_T, r_delta = room_metrics(traces, window)
    o_m, o_T, o_delta = observation_metrics(traces, window)
    well = sum(any(_last(t.visibility_flags(), window)) for t in traces)
    seen = sum(any(t.visibility_flags()) for t in traces)
    if o_m == 0:
        logger.info("Level %d: target never observed, o_delta reported as 0", level)
    return LevelMetrics(
        level=level,
        episodes=len(traces),
        d_delta=d_delta,
        d_T=d_T,
        d_min=float(np.mean([t.min_distance for t in traces])),
        r_e=r_e, r_T=r_T, r_delta=r_delta,
        o_m=o_m, o_T=o_T, o_delta=o_delta,
        acc=float(np.mean([bool(t.answer_correct) for t in traces])),
        o_degenerate=o_m == 0,
        well_checked=int(well),
        under_checked=int(seen - well),
    )


@dataclass
class MetricsReport:
    model: str
    eval_config: EvalConfig
    levels: List[LevelMetrics] = field(default_factory=list)

    def level(self, level: int) -> LevelMetrics:
        for metrics in self.levels:
            if metrics.level == level:
                return metrics
        raise KeyError(f"Report has no level T_{level}")

    def verify(self, tolerance: float = 1e-9):
        """Recompute the derived rates; raise on any inconsistency"""
        if not self.levels:
            raise EmptyDatasetError("Report has no levels")
        for m in self.levels:
            if abs(m.r_delta - (m.r_e - m.r_T)) > tolerance:
                raise ReportMismatchError(f"T_{m.level}: r_delta != r_e - r_T")
            expected = 1.0 - m.o_T / m.o_m if m.o_m > 0 else 0.0
            if abs(m.o_delta - expected) > tolerance:
                raise ReportMismatchError(f"T_{m.level}: o_delta != 1 - o_T / o_m")
            rates = [m.r_e, m.r_T, m.o_m, m.o_T, m.acc]
            if any(r < 0 or r > 1 for r in rates):
                raise ReportMismatchError(f"T_{m.level}: rate outside [0, 1]")

    def to_dict(self) -> dict:
        return {
            'model': self.model,
            'eval_config': self.eval_config.to_dict(),
            'levels': [m.to_dict() for m in self.levels],
        }

    @classmethod
    def from_dict(cls, data: dict) -> 'MetricsReport':
        return cls(
            model=data['model'],
            eval_config=EvalConfig.from_dict(data['eval_config']),
            levels=[LevelMetrics.from_dict(m) for m in data['levels']],
        )


class EvaluationEngine:
    """Runs an agent from backtracked starts and aggregates the metrics per level"""

    def __init__(self, eval_config: Optional[EvalConfig] = None, fov: FovParams = FovParams()):
        self.config = eval_config or EvalConfig()
        self.fov = fov
        self.traces: Dict[int, List[EpisodeTrace]] = {}

    def run_level(self, agent, dataset: Dataset, level: int) -> List[EpisodeTrace]:
        traces = []
        for index, sample in enumerate(dataset.samples):
            grid = dataset.map_for(sample)
            start = backtrack_start(sample, level, grid)
            seed = derive_seed(self.config.seed, level, index)
            trace, _ = rollout(agent, grid, start, self.config.max_steps, 'greedy', seed, self.fov)
            trace.answer, trace.answer_correct = answer_question(
                trace, start, grid, self.config.last_window, seed,
            )
            if trace.steps:
                trace.steps[-1].answer_correct = trace.answer_correct
            traces.append(trace)
        return traces

    def evaluate(self, agent, dataset: Dataset, model: str = 'agent') -> MetricsReport:
        if len(dataset) == 0:
            raise EmptyDatasetError("Evaluation split is empty")
        if dataset.split != Split.TEST:
            logger.warning("Evaluating %s on the %s split", model, dataset.split.value)
        logger.info("Evaluation config: %s", canonical_json(self.config.to_dict()))
        report = MetricsReport(model=model, eval_config=self.config)
        for level in self.config.backtrack_levels:
            traces = self.run_level(agent, dataset, level)
            self.traces[level] = traces
            metrics = aggregate_level(level, traces, self.config.last_window)
            logger.info("%s T_%d: d_delta %.3f d_T %.3f acc %.3f",
                        model, level, metrics.d_delta, metrics.d_T, metrics.acc)
            report.levels.append(metrics)
        return report


def evaluate(agent, dataset: Dataset, eval_config: Optional[EvalConfig] = None,
             model: str = 'agent', fov: FovParams = FovParams()) -> MetricsReport:
    return EvaluationEngine(eval_config, fov).evaluate(agent, dataset, model)


# ============================================================================
# Comparison
# ============================================================================

@dataclass
class ComparisonTable:
    frame: pd.DataFrame

    def deltas(self) -> pd.DataFrame:
        """Each row minus the first row"""
        return self.frame - self.frame.iloc[0]

    def to_dict(self) -> dict:
        return {
            'columns': list(self.frame.columns),
            'rows': {
                model: {column: round_float(value) for column, value in row.items()}
                for model, row in self.frame.iterrows()
            },
        }

    def to_text(self) -> str:
        return self.frame.to_string(float_format=lambda v: f"{v:.3f}") + '\n'


def compare_report(reports: Mapping[str, MetricsReport]) -> ComparisonTable:
    """Rows are models, columns are metric@T_k; all reports must share one eval config"""
    if not reports:
        raise EmptyDatasetError("Nothing to compare")
    names = list(reports)
    reference = reports[names[0]]
    levels = [m.level for m in reference.levels]
    for name in names[1:]:
        other = reports[name]
        if [m.level for m in other.levels] != levels:
            raise ReportMismatchError(f"{name} has levels {[m.level for m in other.levels]}, expected {levels}")
        if other.eval_config.to_dict() != reference.eval_config.to_dict():
            raise ReportMismatchError(f"{name} was evaluated with a different config")

    rows = {}
    for name in names:
        row = {}
        for metrics in reports[name].levels:
            for column in METRIC_COLUMNS:
                row[f"{column}@T{metrics.level}"] = getattr(metrics, column)
        rows[name] = row
    frame = pd.DataFrame.from_dict(rows, orient='index')
    frame.index.name = 'model'
    return ComparisonTable(frame=frame)


@dataclass
class TrendCheck:
    passed: bool
    rows: List[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {'passed': self.passed, 'rows': self.rows}


def check_trend_orderings(reports: Mapping[str, MetricsReport],
                          levels: Optional[Sequence[int]] = None) -> TrendCheck:
    """pemr_b >= pemr_a >= baseline_fpe >= baseline on mean d_delta for the models present"""
    present = [name for name in TREND_ORDER if name in reports]
    if len(present) < 2:
        raise ValueError("Need at least two of the known model variants to check orderings")
    if levels is None:
        levels = [m.level for m in reports[present[0]].levels]
    rows = []
    for level in levels:
        for better, worse in zip(present, present[1:]):
            a = reports[better].level(level).d_delta
            b = reports[worse].level(level).d_delta
            rows.append({
                'level': level, 'better': better, 'worse': worse,
                'better_d_delta': round_float(a), 'worse_d_delta': round_float(b),
                'holds': bool(a >= b),
            })
    return TrendCheck(passed=all(r['holds'] for r in rows), rows=rows)
