"""
Business logic layer - pipeline orchestrator behind every CLI command
"""
import logging
from pathlib import Path
from typing import Dict, Optional, Sequence, Tuple

from . import config
from .analytics import (
    TREND_ORDER, EvaluationEngine, MetricsReport, check_trend_orderings, compare_report,
)
from .dataset import (
    RectifyCounts, augment_variant, combine_variants, generate_dataset, rectify_dataset,
    reverse_variant, split_by_house,
)
from .exceptions import EmptyDatasetError
from .ml.policy import ExpertReplayAgent, NavigatorPolicy, RandomAgent, StopAgent, rollout
from .ml.training import pretrain_fpe, train_bc, train_rl, TrainingCurves
from .models import EvalConfig, GenParams, PolicyConfig, RunConfig, TrainConfig
from .rendering import render_route, save_route
from .repositories import (
    CheckpointRepository, DatasetRepository, ReportRepository, TraceRepository,
)
from .utils import canonical_json

logger = logging.getLogger(__name__)

SCRIPTED_AGENTS = {
    'expert': ExpertReplayAgent,
    'random': RandomAgent,
    'stop': StopAgent,
}

VARIANT_KINDS = ('reverse', 'combine', 'augment')


class NavigationService:
    """Main service orchestrating all pipeline stages"""

    def __init__(self):
        self.datasets = DatasetRepository()
        self.reports = ReportRepository()
        self.traces = TraceRepository()

    def log_config(self, run: RunConfig):
        logger.info("Resolved config: %s", canonical_json(run.to_dict()))

    # ========================================================================
    # Dataset stages
    # ========================================================================

    def generate(self, params: GenParams, n_houses: int, seed: int, out: Path,
                 test_out: Optional[Path] = None) -> Dict[str, int]:
        """Generate houses and samples; optionally split off unseen test houses"""
        dataset, dropped = generate_dataset(params, n_houses, seed)
        summary = {'houses': len(dataset.maps), 'samples': len(dataset), 'dropped': dropped}
        if test_out is not None:
            train, test = split_by_house(dataset, seed=seed)
            self.datasets.save(train, out)
            self.datasets.save(test, test_out)
            summary.update({'train_samples': len(train), 'test_samples': len(test)})
        else:
            self.datasets.save(dataset, out)
        return summary

    def rectify(self, source: Path, out: Path) -> RectifyCounts:
        dataset = self.datasets.load(source)
        rectified, counts = rectify_dataset(dataset)
        self.datasets.save(rectified, out)
        return counts

    def make_variant(self, kind: str, source: Path, out: Path, other: Optional[Path] = None,
                     params: Optional[GenParams] = None, n_houses: int = 0,
                     seed: int = 0) -> Dict[str, int]:
        dataset = self.datasets.load(source)
        dropped = 0
        if kind == 'reverse':
            result, dropped = reverse_variant(dataset)
        elif kind == 'combine':
            if other is None:
                raise ValueError("combine needs a second dataset")
            result = combine_variants(dataset, self.datasets.load(other))
        elif kind == 'augment':
            if n_houses < 1:
                raise ValueError("augment needs at least one extra house")
            result = augment_variant(dataset, params or GenParams(), n_houses, seed)
        else:
            raise ValueError(f"Unknown variant kind: {kind}")
        self.datasets.save(result, out)
        return {'samples': len(result), 'dropped': dropped}

    # ========================================================================
    # Training stages
    # ========================================================================

    def _policy(self, policy_config: PolicyConfig, seed: int, init: Optional[Path]) -> NavigatorPolicy:
        if init is not None:
            return CheckpointRepository().load(init)
        return NavigatorPolicy(policy_config, seed=seed)

    def _finish(self, policy: NavigatorPolicy, curves: TrainingCurves, out_dir: Path,
                checkpoints: CheckpointRepository) -> Path:
        curves.to_csv(out_dir / 'curves')
        return checkpoints.save(policy, out_dir / 'final.json')

    def pretrain(self, dataset_path: Path, policy_config: PolicyConfig, cfg: TrainConfig,
                 out_dir: Path, init: Optional[Path] = None) -> Path:
        dataset = self.datasets.load(dataset_path)
        policy = self._policy(policy_config, cfg.seed, init)
        curves = pretrain_fpe(dataset, policy, cfg)
        return self._finish(policy, curves, Path(out_dir), CheckpointRepository(out_dir))

    def train_bc(self, dataset_path: Path, policy_config: PolicyConfig, cfg: TrainConfig,
                 out_dir: Path, init: Optional[Path] = None) -> Path:
        dataset = self.datasets.load(dataset_path)
        policy = self._policy(policy_config, cfg.seed, init)
        checkpoints = CheckpointRepository(Path(out_dir) / 'checkpoints')
        curves = train_bc(dataset, policy, cfg,
                          on_epoch=lambda epoch, p: checkpoints.save_epoch(p, epoch))
        return self._finish(policy, curves, Path(out_dir), checkpoints)

    def train_rl(self, dataset_path: Path, policy_config: PolicyConfig, cfg: TrainConfig,
                 out_dir: Path, init: Optional[Path] = None) -> Path:
        dataset = self.datasets.load(dataset_path)
        policy = self._policy(policy_config, cfg.seed, init)
        checkpoints = CheckpointRepository(Path(out_dir) / 'checkpoints')
        curves = train_rl(dataset, policy, cfg,
                          on_epoch=lambda batch, p: checkpoints.save_epoch(p, batch))
        return self._finish(policy, curves, Path(out_dir), checkpoints)

    # ========================================================================
    # Evaluation and reports
    # ========================================================================

    def load_agent(self, checkpoint: Optional[Path] = None, agent: Optional[str] = None):
        """(agent, model name) from a checkpoint or a scripted agent name"""
        if checkpoint is not None:
            policy = CheckpointRepository().load(checkpoint)
            return policy, policy.config.model
        if agent not in SCRIPTED_AGENTS:
            raise ValueError(f"Unknown scripted agent: {agent}")
        return SCRIPTED_AGENTS[agent](), agent

    def evaluate(self, dataset_path: Path, eval_config: EvalConfig, out: Path,
                 checkpoint: Optional[Path] = None, agent: Optional[str] = None,
                 traces_out: Optional[Path] = None) -> MetricsReport:
        dataset = self.datasets.load(dataset_path)
        runner, model = self.load_agent(checkpoint, agent)
        engine = EvaluationEngine(eval_config)
        report = engine.evaluate(runner, dataset, model)
        report.verify()
        self.emit_report(report, out)
        if traces_out is not None:
            self.traces.save(engine.traces, traces_out)
        return report

    def emit_report(self, report: MetricsReport, out: Path) -> Tuple[Path, Path]:
        if not report.levels:
            raise EmptyDatasetError("Cannot emit an empty report")
        table = compare_report({report.model: report})
        return self.reports.save(report.to_dict(), table.to_text(), out)

    def compare(self, report_paths: Sequence[Path], out: Path) -> dict:
        reports: Dict[str, MetricsReport] = {}
        for path in report_paths:
            report = MetricsReport.from_dict(self.reports.load(path))
            name = report.model
            while name in reports:
                name = f"{name}'"
            reports[name] = report
        table = compare_report(reports)
        data = table.to_dict()
        known = [name for name in reports if name in TREND_ORDER]
        if len(known) >= 2:
            data['trends'] = check_trend_orderings(reports).to_dict()
        self.reports.save(data, table.to_text(), out)
        return data

    # ========================================================================
    # Rendering
    # ========================================================================

    def render(self, dataset_path: Path, sample_id: str, out: Path,
               checkpoint: Optional[Path] = None,
               max_steps: int = config.MAX_EPISODE_STEPS) -> Path:
        """Replay a checkpointed policy greedily, or the expert when none is given"""
        dataset = self.datasets.load(dataset_path)
        matches = [s for s in dataset.samples if s.sample_id == sample_id]
        if not matches:
            raise KeyError(f"No sample {sample_id} in {dataset_path}")
        sample = matches[0]
        grid = dataset.map_for(sample)
        agent, _ = self.load_agent(checkpoint, None if checkpoint else 'expert')
        trace, _ = rollout(agent, grid, sample, max_steps)
        return save_route(render_route(grid, sample, trace), out)
