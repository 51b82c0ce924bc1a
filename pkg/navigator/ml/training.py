"""
Three learning stages: path-estimation pretraining, behavioral cloning and
REINFORCE fine-tuning with the step reward
"""
import logging
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from sklearn.metrics import accuracy_score

from .. import config
from ..analytics import answer_question
from ..dataset import expert_fragment_labels, expert_poses
from ..exceptions import EmptyDatasetError, ShapeMismatchError
from ..gridworld import render_observation, trace_path_mask
from ..models import (
    Action, Dataset, EpisodeTrace, FovParams, RewardWeights, Sample,
    TraceStep, TrainConfig,
)
from ..utils import canonical_json, chunk_list, derive_seed
from .policy import NavigatorPolicy, rollout
from .tensorkit import (
    Grads, OptimState, accumulate, sgd_update, sigmoid_bce, softmax, softmax_xent,
)

logger = logging.getLogger(__name__)

EpochCallback = Callable[[int, NavigatorPolicy], None]


class TrainingCurves:
    """(metric, step, value) records, written as one step,value CSV per metric"""

    def __init__(self):
        self.records: List[dict] = []

    def add(self, metric: str, step: int, value: float):
        self.records.append({'metric': metric, 'step': int(step), 'value': float(value)})

    def series(self, metric: str) -> List[float]:
        return [r['value'] for r in self.records if r['metric'] == metric]

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.records, columns=['metric', 'step', 'value'])

    def to_csv(self, directory: Path) -> List[Path]:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        frame = self.to_frame()
        paths = []
        for metric, group in frame.groupby('metric', sort=True):
            path = directory / f"{metric}.csv"
            group[['step', 'value']].to_csv(path, index=False)
            paths.append(path)
        return paths


def scale_grads(grads: Grads, factor: float) -> Grads:
    return {name: value * factor for name, value in grads.items()}


def _optimizer(cfg: TrainConfig) -> OptimState:
    return OptimState(learning_rate=cfg.learning_rate, momentum=cfg.momentum)


def _require_samples(dataset: Dataset, stage: str):
    if len(dataset) == 0:
        raise EmptyDatasetError(f"{stage} needs at least one sample")


def _log_config(stage: str, cfg: TrainConfig):
    logger.info("%s config: %s", stage, canonical_json(cfg.to_dict()))


# ============================================================================
# Path-estimation pretraining
# ============================================================================

@dataclass
class FpeExample:
    """One pose along an expert path with its mask and fragment labels"""
    observation: np.ndarray
    mask: np.ndarray
    labels: List[Action]


def build_fpe_examples(dataset: Dataset, k: int = config.FRAGMENT_LENGTH,
                       fov: FovParams = FovParams()) -> List[FpeExample]:
    examples = []
    for sample in dataset.samples:
        grid = dataset.map_for(sample)
        fragments = expert_fragment_labels(sample, k)
        for pose, labels in zip(expert_poses(sample, grid), fragments):
            observation = render_observation(grid, pose, fov)
            mask = trace_path_mask(grid, pose, labels, fov)
            examples.append(FpeExample(observation.flatten(), mask.mask.reshape(-1), labels))
    return examples


def fpe_loss(policy: NavigatorPolicy, example: FpeExample,
             fragment_weight: float = config.FRAGMENT_LOSS_WEIGHT) -> Tuple[float, float, Grads]:
    """Mask BCE plus weighted per-slot cross-entropy; returns (total, bce, grads)"""
    grads: Grads = {}
    mask_logits, feat, path_cache = policy.path_forward(example.observation)
    bce, d_mask = sigmoid_bce(mask_logits, example.mask)
    total = bce
    d_feat = None
    if fragment_weight != 0.0:
        logits, head_cache = policy.fpe_head_forward(feat)
        d_logits = np.zeros_like(logits)
        for j, label in enumerate(example.labels):
            loss, grad = softmax_xent(logits[j], int(label))
            total += fragment_weight * loss
            d_logits[j] = fragment_weight * grad
        d_feat = policy.fpe_head_backward(d_logits, head_cache, grads)
    policy.path_backward(d_mask, d_feat, path_cache, grads)
    return total, bce, grads


def fit_fpe_examples(policy: NavigatorPolicy, examples: Sequence[FpeExample], cfg: TrainConfig,
                     epochs: Optional[int] = None) -> TrainingCurves:
    if not examples:
        raise EmptyDatasetError("No pretraining examples")
    if not policy.config.uses_path_encoder:
        raise ValueError(f"Model {policy.config.model} has no path encoder to pretrain")
    curves = TrainingCurves()
    state = _optimizer(cfg)
    epochs = cfg.pretrain_epochs if epochs is None else epochs
    for epoch in range(epochs):
        rng = np.random.default_rng(derive_seed(cfg.seed, epoch))
        order = rng.permutation(len(examples))
        totals, bces = [], []
        for batch in chunk_list(list(order), cfg.batch_size):
            grads: Grads = {}
            for index in batch:
                total, bce, example_grads = fpe_loss(policy, examples[index], cfg.fragment_weight)
                totals.append(total)
                bces.append(bce)
                for name, value in example_grads.items():
                    accumulate(grads, name, value)
            sgd_update(policy.params, scale_grads(grads, 1.0 / len(batch)), state, cfg.frozen_groups)
        curves.add('fpe_loss', epoch, np.mean(totals))
        curves.add('fpe_bce', epoch, np.mean(bces))
        logger.info("FPE epoch %d: loss %.4f bce %.4f", epoch, np.mean(totals), np.mean(bces))
    return curves


def pretrain_fpe(dataset: Dataset, policy: NavigatorPolicy, cfg: TrainConfig,
                 fov: FovParams = FovParams()) -> TrainingCurves:
    """Train the path encoder on mask construction and the mask-to-action classifier"""
    _require_samples(dataset, "FPE pretraining")
    _log_config("FPE pretraining", cfg)
    examples = build_fpe_examples(dataset, policy.config.fragment_length, fov)
    return fit_fpe_examples(policy, examples, cfg)


# ============================================================================
# Behavioral cloning
# ============================================================================

def bc_loss(yhats: Sequence[np.ndarray], targets: Sequence[Action],
            fragment_logits: Optional[Sequence[np.ndarray]] = None,
            fragment_labels: Optional[Sequence[Sequence[Action]]] = None,
            fragment_weight: float = config.FRAGMENT_LOSS_WEIGHT
            ) -> Tuple[float, List[np.ndarray], Optional[List[np.ndarray]]]:
    """Sum of step cross-entropies plus the weighted fragment term, with gradients"""
    if len(yhats) != len(targets):
        raise ShapeMismatchError(f"{len(yhats)} predictions for {len(targets)} expert actions")
    total = 0.0
    d_yhat = []
    for yhat, target in zip(yhats, targets):
        loss, grad = softmax_xent(np.asarray(yhat, dtype=float), int(target))
        total += loss
        d_yhat.append(grad)

    if fragment_logits is None or fragment_weight == 0.0:
        return total, d_yhat, None
    if fragment_labels is None or len(fragment_labels) != len(fragment_logits):
        raise ShapeMismatchError("Fragment logits and labels differ in length")
    d_fragments = []
    for logits, labels in zip(fragment_logits, fragment_labels):
        d_logits = np.zeros_like(logits)
        for j, label in enumerate(labels):
            loss, grad = softmax_xent(logits[j], int(label))
            total += fragment_weight * loss
            d_logits[j] = fragment_weight * grad
        d_fragments.append(d_logits)
    return total, d_yhat, d_fragments


@dataclass
class TeacherForcedEpisode:
    state: object
    yhats: List[np.ndarray]
    predictions: List[Action]
    targets: List[Action]
    fragment_logits: Optional[List[np.ndarray]] = None


def teacher_forced_episode(policy: NavigatorPolicy, sample: Sample, dataset: Dataset,
                           fov: FovParams = FovParams()) -> TeacherForcedEpisode:
    """Walk the expert's poses; the previous-action input is the expert action"""
    grid = dataset.map_for(sample)
    state = policy.start_episode(sample, grid, keep_graph=True)
    yhats, predictions = [], []
    for pose, action in zip(expert_poses(sample, grid), sample.expert):
        decision = policy.decide(state, render_observation(grid, pose, fov), 'greedy')
        yhats.append(decision.yhat)
        predictions.append(decision.action)
        policy.observe_action(state, action)
    fragment_logits = None
    if policy.config.uses_fragments:
        fragment_logits = [fragment.logits for fragment in state.fragments]
    return TeacherForcedEpisode(state, yhats, predictions, list(sample.expert), fragment_logits)


def bc_episode_grads(policy: NavigatorPolicy, sample: Sample, dataset: Dataset, cfg: TrainConfig,
                     fov: FovParams = FovParams()) -> Tuple[float, Grads, TeacherForcedEpisode]:
    episode = teacher_forced_episode(policy, sample, dataset, fov)
    labels = expert_fragment_labels(sample, policy.config.fragment_length)
    loss, d_yhat, d_fragments = bc_loss(
        episode.yhats, episode.targets, episode.fragment_logits, labels, cfg.fragment_weight,
    )
    grads = policy.backward(episode.state, d_yhat, d_fragments, cfg.bptt_truncation)
    return loss, grads, episode


def next_action_accuracy(policy: NavigatorPolicy, dataset: Dataset,
                         fov: FovParams = FovParams()) -> float:
    """Teacher-forced next-action accuracy over every expert step"""
    predicted, expected = [], []
    for sample in dataset.samples:
        episode = teacher_forced_episode(policy, sample, dataset, fov)
        predicted.extend(int(a) for a in episode.predictions)
        expected.extend(int(a) for a in episode.targets)
    return float(accuracy_score(expected, predicted)) if expected else 0.0


def train_bc(dataset: Dataset, policy: NavigatorPolicy, cfg: TrainConfig,
             fov: FovParams = FovParams(),
             on_epoch: Optional[EpochCallback] = None) -> TrainingCurves:
    """Mini-batch teacher-forced training with momentum SGD"""
    _require_samples(dataset, "Behavioral cloning")
    _log_config("Behavioral cloning", cfg)
    curves = TrainingCurves()
    state = _optimizer(cfg)
    for epoch in range(cfg.epochs):
        rng = np.random.default_rng(derive_seed(cfg.seed, epoch))
        order = rng.permutation(len(dataset.samples))
        losses, predicted, expected = [], [], []
        for batch in chunk_list(list(order), cfg.batch_size):
            grads: Grads = {}
            for index in batch:
                loss, episode_grads, episode = bc_episode_grads(
                    policy, dataset.samples[index], dataset, cfg, fov,
                )
                losses.append(loss)
                predicted.extend(int(a) for a in episode.predictions)
                expected.extend(int(a) for a in episode.targets)
                for name, value in episode_grads.items():
                    accumulate(grads, name, value)
            sgd_update(policy.params, scale_grads(grads, 1.0 / len(batch)), state, cfg.frozen_groups)
        accuracy = float(accuracy_score(expected, predicted))
        curves.add('bc_loss', epoch, np.mean(losses))
        curves.add('bc_accuracy', epoch, accuracy)
        logger.info("BC epoch %d: loss %.4f accuracy %.3f", epoch, np.mean(losses), accuracy)
        if on_epoch is not None:
            on_epoch(epoch, policy)
    return curves


# ============================================================================
# Reward and returns
# ============================================================================

def collision_term(step: TraceStep) -> float:
    if step.collided:
        return -1.0
    return 1.0 if step.action == Action.FORWARD else 0.0


def compute_reward(step: TraceStep, weights: RewardWeights = RewardWeights()) -> float:
    """R1 * c + R2 * d + R3 * j"""
    progress = step.distance_before - step.distance_after
    answered = 1.0 if step.terminal and step.answer_correct else 0.0
    return weights.r1 * collision_term(step) + weights.r2 * progress + weights.r3 * answered


def episode_rewards(trace: EpisodeTrace, weights: RewardWeights = RewardWeights()) -> np.ndarray:
    return np.array([compute_reward(step, weights) for step in trace.steps], dtype=float)


def discounted_returns(rewards: Sequence[float], gamma: float = config.GAMMA) -> np.ndarray:
    """G_t = R_t + gamma * G_{t+1}"""
    if not 0.0 <= gamma <= 1.0:
        raise ValueError(f"gamma must lie in [0, 1], got {gamma}")
    returns = np.zeros(len(rewards))
    running = 0.0
    for t in reversed(range(len(rewards))):
        running = rewards[t] + gamma * running
        returns[t] = running
    return returns


def policy_gradient(yhat: np.ndarray, action: Action, advantage: float) -> np.ndarray:
    """Gradient of -log softmax(yhat)[action] * advantage w.r.t. yhat"""
    grad = softmax(np.asarray(yhat, dtype=float)) * advantage
    grad[int(action)] -= advantage
    return grad


class ReturnBaseline:
    """Running mean of episode returns over a fixed window"""

    def __init__(self, window: int = config.RETURN_BASELINE_WINDOW):
        self.returns = deque(maxlen=window)

    def value(self) -> float:
        return float(np.mean(self.returns)) if self.returns else 0.0

    def update(self, episode_return: float):
        self.returns.append(float(episode_return))


# ============================================================================
# Policy-gradient fine-tuning
# ============================================================================

@dataclass
class RlEpisode:
    trace: EpisodeTrace
    rewards: np.ndarray
    returns: np.ndarray
    baseline: float
    grads: Grads = field(default_factory=dict)


def rl_episode(policy: NavigatorPolicy, sample: Sample, dataset: Dataset, cfg: TrainConfig,
               baseline: float, seed: int, weights: RewardWeights = RewardWeights(),
               fov: FovParams = FovParams(),
               last_window: int = config.LAST_WINDOW) -> RlEpisode:
    grid = dataset.map_for(sample)
    trace, state = rollout(policy, grid, sample, cfg.max_steps, 'sample', seed, fov, keep_graph=True)
    answer, correct = answer_question(trace, sample, grid, last_window, seed)
    trace.answer, trace.answer_correct = answer, correct
    if trace.steps:
        trace.steps[-1].answer_correct = correct

    rewards = episode_rewards(trace, weights)
    returns = discounted_returns(rewards, cfg.gamma)
    d_yhat = [
        policy_gradient(np.asarray(step.yhat), step.action, returns[t] - baseline)
        for t, step in enumerate(trace.steps)
    ]
    grads = policy.backward(state, d_yhat, None, cfg.bptt_truncation) if d_yhat else {}
    return RlEpisode(trace, rewards, returns, baseline, grads)


def train_rl(dataset: Dataset, policy: NavigatorPolicy, cfg: TrainConfig,
             weights: RewardWeights = RewardWeights(), fov: FovParams = FovParams(),
             last_window: int = config.LAST_WINDOW,
             on_epoch: Optional[EpochCallback] = None) -> TrainingCurves:
    """REINFORCE from sampled rollouts; one parameter update per batch of episodes"""
    _require_samples(dataset, "Policy-gradient training")
    _log_config("Policy-gradient training", cfg)
    curves = TrainingCurves()
    state = _optimizer(cfg)
    tracker = ReturnBaseline(cfg.baseline_window)
    rng = np.random.default_rng(cfg.seed)
    episode_seeds = [derive_seed(cfg.seed, index) for index in range(cfg.rl_episodes)]

    for batch_index, batch in enumerate(chunk_list(episode_seeds, cfg.batch_size)):
        grads: Grads = {}
        for seed in batch:
            sample = dataset.samples[int(rng.integers(len(dataset.samples)))]
            baseline = tracker.value() if cfg.use_return_baseline else 0.0
            episode = rl_episode(policy, sample, dataset, cfg, baseline, seed, weights, fov, last_window)
            for name, value in episode.grads.items():
                accumulate(grads, name, value)
            episode_return = float(episode.returns[0]) if len(episode.returns) else 0.0
            tracker.update(episode_return)
            step = len(curves.series('rl_return'))
            curves.add('rl_return', step, episode_return)
            curves.add('rl_final_distance', step, episode.trace.final_distance)
        sgd_update(policy.params, scale_grads(grads, 1.0 / len(batch)), state, cfg.frozen_groups)
        logger.info("RL batch %d: mean return %.4f", batch_index,
                    np.mean(curves.series('rl_return')[-len(batch):]))
        if on_epoch is not None:
            on_epoch(batch_index, policy)
    return curves
