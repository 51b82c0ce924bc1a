"""
Navigators: the path-estimation / memory-recall policy, the single-recurrent baseline,
scripted agents used as evaluation oracles, and the shared rollout loop.
"""
import logging
from collections import deque
from dataclasses import dataclass, field
from typing import List, Optional, Protocol, Tuple

import numpy as np

from ..gridworld import apply_action, euclid_dist, is_visible, render_observation
from ..models import (
    NUM_ACTIONS, NUM_CHANNELS, Action, EpisodeTrace, FovParams, GridMap, Observation,
    PolicyConfig, QuestionSpec, QuestionType, Sample, TraceStep,
)
from .. import config
from ..exceptions import ShapeMismatchError
from .tensorkit import (
    Grads, ParamStore, accumulate, add_gru, affine, affine_backward,
    bidirectional_encode, bidirectional_encode_backward, recurrent_step,
    recurrent_step_backward, sigmoid, softmax, softmax_backward,
)

logger = logging.getLogger(__name__)

QUESTION_TYPES = list(QuestionType)
QUESTION_INPUT_DIM = len(QUESTION_TYPES) + len(config.OBJECT_CLASSES)


def one_hot(index: int, size: int) -> np.ndarray:
    vec = np.zeros(size)
    vec[int(index)] = 1.0
    return vec


def question_one_hot(question: QuestionSpec, object_class: str) -> np.ndarray:
    """qtype one-hot followed by object-class one-hot"""
    vec = np.zeros(QUESTION_INPUT_DIM)
    vec[QUESTION_TYPES.index(question.qtype)] = 1.0
    vec[len(QUESTION_TYPES) + config.OBJECT_CLASSES.index(object_class)] = 1.0
    return vec


def greedy_action(yhat: np.ndarray) -> Action:
    """argmax of softmax(yhat); softmax is monotone so this is argmax(yhat), lowest index on ties"""
    return Action(int(np.argmax(yhat)))


# ============================================================================
# Fragments and memory recall
# ============================================================================

@dataclass
class FragmentMatrix:
    """k x 4 action distributions predicted at step t"""
    probs: np.ndarray
    t: int = 0
    logits: Optional[np.ndarray] = None

    @property
    def k(self) -> int:
        return self.probs.shape[0]


class RecallBuffer:
    """The last k fragments, newest last"""

    def __init__(self, k: int):
        self.k = k
        self._entries = deque(maxlen=k)

    def push(self, fragment: FragmentMatrix):
        if fragment.k != self.k:
            raise ShapeMismatchError(f"Fragment has {fragment.k} rows, buffer expects {self.k}")
        self._entries.append(fragment)

    def recent(self, offset: int) -> FragmentMatrix:
        """Fragment predicted `offset` steps ago"""
        return self._entries[-1 - offset]

    def __len__(self) -> int:
        return len(self._entries)


@dataclass
class RecallWeights:
    """Per-offset scalars; strategy A is the all-ones special case"""
    strategy: str
    values: np.ndarray

    def effective(self) -> np.ndarray:
        return np.ones_like(self.values) if self.strategy == 'A' else self.values


def recall_decide(buffer: RecallBuffer, weights: RecallWeights) -> Tuple[np.ndarray, Action]:
    """yhat = sum_i w_i * F_{t-i}[row i] over the fragments available"""
    if len(buffer) == 0:
        raise ValueError("recall_decide needs at least one fragment")
    w = weights.effective()
    yhat = np.zeros(NUM_ACTIONS)
    for offset in range(len(buffer)):
        yhat = yhat + w[offset] * buffer.recent(offset).probs[offset]
    return yhat, greedy_action(yhat)


# ============================================================================
# Agent protocol
# ============================================================================

@dataclass
class Decision:
    yhat: np.ndarray
    action: Action
    fragment: Optional[FragmentMatrix] = None


class Agent(Protocol):
    def start_episode(self, sample: Sample, grid: GridMap, keep_graph: bool = False): ...

    def decide(self, state, observation: Observation, mode: str,
               rng: np.random.Generator) -> Decision: ...

    def observe_action(self, state, action: Action): ...


def choose_action(yhat: np.ndarray, mode: str, rng: np.random.Generator) -> Action:
    if mode == 'greedy':
        return greedy_action(yhat)
    if mode == 'sample':
        return Action(int(rng.choice(NUM_ACTIONS, p=softmax(yhat))))
    raise ValueError(f"Unknown rollout mode: {mode}")


# ============================================================================
# Learned navigator
# ============================================================================

@dataclass
class EpisodeState:
    """Per-episode memory: recall buffer or recurrent state, plus backward caches"""
    question_input: np.ndarray
    question_vec: np.ndarray
    buffer: Optional[RecallBuffer]
    hidden: Optional[np.ndarray]
    keep_graph: bool
    prev_action: Optional[Action] = None
    prev_yhat: Optional[np.ndarray] = None
    t: int = 0
    steps: List[dict] = field(default_factory=list)
    fragments: List[FragmentMatrix] = field(default_factory=list)


class NavigatorPolicy:
    """One class for all four variants: baseline, baseline_fpe, pemr_a, pemr_b"""

    def __init__(self, policy_config: Optional[PolicyConfig] = None, seed: int = 0,
                 params: Optional[ParamStore] = None):
        self.config = policy_config or PolicyConfig()
        self.params = params if params is not None else self._init_params(seed)

    # ------------------------------------------------------------------
    # Parameters
    # ------------------------------------------------------------------

    @property
    def obs_dim(self) -> int:
        return self.config.fov_depth * config.PATCH_WIDTH * NUM_CHANNELS

    @property
    def num_cells(self) -> int:
        return self.config.fov_depth * config.PATCH_WIDTH

    @property
    def input_dim(self) -> int:
        """Length of x_t"""
        cfg = self.config
        dim = cfg.semantic_dim + cfg.question_dim
        if cfg.uses_path_encoder:
            dim += cfg.path_dim
        if not cfg.uses_fragments:
            dim += NUM_ACTIONS
        return dim

    @property
    def slot_dim(self) -> int:
        return self.input_dim + NUM_ACTIONS + self.config.fragment_length

    def _init_params(self, seed: int) -> ParamStore:
        cfg = self.config
        store = ParamStore(seed=seed)
        store.add_uniform('semantic.W', (cfg.semantic_dim, self.obs_dim))
        store.add_zeros('semantic.b', (cfg.semantic_dim,))
        if cfg.uses_path_encoder:
            store.add_uniform('path.W1', (cfg.path_hidden_dim, self.obs_dim))
            store.add_zeros('path.b1', (cfg.path_hidden_dim,))
            store.add_uniform('path.Wm', (self.num_cells, cfg.path_hidden_dim))
            store.add_zeros('path.bm', (self.num_cells,))
            store.add_uniform('path.Wf', (cfg.path_dim, self.num_cells))
            store.add_zeros('path.bf', (cfg.path_dim,))
            # mask-to-action classifier, used only by FPE pretraining
            store.add_uniform('fpe_head.W', (cfg.fragment_length * NUM_ACTIONS, cfg.path_dim))
            store.add_zeros('fpe_head.b', (cfg.fragment_length * NUM_ACTIONS,))
        store.add_uniform('question.E', (cfg.question_dim, QUESTION_INPUT_DIM))
        if cfg.uses_fragments:
            add_gru(store, 'bdnav.fwd', self.slot_dim, cfg.hidden_dim)
            add_gru(store, 'bdnav.bwd', self.slot_dim, cfg.hidden_dim)
            store.add_uniform('head.W', (NUM_ACTIONS, 2 * cfg.hidden_dim))
            store.add_zeros('head.b', (NUM_ACTIONS,))
            if cfg.strategy == 'B':
                store.add_constant('recall.w', (cfg.fragment_length,), 1.0)
        else:
            add_gru(store, 'baseline.gru', self.input_dim, 2 * cfg.hidden_dim)
            store.add_uniform('head.W', (NUM_ACTIONS, 2 * cfg.hidden_dim))
            store.add_zeros('head.b', (NUM_ACTIONS,))
        return store

    @property
    def recall_weights(self) -> RecallWeights:
        k = self.config.fragment_length
        if self.config.strategy == 'B':
            return RecallWeights('B', self.params['recall.w'])
        return RecallWeights('A', np.ones(k))

    # ------------------------------------------------------------------
    # Encoders
    # ------------------------------------------------------------------

    def semantic_forward(self, obs_flat: np.ndarray) -> Tuple[np.ndarray, tuple]:
        a, cache = affine(obs_flat, self.params['semantic.W'], self.params['semantic.b'])
        f = np.tanh(a)
        return f, (cache, f)

    def semantic_backward(self, df: np.ndarray, cache: tuple, grads: Grads):
        affine_cache, f = cache
        _, dW, db = affine_backward(df * (1.0 - f ** 2), affine_cache)
        accumulate(grads, 'semantic.W', dW)
        accumulate(grads, 'semantic.b', db)

    def path_forward(self, obs_flat: np.ndarray) -> Tuple[np.ndarray, np.ndarray, tuple]:
        """Per-cell mask logits and the pooled path feature computed from the mask"""
        p = self.params
        a1, c1 = affine(obs_flat, p['path.W1'], p['path.b1'])
        h1 = np.tanh(a1)
        mask_logits, cm = affine(h1, p['path.Wm'], p['path.bm'])
        s = sigmoid(mask_logits)
        af, cf = affine(s, p['path.Wf'], p['path.bf'])
        feat = np.tanh(af)
        return mask_logits, feat, (c1, h1, cm, s, cf, feat)

    def path_backward(self, d_mask_logits: Optional[np.ndarray], d_feat: Optional[np.ndarray],
                      cache: tuple, grads: Grads):
        c1, h1, cm, s, cf, feat = cache
        dm = np.zeros_like(s) if d_mask_logits is None else d_mask_logits.copy()
        if d_feat is not None:
            ds, dWf, dbf = affine_backward(d_feat * (1.0 - feat ** 2), cf)
            accumulate(grads, 'path.Wf', dWf)
            accumulate(grads, 'path.bf', dbf)
            dm = dm + ds * s * (1.0 - s)
        dh1, dWm, dbm = affine_backward(dm, cm)
        accumulate(grads, 'path.Wm', dWm)
        accumulate(grads, 'path.bm', dbm)
        _, dW1, db1 = affine_backward(dh1 * (1.0 - h1 ** 2), c1)
        accumulate(grads, 'path.W1', dW1)
        accumulate(grads, 'path.b1', db1)

    def fpe_head_forward(self, feat: np.ndarray) -> Tuple[np.ndarray, tuple]:
        """Mask-to-action classifier: k x 4 logits from the path feature"""
        logits, cache = affine(feat, self.params['fpe_head.W'], self.params['fpe_head.b'])
        return logits.reshape(self.config.fragment_length, NUM_ACTIONS), cache

    def fpe_head_backward(self, d_logits: np.ndarray, cache: tuple, grads: Grads) -> np.ndarray:
        d_feat, dW, db = affine_backward(d_logits.reshape(-1), cache)
        accumulate(grads, 'fpe_head.W', dW)
        accumulate(grads, 'fpe_head.b', db)
        return d_feat

    def question_vector(self, question_input: np.ndarray) -> np.ndarray:
        return self.params['question.E'] @ question_input

    def encode_inputs(self, observation: Observation, q: np.ndarray,
                      y_prev: np.ndarray) -> Tuple[np.ndarray, dict]:
        """x_t = [f_w(I), f_phi(I), q] for the recall policy, [f_w(I), (f_phi(I),) q, y_prev] otherwise"""
        obs_flat = observation.flatten()
        if obs_flat.shape[0] != self.obs_dim:
            raise ShapeMismatchError(f"Observation has {obs_flat.shape[0]} values, expected {self.obs_dim}")
        semantic, semantic_cache = self.semantic_forward(obs_flat)
        parts = [semantic]
        cache = {'semantic': semantic_cache, 'path': None}
        if self.config.uses_path_encoder:
            _, feat, path_cache = self.path_forward(obs_flat)
            parts.append(feat)
            cache['path'] = path_cache
        parts.append(q)
        if not self.config.uses_fragments:
            parts.append(y_prev)
        return np.concatenate(parts), cache

    def encode_backward(self, dx: np.ndarray, cache: dict, grads: Grads) -> np.ndarray:
        """Returns the gradient w.r.t. q"""
        cfg = self.config
        offset = cfg.semantic_dim
        self.semantic_backward(dx[:offset], cache['semantic'], grads)
        if cfg.uses_path_encoder:
            self.path_backward(None, dx[offset:offset + cfg.path_dim], cache['path'], grads)
            offset += cfg.path_dim
        return dx[offset:offset + cfg.question_dim]

    # ------------------------------------------------------------------
    # Fragment predictor and baseline cell
    # ------------------------------------------------------------------

    def predict_fragment(self, x: np.ndarray, y_prev: np.ndarray, t: int = 0) -> Tuple[FragmentMatrix, tuple]:
        """k slot inputs [x, y_prev, position one-hot] through the bidirectional encoder"""
        k = self.config.fragment_length
        slots = np.stack([np.concatenate([x, y_prev, one_hot(j, k)]) for j in range(k)])
        G, bd_cache = bidirectional_encode(slots, self.params, 'bdnav')
        logits, head_cache = affine(G, self.params['head.W'], self.params['head.b'])
        probs = softmax(logits, axis=1)
        return FragmentMatrix(probs=probs, t=t, logits=logits), (bd_cache, head_cache, probs)

    def fragment_backward(self, d_logits: np.ndarray, cache: tuple,
                          grads: Grads) -> Tuple[np.ndarray, np.ndarray]:
        """Returns (dL/dx, dL/dy_prev), each summed over the k slots"""
        bd_cache, head_cache, _ = cache
        dG, dW, db = affine_backward(d_logits, head_cache)
        accumulate(grads, 'head.W', dW)
        accumulate(grads, 'head.b', db)
        d_slots, bd_grads = bidirectional_encode_backward(dG, bd_cache)
        for name, value in bd_grads.items():
            accumulate(grads, name, value)
        dx = d_slots[:, :self.input_dim].sum(axis=0)
        dy_prev = d_slots[:, self.input_dim:self.input_dim + NUM_ACTIONS].sum(axis=0)
        return dx, dy_prev

    def baseline_step(self, x: np.ndarray, h_prev: np.ndarray) -> Tuple[np.ndarray, np.ndarray, tuple]:
        """y_t, h_t = pi(x_t, h_{t-1}); returns (probabilities, h_t, cache)"""
        h, gru_cache = recurrent_step(x, h_prev, self.params, 'baseline.gru')
        logits, head_cache = affine(h, self.params['head.W'], self.params['head.b'])
        return softmax(logits), h, (gru_cache, head_cache, logits)

    # ------------------------------------------------------------------
    # Agent protocol
    # ------------------------------------------------------------------

    def start_episode(self, sample: Sample, grid: GridMap, keep_graph: bool = False) -> EpisodeState:
        target = grid.object_by_id(sample.question.target_object_id)
        question_input = question_one_hot(sample.question, target.object_class)
        cfg = self.config
        return EpisodeState(
            question_input=question_input,
            question_vec=self.question_vector(question_input),
            buffer=RecallBuffer(cfg.fragment_length) if cfg.uses_fragments else None,
            hidden=None if cfg.uses_fragments else np.zeros(2 * cfg.hidden_dim),
            keep_graph=keep_graph,
        )

    def observe_action(self, state: EpisodeState, action: Action):
        state.prev_action = Action(action)

    def decide(self, state: EpisodeState, observation: Observation, mode: str = 'greedy',
               rng: Optional[np.random.Generator] = None) -> Decision:
        y_prev = np.zeros(NUM_ACTIONS) if state.prev_action is None else one_hot(state.prev_action, NUM_ACTIONS)
        x, encode_cache = self.encode_inputs(observation, state.question_vec, y_prev)
        record = {'encode': encode_cache}
        if self.config.uses_fragments:
            # the fragment predictor is fed its own previous decision, not the executed action
            y_feedback = np.zeros(NUM_ACTIONS) if state.prev_yhat is None else softmax(state.prev_yhat)
            fragment, fragment_cache = self.predict_fragment(x, y_feedback, state.t)
            state.buffer.push(fragment)
            state.fragments.append(fragment)
            yhat, action = recall_decide(state.buffer, self.recall_weights)
            record['fragment'] = fragment_cache
            record['feedback'] = y_feedback
        else:
            _, state.hidden, step_cache = self.baseline_step(x, state.hidden)
            yhat = step_cache[2]
            action = greedy_action(yhat)
            record['baseline'] = step_cache
            fragment = None
        if mode != 'greedy':
            action = choose_action(yhat, mode, rng)
        if state.keep_graph:
            state.steps.append(record)
        state.prev_yhat = yhat
        state.t += 1
        return Decision(yhat=yhat, action=action, fragment=fragment)

    # ------------------------------------------------------------------
    # Backward through a recorded episode
    # ------------------------------------------------------------------

    def backward(self, state: EpisodeState, d_yhat: List[np.ndarray],
                 d_fragment_logits: Optional[List[np.ndarray]] = None,
                 truncation: Optional[int] = None) -> Grads:
        """Parameter gradients given dL/dyhat_t (and optional dL/d fragment logits) per step

        Recall policy: gradients reach the fragment predicted i steps ago through row i
        (truncation limits i) and the previous decision through the feedback input.
        Baseline: backprop through time, truncated in chunks.
        """
        if not state.keep_graph or len(state.steps) != len(d_yhat):
            raise ShapeMismatchError(
                f"Episode recorded {len(state.steps)} steps, got {len(d_yhat)} gradients"
            )
        grads: Grads = {}
        if self.config.uses_fragments:
            dq = self._backward_recall(state, d_yhat, d_fragment_logits, truncation, grads)
        else:
            dq = self._backward_baseline(state, d_yhat, truncation, grads)
        accumulate(grads, 'question.E', np.outer(dq, state.question_input))
        return grads

    def _backward_recall(self, state, d_yhat, d_fragment_logits, truncation, grads) -> np.ndarray:
        """Reverse sweep: yhat_t reaches fragments t-i through row i, and fragment t reaches
        yhat_{t-1} through its softmax feedback input"""
        k = self.config.fragment_length
        T = len(state.steps)
        weights = self.recall_weights
        w = weights.effective()
        d_total = [np.array(d, dtype=float) for d in d_yhat]
        d_probs = [np.zeros((k, NUM_ACTIONS)) for _ in range(T)]
        dw = np.zeros(k)
        dq = np.zeros(self.config.question_dim)
        for t in reversed(range(T)):
            for offset in range(min(t + 1, k)):
                source = t - offset
                dw[offset] += float(d_total[t] @ state.fragments[source].probs[offset])
                if truncation is None or offset < truncation:
                    d_probs[source][offset] += w[offset] * d_total[t]

            # every yhat reading fragment t has been swept, so d_probs[t] is complete
            record = state.steps[t]
            d_logits = softmax_backward(d_probs[t], state.fragments[t].probs)
            if d_fragment_logits is not None:
                d_logits = d_logits + d_fragment_logits[t]
            dx, d_feedback = self.fragment_backward(d_logits, record['fragment'], grads)
            dq = dq + self.encode_backward(dx, record['encode'], grads)
            if t > 0:
                d_total[t - 1] = d_total[t - 1] + softmax_backward(d_feedback, record['feedback'])
        if weights.strategy == 'B':
            accumulate(grads, 'recall.w', dw)
        return dq

    def _backward_baseline(self, state, d_yhat, truncation, grads) -> np.ndarray:
        dq = np.zeros(self.config.question_dim)
        carry = np.zeros(2 * self.config.hidden_dim)
        for t in reversed(range(len(state.steps))):
            record = state.steps[t]
            gru_cache, head_cache, _ = record['baseline']
            dh, dW, db = affine_backward(d_yhat[t], head_cache)
            accumulate(grads, 'head.W', dW)
            accumulate(grads, 'head.b', db)
            dx, carry, gru_grads = recurrent_step_backward(dh + carry, gru_cache)
            for name, value in gru_grads.items():
                accumulate(grads, name, value)
            if truncation is not None and t % truncation == 0:
                carry = np.zeros_like(carry)
            dq = dq + self.encode_backward(dx, record['encode'], grads)
        return dq


# ============================================================================
# Scripted agents
# ============================================================================

@dataclass
class ScriptedState:
    actions: List[Action]
    t: int = 0


class ExpertReplayAgent:
    """Replays the sample's expert actions"""

    def start_episode(self, sample: Sample, grid: GridMap, keep_graph: bool = False) -> ScriptedState:
        return ScriptedState(actions=list(sample.expert))

    def decide(self, state: ScriptedState, observation: Observation, mode: str = 'greedy',
               rng: Optional[np.random.Generator] = None) -> Decision:
        action = state.actions[state.t] if state.t < len(state.actions) else Action.STOP
        state.t += 1
        return Decision(yhat=one_hot(action, NUM_ACTIONS), action=action)

    def observe_action(self, state: ScriptedState, action: Action):
        pass


class RandomAgent:
    """Uniform over the four actions, always sampled"""

    def start_episode(self, sample: Sample, grid: GridMap, keep_graph: bool = False) -> ScriptedState:
        return ScriptedState(actions=[])

    def decide(self, state, observation, mode='greedy', rng=None) -> Decision:
        yhat = np.zeros(NUM_ACTIONS)
        return Decision(yhat=yhat, action=choose_action(yhat, 'sample', rng))

    def observe_action(self, state, action):
        pass


class StopAgent:
    """Stops immediately"""

    def start_episode(self, sample: Sample, grid: GridMap, keep_graph: bool = False) -> ScriptedState:
        return ScriptedState(actions=[])

    def decide(self, state, observation, mode='greedy', rng=None) -> Decision:
        return Decision(yhat=one_hot(Action.STOP, NUM_ACTIONS), action=Action.STOP)

    def observe_action(self, state, action):
        pass


# ============================================================================
# Rollout
# ============================================================================

def rollout(agent, grid: GridMap, sample: Sample, max_steps: int = config.MAX_EPISODE_STEPS,
            mode: str = 'greedy', seed: int = 0, fov: FovParams = FovParams(),
            keep_graph: bool = False) -> Tuple[EpisodeTrace, object]:
    """Render, decide, act until Stop or max_steps; returns (trace, agent episode state)"""
    rng = np.random.default_rng(seed)
    target = grid.object_by_id(sample.question.target_object_id).cell
    target_room = int(grid.room_ids[target[1], target[0]])
    state = agent.start_episode(sample, grid, keep_graph)

    pose = sample.start
    trace = EpisodeTrace(
        sample_id=sample.sample_id,
        start=pose,
        start_distance=euclid_dist(pose, target),
        start_in_target_room=int(grid.room_ids[pose.y, pose.x]) == target_room,
    )
    terminated = False
    for t in range(max_steps):
        observation = render_observation(grid, pose, fov)
        decision = agent.decide(state, observation, mode, rng)
        outcome = apply_action(grid, pose, decision.action)
        agent.observe_action(state, decision.action)
        trace.steps.append(TraceStep(
            t=t,
            pose=pose,
            action=decision.action,
            collided=outcome.collided,
            next_pose=outcome.pose,
            distance_before=euclid_dist(pose, target),
            distance_after=euclid_dist(outcome.pose, target),
            in_target_room=int(grid.room_ids[pose.y, pose.x]) == target_room,
            target_visible=is_visible(grid, pose, target, fov),
            yhat=[float(v) for v in decision.yhat],
            fragment=decision.fragment.probs.tolist() if decision.fragment is not None else None,
        ))
        pose = outcome.pose
        if outcome.terminated:
            terminated = True
            break
    trace.forced_termination = not terminated
    trace.final_in_target_room = int(grid.room_ids[pose.y, pose.x]) == target_room
    trace.final_target_visible = is_visible(grid, pose, target, fov)
    if trace.steps:
        trace.steps[-1].terminal = True
    return trace, state
