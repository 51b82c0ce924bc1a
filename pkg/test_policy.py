"""
Navigator policies: memory recall, encoders, rollouts, backward passes and checkpoints
"""
import json

import numpy as np
import pytest

from conftest import make_sample
from navigator.analytics import room_metrics
from navigator.exceptions import DatasetFormatError, ShapeMismatchError
from navigator.gridworld import all_poses, render_observation, replay_actions
from navigator.ml.policy import (
    ExpertReplayAgent, FragmentMatrix, NavigatorPolicy, RandomAgent, RecallBuffer,
    RecallWeights, StopAgent, choose_action, greedy_action, one_hot, recall_decide, rollout,
)
from navigator.ml.tensorkit import grad_check, softmax
from navigator.models import Action, AgentPose, Heading, PolicyConfig
from navigator.repositories import CheckpointRepository


def stop_rows(k: int) -> np.ndarray:
    return np.tile(one_hot(Action.STOP, 4), (k, 1))


def random_fragment(rng, k: int, t: int = 0) -> FragmentMatrix:
    return FragmentMatrix(probs=softmax(rng.normal(size=(k, 4)), axis=1), t=t)


# ============================================================================
# Memory recall
# ============================================================================

def test_aligned_forward_rows_sum_up():
    buffer = RecallBuffer(4)
    for step in range(4):
        probs = stop_rows(4)
        # the row that lines up with the current step, pushed `3 - step` steps ago
        probs[3 - step] = one_hot(Action.FORWARD, 4)
        buffer.push(FragmentMatrix(probs=probs, t=step))
    yhat, action = recall_decide(buffer, RecallWeights('A', np.ones(4)))
    assert np.array_equal(yhat, [4.0, 0.0, 0.0, 0.0])
    assert action == Action.FORWARD


def test_first_step_uses_row_zero_only():
    rng = np.random.default_rng(0)
    buffer = RecallBuffer(4)
    fragment = random_fragment(rng, 4)
    buffer.push(fragment)
    weights = RecallWeights('B', np.array([0.7, 2.0, 3.0, 4.0]))
    yhat, _ = recall_decide(buffer, weights)
    assert np.allclose(yhat, 0.7 * fragment.probs[0])


def test_unit_weights_match_strategy_a_bitwise():
    rng = np.random.default_rng(1)
    for _ in range(1000):
        buffer = RecallBuffer(4)
        for t in range(int(rng.integers(1, 7))):
            buffer.push(random_fragment(rng, 4, t))
        a, action_a = recall_decide(buffer, RecallWeights('A', np.ones(4)))
        b, action_b = recall_decide(buffer, RecallWeights('B', np.ones(4)))
        assert np.array_equal(a, b)
        assert action_a == action_b


def test_strategy_a_ignores_stored_values():
    assert np.array_equal(RecallWeights('A', np.array([5.0, 0.0])).effective(), [1.0, 1.0])


def test_argmax_is_shift_invariant_and_matches_softmax():
    rng = np.random.default_rng(2)
    yhat = rng.normal(size=(100_000, 4)) * 3
    shift = rng.normal(size=(100_000, 1)) * 10
    best = np.argmax(yhat, axis=1)
    assert np.array_equal(best, np.argmax(yhat + shift, axis=1))
    assert np.array_equal(best, np.argmax(softmax(yhat, axis=1), axis=1))
    for row in range(1000):
        assert greedy_action(yhat[row]) == Action(int(best[row]))
        assert greedy_action(yhat[row] + shift[row, 0]) == greedy_action(yhat[row])


def test_ties_go_to_lowest_index():
    assert greedy_action(np.array([0.0, 1.0, 1.0, 0.0])) == Action.TURN_LEFT
    assert greedy_action(np.zeros(4)) == Action.FORWARD


def test_buffer_holds_at_most_k():
    rng = np.random.default_rng(3)
    buffer = RecallBuffer(3)
    for t in range(6):
        buffer.push(random_fragment(rng, 3, t))
        assert len(buffer) == min(t + 1, 3)
    assert buffer.recent(0).t == 5
    assert buffer.recent(2).t == 3


def test_buffer_rejects_wrong_fragment_length():
    with pytest.raises(ShapeMismatchError):
        RecallBuffer(3).push(FragmentMatrix(probs=stop_rows(4)))


def test_empty_buffer_rejected():
    with pytest.raises(ValueError):
        recall_decide(RecallBuffer(2), RecallWeights('A', np.ones(2)))


def test_unknown_mode_rejected():
    with pytest.raises(ValueError):
        choose_action(np.zeros(4), 'beam', np.random.default_rng(0))


# ============================================================================
# Encoders and predictors
# ============================================================================

@pytest.mark.parametrize('model, expected', [
    ('pemr_b', 64 + 32 + 16),
    ('pemr_a', 64 + 32 + 16),
    ('baseline_fpe', 64 + 32 + 16 + 4),
    ('baseline', 64 + 16 + 4),
])
def test_input_width_under_defaults(small_room, room_sample, model, expected):
    policy = NavigatorPolicy(PolicyConfig(model=model), seed=0)
    state = policy.start_episode(room_sample, small_room)
    obs = render_observation(small_room, room_sample.start)
    x, _ = policy.encode_inputs(obs, state.question_vec, np.zeros(4))
    assert x.shape == (expected,)
    assert policy.input_dim == expected


def test_encoding_is_stateless(small_room, room_sample, tiny_policy_config):
    policy = NavigatorPolicy(tiny_policy_config(), seed=1)
    state = policy.start_episode(room_sample, small_room)
    obs = render_observation(small_room, room_sample.start)
    first, _ = policy.encode_inputs(obs, state.question_vec, np.zeros(4))
    second, _ = policy.encode_inputs(obs, state.question_vec, np.zeros(4))
    assert np.array_equal(first, second)


def test_fragment_rows_are_distributions(tiny_policy_config):
    rng = np.random.default_rng(4)
    for k in (1, 3, 5):
        policy = NavigatorPolicy(tiny_policy_config(fragment_length=k), seed=k)
        fragment, _ = policy.predict_fragment(rng.normal(size=policy.input_dim), one_hot(2, 4))
        assert fragment.probs.shape == (k, 4)
        assert np.allclose(fragment.probs.sum(axis=1), 1.0, atol=1e-6)


def test_fragment_prediction_is_deterministic(tiny_policy_config):
    policy = NavigatorPolicy(tiny_policy_config(), seed=5)
    x = np.linspace(-1.0, 1.0, policy.input_dim)
    first, _ = policy.predict_fragment(x, one_hot(0, 4))
    second, _ = policy.predict_fragment(x, one_hot(0, 4))
    assert np.array_equal(first.probs, second.probs)


def test_baseline_with_zero_head_weights_returns_softmax_of_bias(tiny_policy_config):
    policy = NavigatorPolicy(tiny_policy_config('baseline'), seed=6)
    bias = np.array([0.5, -1.0, 2.0, 0.0])
    policy.params['head.W'] = np.zeros_like(policy.params['head.W'])
    policy.params['head.b'] = bias
    h = np.zeros(2 * policy.config.hidden_dim)
    rng = np.random.default_rng(6)
    for _ in range(3):
        probs, h, _ = policy.baseline_step(rng.normal(size=policy.input_dim), h)
        assert np.allclose(probs, softmax(bias))
        assert probs.sum() == pytest.approx(1.0)


def test_same_seed_same_parameters(tiny_policy_config):
    first = NavigatorPolicy(tiny_policy_config(), seed=11)
    second = NavigatorPolicy(tiny_policy_config(), seed=11)
    for name in first.params.names():
        assert np.array_equal(first.params[name], second.params[name])


def test_recall_weights_start_at_one(tiny_policy_config):
    policy = NavigatorPolicy(tiny_policy_config('pemr_b'), seed=0)
    assert policy.recall_weights.strategy == 'B'
    assert np.array_equal(policy.recall_weights.values, np.ones(3))
    assert 'recall.w' not in NavigatorPolicy(tiny_policy_config('pemr_a')).params


# ============================================================================
# Rollouts
# ============================================================================

def test_stop_fragments_end_episode_at_once(small_room, room_sample, tiny_policy_config):
    policy = NavigatorPolicy(tiny_policy_config('pemr_b'), seed=2)
    policy.params['head.W'] = np.zeros_like(policy.params['head.W'])
    policy.params['head.b'] = np.array([0.0, 0.0, 0.0, 30.0])
    trace, _ = rollout(policy, small_room, room_sample)
    assert trace.actions == [Action.STOP]
    assert trace.final_pose == room_sample.start
    assert not trace.forced_termination


def test_zero_step_budget_gives_empty_forced_trace(small_room, room_sample, tiny_policy_config):
    trace, _ = rollout(NavigatorPolicy(tiny_policy_config()), small_room, room_sample, max_steps=0)
    assert trace.steps == []
    assert trace.forced_termination
    assert trace.final_distance == trace.start_distance


def test_greedy_rollout_is_deterministic(small_room, room_sample, tiny_policy_config):
    policy = NavigatorPolicy(tiny_policy_config(), seed=3)
    first, _ = rollout(policy, small_room, room_sample, max_steps=20)
    second, _ = rollout(policy, small_room, room_sample, max_steps=20)
    assert first.to_dict() == second.to_dict()


def test_sampled_rollout_is_seeded(small_room, room_sample, tiny_policy_config):
    policy = NavigatorPolicy(tiny_policy_config('baseline'), seed=4)
    first, _ = rollout(policy, small_room, room_sample, max_steps=15, mode='sample', seed=8)
    second, _ = rollout(policy, small_room, room_sample, max_steps=15, mode='sample', seed=8)
    assert first.actions == second.actions


def test_expert_replay_reaches_terminal_pose(small_room, room_sample):
    trace, _ = rollout(ExpertReplayAgent(), small_room, room_sample)
    assert trace.actions == room_sample.expert
    assert trace.final_pose == room_sample.terminal_pose
    assert trace.steps[-1].terminal
    assert trace.steps[-1].target_visible


def test_trace_steps_chain_and_record_flags(small_room, room_sample):
    trace, _ = rollout(RandomAgent(), small_room, room_sample, max_steps=30, seed=1)
    pose = trace.start
    for step in trace.steps:
        assert step.pose == pose
        assert step.in_target_room
        assert step.distance_before >= 0.0 and step.distance_after >= 0.0
        pose = step.next_pose
    assert len(trace.steps) <= 30


def test_stop_agent_does_not_move(two_rooms):
    sample = make_sample(two_rooms, AgentPose(2, 2, Heading.N), target_id=1)
    trace, _ = rollout(StopAgent(), two_rooms, sample)
    assert len(trace.steps) == 1
    assert trace.final_distance == trace.start_distance


def test_cut_off_episode_judges_its_final_pose(two_rooms):
    sample = make_sample(two_rooms, AgentPose(4, 2, Heading.E), target_id=1)
    trace, _ = rollout(ExpertReplayAgent(), two_rooms, sample, max_steps=1)
    assert trace.forced_termination
    assert (trace.final_pose.x, trace.final_pose.y) == (5, 2)
    assert not trace.steps[0].in_target_room
    assert trace.final_in_target_room
    assert trace.room_flags() == [False, True]
    r_e, r_T, _ = room_metrics([trace])
    assert (r_e, r_T) == (1.0, 1.0)


def test_stopped_episode_has_one_frame_per_step(small_room, room_sample):
    trace, _ = rollout(ExpertReplayAgent(), small_room, room_sample)
    assert not trace.forced_termination
    assert len(trace.frames()) == len(trace.steps)
    assert not trace.start_in_target_room


# ============================================================================
# Backward passes
# ============================================================================

def teacher_forced_sum(policy, grid, sample, weights, fragment_weights=None):
    """sum_t weights[t] . yhat_t (+ fragment_weights[t] . fragment logits) along the expert"""
    state = policy.start_episode(sample, grid, keep_graph=True)
    poses = replay_actions(grid, sample.start, sample.expert)
    total = 0.0
    for t, action in enumerate(sample.expert):
        decision = policy.decide(state, render_observation(grid, poses[t]))
        total += float(weights[t] @ decision.yhat)
        if fragment_weights is not None:
            total += float(np.sum(fragment_weights[t] * decision.fragment.logits))
        policy.observe_action(state, action)
    return total, state


def record_inputs(policy, method: str):
    """Wrap a policy method and keep a copy of its second positional argument per call"""
    seen = []
    original = getattr(policy, method)

    def spy(x, y_prev, *args):
        seen.append(np.array(y_prev, copy=True))
        return original(x, y_prev, *args)

    setattr(policy, method, spy)
    return seen


def test_fragment_predictor_is_fed_the_previous_decision(small_room, room_sample, tiny_policy_config):
    policy = NavigatorPolicy(tiny_policy_config('pemr_b'), seed=5)
    fed = record_inputs(policy, 'predict_fragment')
    state = policy.start_episode(room_sample, small_room)
    poses = replay_actions(small_room, room_sample.start, room_sample.expert)
    yhats = []
    for t, action in enumerate(room_sample.expert):
        yhats.append(policy.decide(state, render_observation(small_room, poses[t])).yhat)
        policy.observe_action(state, action)

    assert np.array_equal(fed[0], np.zeros(4))
    for t in range(1, len(fed)):
        assert np.allclose(fed[t], softmax(yhats[t - 1]))
        assert not np.allclose(fed[t], one_hot(room_sample.expert[t - 1], 4))


def test_baseline_input_carries_the_executed_action(small_room, room_sample, tiny_policy_config):
    policy = NavigatorPolicy(tiny_policy_config('baseline'), seed=5)
    state = policy.start_episode(room_sample, small_room)
    original = policy.encode_inputs
    fed = []

    def spy(observation, q, y_prev):
        fed.append(np.array(y_prev, copy=True))
        return original(observation, q, y_prev)

    policy.encode_inputs = spy
    poses = replay_actions(small_room, room_sample.start, room_sample.expert)
    for t, action in enumerate(room_sample.expert):
        policy.decide(state, render_observation(small_room, poses[t]))
        policy.observe_action(state, action)

    assert np.array_equal(fed[0], np.zeros(4))
    for t in range(1, len(fed)):
        assert np.array_equal(fed[t], one_hot(room_sample.expert[t - 1], 4))


@pytest.mark.parametrize('model', ['pemr_b', 'pemr_a', 'baseline', 'baseline_fpe'])
def test_episode_backward_passes_grad_check(small_room, room_sample, tiny_policy_config, model):
    policy = NavigatorPolicy(tiny_policy_config(model), seed=7)
    rng = np.random.default_rng(7)
    weights = rng.normal(size=(len(room_sample.expert), 4))
    _, state = teacher_forced_sum(policy, small_room, room_sample, weights)
    grads = policy.backward(state, list(weights))
    error = grad_check(
        lambda: teacher_forced_sum(policy, small_room, room_sample, weights)[0],
        policy.params.values(), grads, max_coords=5,
    )
    assert error < 1e-4


def test_fragment_logit_gradients_pass_grad_check(small_room, room_sample, tiny_policy_config):
    policy = NavigatorPolicy(tiny_policy_config('pemr_b'), seed=8)
    rng = np.random.default_rng(8)
    T = len(room_sample.expert)
    weights = rng.normal(size=(T, 4))
    fragment_weights = rng.normal(size=(T, 3, 4))
    _, state = teacher_forced_sum(policy, small_room, room_sample, weights, fragment_weights)
    grads = policy.backward(state, list(weights), list(fragment_weights))
    error = grad_check(
        lambda: teacher_forced_sum(policy, small_room, room_sample, weights, fragment_weights)[0],
        policy.params.values(), grads, max_coords=5,
    )
    assert error < 1e-4


@pytest.mark.slow
@pytest.mark.parametrize('model', ['pemr_b', 'pemr_a', 'baseline', 'baseline_fpe'])
def test_backward_passes_randomized_grad_checks(small_room, tiny_policy_config, model):
    poses = all_poses(small_room)
    for trial in range(25):
        rng = np.random.default_rng(trial)
        start = poses[int(rng.integers(len(poses)))]
        sample = make_sample(small_room, start)
        policy = NavigatorPolicy(tiny_policy_config(model, int(rng.integers(1, 5))), seed=trial)
        weights = rng.normal(size=(len(sample.expert), 4))
        _, state = teacher_forced_sum(policy, small_room, sample, weights)
        grads = policy.backward(state, list(weights))
        error = grad_check(
            lambda: teacher_forced_sum(policy, small_room, sample, weights)[0],
            policy.params.values(), grads, max_coords=5, seed=trial,
        )
        assert error < 1e-4, (model, trial, start)


def test_truncation_at_fragment_length_changes_nothing(small_room, room_sample, tiny_policy_config):
    policy = NavigatorPolicy(tiny_policy_config('pemr_a'), seed=9)
    weights = np.random.default_rng(9).normal(size=(len(room_sample.expert), 4))
    _, state = teacher_forced_sum(policy, small_room, room_sample, weights)
    full = policy.backward(state, list(weights))
    truncated = policy.backward(state, list(weights), truncation=3)
    recent_only = policy.backward(state, list(weights), truncation=1)
    for name in full:
        assert np.allclose(full[name], truncated[name])
    assert not np.allclose(full['head.W'], recent_only['head.W'])


def test_backward_needs_recorded_graph(small_room, room_sample, tiny_policy_config):
    policy = NavigatorPolicy(tiny_policy_config(), seed=0)
    trace, state = rollout(policy, small_room, room_sample, max_steps=3)
    with pytest.raises(ShapeMismatchError):
        policy.backward(state, [np.zeros(4)] * len(trace.steps))


# ============================================================================
# Checkpoints
# ============================================================================

def test_checkpoint_round_trip(tmp_path, small_room, room_sample, tiny_policy_config):
    policy = NavigatorPolicy(tiny_policy_config('pemr_b'), seed=12)
    repo = CheckpointRepository(tmp_path)
    path = repo.save_epoch(policy, 3)
    assert path.name == 'epoch_003.json'
    assert repo.list_epochs() == [path]
    restored = repo.load(path)
    assert restored.config == policy.config
    for name in policy.params.names():
        assert np.array_equal(restored.params[name], policy.params[name])
    first, _ = rollout(policy, small_room, room_sample, max_steps=10)
    second, _ = rollout(restored, small_room, room_sample, max_steps=10)
    assert first.to_dict() == second.to_dict()


def test_checkpoint_architecture_mismatch(tmp_path, tiny_policy_config):
    path = CheckpointRepository().save(NavigatorPolicy(tiny_policy_config('pemr_b')), tmp_path / 'c.json')
    data = json.loads(path.read_text())
    data['policy']['model'] = 'pemr_a'
    path.write_text(json.dumps(data))
    with pytest.raises(DatasetFormatError):
        CheckpointRepository().load(path)


def test_missing_checkpoint(tmp_path):
    with pytest.raises(FileNotFoundError):
        CheckpointRepository().load(tmp_path / 'absent.json')
