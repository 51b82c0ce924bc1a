"""
House generation, samples, rectification, variants and dataset files
"""
from dataclasses import replace

import pytest

from conftest import grid_from_rows, make_sample
from navigator.dataset import (
    augment_variant, backtrack_start, check_sample, combine_variants, expert_fragment_labels,
    expert_poses, generate_dataset, generate_house, generate_samples, rectify_dataset,
    rectify_sample, replay_expert, reverse_variant, split_by_house,
)
from navigator.exceptions import DatasetFormatError, HouseGenerationError
from navigator.gridworld import is_connected, is_well_framed
from navigator.models import (
    Action, AgentPose, Dataset, GenParams, GridMap, Heading, MapObject, Room, Split, Variant,
)
from navigator.repositories import DatasetRepository


def target_cell(dataset, sample):
    return dataset.map_for(sample).object_by_id(sample.question.target_object_id).cell


# ============================================================================
# Houses
# ============================================================================

def test_house_is_deterministic(small_params):
    assert generate_house(small_params, 11) == generate_house(small_params, 11)


def test_house_is_connected_with_objects(small_params):
    for seed in range(5):
        grid = generate_house(small_params, seed)
        assert is_connected(grid)
        assert 2 <= len(grid.rooms) <= 3
        assert len({room.room_type for room in grid.rooms}) == len(grid.rooms)
        for obj in grid.objects:
            assert grid.is_accessible(obj.x, obj.y)


def test_house_json_round_trip(small_params):
    grid = generate_house(small_params, 3)
    assert GridMap.from_dict(grid.to_dict()) == grid


def test_tiny_map_rejected():
    with pytest.raises(HouseGenerationError):
        generate_house(GenParams(width=5, height=5), 0)


def test_vocabulary_needs_two_entries():
    with pytest.raises(ValueError):
        GenParams(num_colors=1)


# ============================================================================
# Samples
# ============================================================================

def test_generated_samples_are_valid(generated):
    assert len(generated) > 0
    for sample in generated.samples:
        assert check_sample(sample, generated.map_for(sample))


def test_generation_is_deterministic(small_params):
    first, _ = generate_dataset(small_params, n_houses=2, seed=3)
    second, _ = generate_dataset(small_params, n_houses=2, seed=3)
    assert [s.to_dict() for s in first.samples] == [s.to_dict() for s in second.samples]


def test_generate_samples_reports_drops(small_params):
    grid = generate_house(small_params, 1)
    samples, dropped = generate_samples(grid, 6, seed=2)
    assert len(samples) + dropped == 6


def test_replay_expert_reaches_terminal(generated):
    for sample in generated.samples:
        grid = generated.map_for(sample)
        assert replay_expert(grid, sample.start, sample.expert)[-1] == sample.terminal_pose
        assert len(expert_poses(sample, grid)) == len(sample.expert)


def test_expert_fragment_labels_are_padded_suffixes(generated):
    sample = max(generated.samples, key=lambda s: len(s.expert))
    labels = expert_fragment_labels(sample, 4)
    assert len(labels) == len(sample.expert)
    assert labels[0] == (sample.expert + [Action.STOP] * 4)[:4]
    assert labels[-1] == [Action.STOP] * 4


# ============================================================================
# Rectification
# ============================================================================

def test_rectified_endings_are_well_framed(generated):
    rectified, counts = rectify_dataset(generated)
    assert counts.kept + counts.reset + counts.dropped == len(generated)
    assert len(rectified) == counts.kept + counts.reset
    assert rectified.variant == Variant.RECTIFIED
    for sample in rectified.samples:
        grid = rectified.map_for(sample)
        assert is_well_framed(grid, sample.terminal_pose, target_cell(rectified, sample))
        assert check_sample(sample, grid)


def test_rectify_keeps_well_framed_sample(small_room):
    sample = make_sample(small_room, AgentPose(1, 2, Heading.E))
    assert sample.terminal_pose == AgentPose(3, 2, Heading.E)
    assert rectify_sample(sample, small_room) is sample


def test_rectification_adds_at_most_three_actions(generated):
    for sample in generated.samples:
        grid = generated.map_for(sample)
        result = rectify_sample(sample, grid)
        if result is None or result is sample:
            continue
        kept = [a for a in result.expert[:-1] if a == Action.FORWARD]
        assert len(result.expert) <= len(sample.expert) + 3
        assert len(kept) <= sum(1 for a in sample.expert if a == Action.FORWARD)


def test_rectify_drops_sample_without_framed_pose(small_room, room_sample):
    # the expert ends at (3, 3) facing east with the bowl two columns to the left
    assert room_sample.terminal_pose == AgentPose(3, 3, Heading.E)
    assert not is_well_framed(small_room, room_sample.terminal_pose, (5, 1))
    assert rectify_sample(room_sample, small_room) is None


def test_rectify_turns_around_when_target_is_behind():
    corridor = grid_from_rows(
        ["#######", "#00000#", "#######"],
        rooms=[Room(0, 'kitchen')],
        objects=[MapObject(0, 'bowl', 'red', 5, 1)],
    )
    facing_away = AgentPose(3, 1, Heading.W)
    sample = replace(make_sample(corridor, facing_away), expert=[Action.STOP], terminal_pose=facing_away)
    assert not is_well_framed(corridor, facing_away, (5, 1))

    result = rectify_sample(sample, corridor)

    assert result.expert == [Action.TURN_LEFT, Action.TURN_LEFT, Action.STOP]
    assert result.terminal_pose == AgentPose(3, 1, Heading.E)
    assert check_sample(result, corridor)


@pytest.mark.slow
def test_rectification_over_a_thousand_samples():
    params = GenParams(width=11, height=11, min_rooms=2, max_rooms=3, samples_per_house=20)
    dataset, _ = generate_dataset(params, n_houses=80, seed=21)
    assert len(dataset) >= 1000
    dataset = replace(dataset, samples=dataset.samples[:1000])

    rectified, counts = rectify_dataset(dataset)

    assert counts.kept + counts.reset + counts.dropped == 1000
    originals = {s.sample_id: s for s in dataset.samples}
    for sample in rectified.samples:
        grid = rectified.map_for(sample)
        assert is_well_framed(grid, sample.terminal_pose, target_cell(rectified, sample))
        assert check_sample(sample, grid)
        assert len(sample.expert) <= len(originals[sample.sample_id].expert) + 3


# ============================================================================
# Backtracking and variants
# ============================================================================

def test_backtrack_start_keeps_terminal(rectified):
    for sample in rectified.samples:
        grid = rectified.map_for(sample)
        for k in (1, 10, 30):
            moved = backtrack_start(sample, k, grid)
            assert len(moved.expert) <= k + 1
            assert replay_expert(grid, moved.start, moved.expert)[-1] == sample.terminal_pose


def test_backtrack_rejects_non_positive_k(room_sample, small_room):
    with pytest.raises(ValueError):
        backtrack_start(room_sample, 0, small_room)


def test_reverse_variant_flips_heading(rectified):
    reversed_set, dropped = reverse_variant(rectified)
    assert len(reversed_set) + dropped == len(rectified)
    assert reversed_set.variant == Variant.REVERSED
    originals = {s.sample_id: s for s in rectified.samples}
    for sample in reversed_set.samples:
        original = originals[sample.sample_id]
        assert sample.start.cell == original.start.cell
        assert sample.start.heading == original.start.heading.turned(2)
        assert check_sample(sample, reversed_set.map_for(sample))


def test_reverse_of_empty_dataset_is_empty():
    result, dropped = reverse_variant(Dataset())
    assert len(result) == 0 and dropped == 0


def test_combine_variants_pools_samples(rectified):
    reversed_set, _ = reverse_variant(rectified)
    combined = combine_variants(rectified, reversed_set)
    assert len(combined) == len(rectified) + len(reversed_set)
    assert combined.variant == Variant.COMBINED
    ids = [s.sample_id for s in combined.samples]
    assert len(set(ids)) == len(ids)


def test_augment_variant_adds_new_houses(rectified, small_params):
    augmented = augment_variant(rectified, small_params, n_houses=1, seed=99)
    assert augmented.variant == Variant.AUGMENTED
    assert len(augmented.maps) == len(rectified.maps) + 1
    assert len(augmented) >= len(rectified)


def test_split_by_house_is_disjoint(small_params):
    dataset, _ = generate_dataset(small_params, n_houses=5, seed=1)
    train, test = split_by_house(dataset, test_fraction=0.4, seed=0)
    assert train.split == Split.TRAIN and test.split == Split.TEST
    assert not set(train.maps) & set(test.maps)
    assert set(train.maps) | set(test.maps) == set(dataset.maps)
    assert len(train) + len(test) == len(dataset)


# ============================================================================
# Dataset files
# ============================================================================

def test_dataset_file_round_trip(tmp_path, rectified):
    repo = DatasetRepository()
    path = repo.save(rectified, tmp_path / 'v1mm.jsonl')
    loaded = repo.load(path)
    assert [s.to_dict() for s in loaded.samples] == [s.to_dict() for s in rectified.samples]
    assert loaded.maps == rectified.maps
    assert loaded.variant == rectified.variant


def test_truncated_file_reports_line(tmp_path, rectified):
    repo = DatasetRepository()
    path = repo.save(rectified, tmp_path / 'd.jsonl')
    lines = path.read_text().splitlines()
    lines[-1] = lines[-1][: len(lines[-1]) // 2]
    path.write_text('\n'.join(lines) + '\n')
    with pytest.raises(DatasetFormatError) as info:
        repo.load(path)
    assert info.value.line_number == len(lines)
    assert f"line {len(lines)}" in str(info.value)


def test_empty_file_is_empty_dataset(tmp_path):
    path = tmp_path / 'empty.jsonl'
    path.write_text('')
    assert len(DatasetRepository().load(path)) == 0


def test_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        DatasetRepository().load(tmp_path / 'nope.jsonl')
