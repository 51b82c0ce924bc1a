"""
Procedural houses and samples, rectification, backtracking and dataset variants
"""
import logging
from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Tuple

import numpy as np
from sklearn.model_selection import train_test_split

from . import config
from .exceptions import HouseGenerationError, NoPathError
from .gridworld import (
    TerminalSpec, is_connected, is_well_framed, pad_fragment,
    replay_actions, shortest_action_path,
)
from .models import (
    Action, AgentPose, Dataset, FovParams, GenParams, GridMap, Heading, MapObject,
    QuestionSpec, QuestionType, Room, Sample, Split, Variant,
)
from .utils import spawn_seeds

logger = logging.getLogger(__name__)

QUESTION_TEMPLATES = {
    QuestionType.ROOM_OF: "which room is the {object} located in?",
    QuestionType.COLOR_OF: "what color is the {object}?",
}


@dataclass(frozen=True)
class _Rect:
    """Inclusive cell rectangle"""
    x0: int
    y0: int
    x1: int
    y1: int

    @property
    def width(self) -> int:
        return self.x1 - self.x0 + 1

    @property
    def height(self) -> int:
        return self.y1 - self.y0 + 1


@dataclass
class RectifyCounts:
    kept: int = 0
    reset: int = 0
    dropped: int = 0

    def to_dict(self) -> dict:
        return {'kept': self.kept, 'reset': self.reset, 'dropped': self.dropped}


# ============================================================================
# Houses
# ============================================================================

def _can_split(rect: _Rect, min_size: int) -> bool:
    return max(rect.width, rect.height) >= 2 * min_size + 1


def _split(rect: _Rect, min_size: int, rng: np.random.Generator) -> Tuple[_Rect, _Rect]:
    """Split along the longer side with a one-cell wall between the halves"""
    vertical_ok = rect.width >= 2 * min_size + 1
    horizontal_ok = rect.height >= 2 * min_size + 1
    if vertical_ok and horizontal_ok:
        if rect.width == rect.height:
            vertical = bool(rng.integers(2))
        else:
            vertical = rect.width > rect.height
    else:
        vertical = vertical_ok

    if vertical:
        wall = int(rng.integers(rect.x0 + min_size, rect.x1 - min_size + 1))
        return _Rect(rect.x0, rect.y0, wall - 1, rect.y1), _Rect(wall + 1, rect.y0, rect.x1, rect.y1)
    wall = int(rng.integers(rect.y0 + min_size, rect.y1 - min_size + 1))
    return _Rect(rect.x0, rect.y0, rect.x1, wall - 1), _Rect(rect.x0, wall + 1, rect.x1, rect.y1)


def generate_house(params: GenParams, seed: int) -> GridMap:
    """Binary-split house: walled rooms, one door per shared wall, room-consistent objects"""
    if params.width < config.MIN_MAP_SIZE or params.height < config.MIN_MAP_SIZE:
        raise HouseGenerationError(
            f"Map must be at least {config.MIN_MAP_SIZE}x{config.MIN_MAP_SIZE}"
        )
    if not 1 <= params.min_rooms <= params.max_rooms:
        raise HouseGenerationError(
            f"Invalid room range ({params.min_rooms}, {params.max_rooms})"
        )

    rng = np.random.default_rng(seed)
    min_size = config.MIN_ROOM_SIZE
    target_rooms = int(rng.integers(params.min_rooms, params.max_rooms + 1))

    leaves = [_Rect(1, 1, params.width - 2, params.height - 2)]
    while len(leaves) < target_rooms:
        candidates = [i for i, rect in enumerate(leaves) if _can_split(rect, min_size)]
        if not candidates:
            break
        # largest area first; the index keeps ties deterministic
        index = max(candidates, key=lambda i: (leaves[i].width * leaves[i].height, -i))
        first, second = _split(leaves.pop(index), min_size, rng)
        leaves[index:index] = [first, second]

    if len(leaves) < params.min_rooms:
        raise HouseGenerationError(
            f"Only {len(leaves)} rooms fit in {params.width}x{params.height}, "
            f"need at least {params.min_rooms}"
        )

    accessible = np.zeros((params.height, params.width), dtype=bool)
    room_ids = np.full((params.height, params.width), -1, dtype=int)
    for room_id, rect in enumerate(leaves):
        accessible[rect.y0:rect.y1 + 1, rect.x0:rect.x1 + 1] = True
        room_ids[rect.y0:rect.y1 + 1, rect.x0:rect.x1 + 1] = room_id

    _place_doors(accessible, room_ids, rng)

    if len(leaves) <= len(config.ROOM_TYPES):
        type_indices = rng.permutation(len(config.ROOM_TYPES))[:len(leaves)]
    else:
        type_indices = rng.integers(0, len(config.ROOM_TYPES), size=len(leaves))
    rooms = [Room(i, config.ROOM_TYPES[int(t)]) for i, t in enumerate(type_indices)]

    grid = GridMap(params.width, params.height, accessible, room_ids, rooms, [])
    grid.objects = _place_objects(grid, params, rng)

    if not is_connected(grid):
        raise HouseGenerationError(f"Generated house for seed {seed} is not connected")
    logger.debug("House seed=%d: %d rooms, %d objects", seed, len(rooms), len(grid.objects))
    return grid


def _place_doors(accessible: np.ndarray, room_ids: np.ndarray, rng: np.random.Generator):
    """Open one wall cell for every pair of rooms that share a wall segment"""
    height, width = accessible.shape
    candidates: Dict[Tuple[int, int], List[Tuple[int, int]]] = {}
    for y in range(1, height - 1):
        for x in range(1, width - 1):
            if accessible[y, x]:
                continue
            for (ax, ay), (bx, by) in (((x - 1, y), (x + 1, y)), ((x, y - 1), (x, y + 1))):
                if accessible[ay, ax] and accessible[by, bx]:
                    a, b = int(room_ids[ay, ax]), int(room_ids[by, bx])
                    if a != b:
                        candidates.setdefault((min(a, b), max(a, b)), []).append((x, y))
    for pair in sorted(candidates):
        cells = candidates[pair]
        x, y = cells[int(rng.integers(len(cells)))]
        accessible[y, x] = True
        room_ids[y, x] = pair[0]


def _place_objects(grid: GridMap, params: GenParams, rng: np.random.Generator) -> List[MapObject]:
    classes = config.OBJECT_CLASSES[:params.num_object_classes]
    colors = config.OBJECT_COLORS[:params.num_colors]
    objects: List[MapObject] = []
    used = set()
    for room in grid.rooms:
        allowed = [c for c in config.ROOM_OBJECT_CLASSES.get(room.room_type, []) if c in classes]
        allowed = allowed or list(classes)
        cells = [
            cell for cell in grid.accessible_cells()
            if grid.room_ids[cell[1], cell[0]] == room.room_id and cell not in used
        ]
        for _ in range(min(params.objects_per_room, len(cells))):
            x, y = cells.pop(int(rng.integers(len(cells))))
            used.add((x, y))
            objects.append(MapObject(
                object_id=len(objects),
                object_class=allowed[int(rng.integers(len(allowed)))],
                color=colors[int(rng.integers(len(colors)))],
                x=x,
                y=y,
            ))
    return objects


# ============================================================================
# Samples
# ============================================================================

def answer_for(grid: GridMap, question: QuestionSpec) -> str:
    """Ground-truth answer derived from the map"""
    target = grid.object_by_id(question.target_object_id)
    if question.qtype == QuestionType.ROOM_OF:
        return grid.room_type_at(target.x, target.y)
    return target.color


def terminal_for(grid: GridMap, question: QuestionSpec, fov: FovParams = FovParams(),
                 max_distance: float = config.TERMINAL_DISTANCE) -> TerminalSpec:
    target = grid.object_by_id(question.target_object_id)
    return TerminalSpec(target=target.cell, fov=fov, max_distance=max_distance)


def generate_samples(grid: GridMap, n: int, seed: int, map_ref: str = 'house_0',
                     fov: FovParams = FovParams(),
                     max_distance: float = config.TERMINAL_DISTANCE) -> Tuple[List[Sample], int]:
    """Random questions and starts with BFS experts; returns (samples, dropped)"""
    if not grid.objects:
        raise ValueError("Map has no objects to ask about")
    rng = np.random.default_rng(seed)
    cells = grid.accessible_cells()
    qtypes = list(QuestionType)
    samples: List[Sample] = []
    dropped = 0
    for index in range(n):
        target = grid.objects[int(rng.integers(len(grid.objects)))]
        qtype = qtypes[int(rng.integers(len(qtypes)))]
        x, y = cells[int(rng.integers(len(cells)))]
        start = AgentPose(x, y, Heading(int(rng.integers(4))))
        question = QuestionSpec(
            qtype=qtype,
            target_object_id=target.object_id,
            text=QUESTION_TEMPLATES[qtype].format(object=target.object_class),
        )
        try:
            expert = shortest_action_path(grid, start, terminal_for(grid, question, fov, max_distance))
        except NoPathError:
            dropped += 1
            continue
        samples.append(Sample(
            sample_id=f"{map_ref}/{index:04d}",
            map_ref=map_ref,
            question=question,
            answer=answer_for(grid, question),
            start=start,
            expert=expert,
            terminal_pose=replay_actions(grid, start, expert)[-1],
        ))
    if dropped:
        logger.info("%s: dropped %d of %d samples without a path", map_ref, dropped, n)
    return samples, dropped


def generate_dataset(params: GenParams, n_houses: int, seed: int,
                     fov: FovParams = FovParams(), first_index: int = 0) -> Tuple[Dataset, int]:
    """Houses with independent seed streams, merged in house-seed order"""
    house_seeds = spawn_seeds(seed, n_houses)
    dataset = Dataset(variant=Variant.V1)
    dropped = 0
    for index, house_seed in sorted(enumerate(house_seeds), key=lambda item: item[1]):
        map_ref = f"house_{first_index + index:04d}"
        grid = generate_house(params, house_seed)
        samples, lost = generate_samples(grid, params.samples_per_house, house_seed, map_ref, fov)
        dataset.maps[map_ref] = grid
        dataset.samples.extend(samples)
        dropped += lost
    logger.info("Generated %d houses, %d samples (%d dropped)", n_houses, len(dataset), dropped)
    return dataset, dropped


def split_by_house(dataset: Dataset, test_fraction: float = config.TEST_FRACTION,
                   seed: int = 0) -> Tuple[Dataset, Dataset]:
    """House-level split so that test houses are unseen during training"""
    refs = sorted(dataset.maps)
    if len(refs) < 2:
        raise ValueError("Need at least two houses to split")
    train_refs, test_refs = train_test_split(refs, test_size=test_fraction, random_state=seed)

    def subset(selected, split):
        selected = set(selected)
        return Dataset(
            samples=[s for s in dataset.samples if s.map_ref in selected],
            maps={ref: dataset.maps[ref] for ref in sorted(selected)},
            split=split,
            variant=dataset.variant,
        )

    return subset(train_refs, Split.TRAIN), subset(test_refs, Split.TEST)


# ============================================================================
# Rectification and variants
# ============================================================================

def _turns_between(current: Heading, desired: Heading) -> List[Action]:
    diff = (desired.value - current.value) % 4
    return {0: [], 1: [Action.TURN_RIGHT], 2: [Action.TURN_LEFT, Action.TURN_LEFT],
            3: [Action.TURN_LEFT]}[diff]


def rectify_sample(sample: Sample, grid: GridMap, fov: FovParams = FovParams(),
                   window: int = config.RECTIFY_WINDOW,
                   max_offset: int = config.RECTIFY_MAX_OFFSET,
                   max_lateral: int = config.RECTIFY_MAX_LATERAL) -> Optional[Sample]:
    """Reset the expert's ending pose so the target is in full view, or delete the sample

    Candidates are the last `window` trajectory poses, nearest to the end first, each
    tried with headings N, E, S, W.
    """
    target = grid.object_by_id(sample.question.target_object_id).cell
    if is_well_framed(grid, sample.terminal_pose, target, fov, max_offset, max_lateral):
        return sample

    moves = [a for a in sample.expert if a != Action.STOP]
    poses = replay_actions(grid, sample.start, moves)
    first = max(0, len(poses) - window)
    for index in range(len(poses) - 1, first - 1, -1):
        pose = poses[index]
        for heading in Heading:
            candidate = AgentPose(pose.x, pose.y, heading)
            if not is_well_framed(grid, candidate, target, fov, max_offset, max_lateral):
                continue
            expert = moves[:index] + _turns_between(pose.heading, heading) + [Action.STOP]
            return replace(sample, expert=expert, terminal_pose=candidate)
    return None


def rectify_dataset(dataset: Dataset, fov: FovParams = FovParams()) -> Tuple[Dataset, RectifyCounts]:
    """v1 -> v1--: keep well-framed samples, reset fixable ones, drop the rest"""
    counts = RectifyCounts()
    kept: List[Sample] = []
    for sample in dataset.samples:
        result = rectify_sample(sample, dataset.map_for(sample), fov)
        if result is None:
            counts.dropped += 1
            continue
        if result is sample:
            counts.kept += 1
        else:
            counts.reset += 1
        kept.append(result)
    logger.info("Rectified %d samples: %s", len(dataset), counts.to_dict())
    return replace(dataset, samples=kept, variant=Variant.RECTIFIED), counts


def backtrack_start(sample: Sample, k: int, grid: GridMap) -> Sample:
    """Start k expert actions before the terminal pose (clamped to the original start)"""
    if k < 1:
        raise ValueError(f"Backtrack steps must be >= 1, got {k}")
    index = max(0, len(sample.expert) - 1 - k)
    poses = replay_actions(grid, sample.start, sample.expert[:index])
    return replace(sample, start=poses[-1], expert=list(sample.expert[index:]))


def reverse_variant(dataset: Dataset, fov: FovParams = FovParams(),
                    max_distance: float = config.TERMINAL_DISTANCE) -> Tuple[Dataset, int]:
    """Start every episode facing the opposite way and re-solve the expert"""
    samples: List[Sample] = []
    dropped = 0
    for sample in dataset.samples:
        grid = dataset.map_for(sample)
        start = AgentPose(sample.start.x, sample.start.y, sample.start.heading.turned(2))
        try:
            expert = shortest_action_path(grid, start, terminal_for(grid, sample.question, fov, max_distance))
        except NoPathError:
            dropped += 1
            continue
        samples.append(replace(
            sample,
            start=start,
            expert=expert,
            terminal_pose=replay_actions(grid, start, expert)[-1],
        ))
    if dropped:
        logger.info("Reverse variant dropped %d samples", dropped)
    return replace(dataset, samples=samples, variant=Variant.REVERSED), dropped


def combine_variants(first: Dataset, second: Dataset) -> Dataset:
    """Pool two variants of the same split (v1-- together with v1--R)"""
    maps = dict(first.maps)
    maps.update(second.maps)
    tagged = [replace(s, sample_id=f"{s.sample_id}~R") for s in second.samples]
    return Dataset(samples=list(first.samples) + tagged, maps=maps,
                   split=first.split, variant=Variant.COMBINED)


def augment_variant(dataset: Dataset, params: GenParams, n_houses: int, seed: int,
                    fov: FovParams = FovParams()) -> Dataset:
    """v1+: append freshly generated, rectified samples on new houses"""
    extra, _ = generate_dataset(params, n_houses, seed, fov, first_index=len(dataset.maps))
    extra, _ = rectify_dataset(extra, fov)
    overlap = set(extra.maps) & set(dataset.maps)
    if overlap:
        raise ValueError(f"Augmented houses collide with existing map refs: {sorted(overlap)}")
    maps = dict(dataset.maps)
    maps.update(extra.maps)
    return Dataset(samples=list(dataset.samples) + extra.samples, maps=maps,
                   split=dataset.split, variant=Variant.AUGMENTED)


def expert_fragment_labels(sample: Sample, k: int) -> List[List[Action]]:
    """Per-step fragment labels taken from the expert suffix"""
    return [pad_fragment(sample.expert[t:], k) for t in range(len(sample.expert))]


def expert_poses(sample: Sample, grid: GridMap) -> List[AgentPose]:
    """Pose at which each expert action is taken"""
    return replay_expert(grid, sample.start, sample.expert)[:len(sample.expert)]


def check_sample(sample: Sample, grid: GridMap) -> bool:
    """Replay reaches terminal_pose, ends with Stop, answer matches the map"""
    if not sample.expert or sample.expert[-1] != Action.STOP:
        return False
    if replay_expert(grid, sample.start, sample.expert)[-1] != sample.terminal_pose:
        return False
    return answer_for(grid, sample.question) == sample.answer


def replay_expert(grid: GridMap, start: AgentPose, actions: List[Action]) -> List[AgentPose]:
    """Start pose plus the pose after every action"""
    return replay_actions(grid, start, actions)
