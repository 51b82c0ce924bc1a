"""
Deterministic gridworld: kinematics, egocentric rendering, visibility and BFS oracles
"""
import math
from collections import deque
from dataclasses import dataclass
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from . import config
from .exceptions import InvalidPoseError, NoPathError
from .models import (
    Action, AgentPose, FovParams, GridMap, Heading, Observation, PathMask,
    CHANNEL_ACCESSIBLE, CHANNEL_OCCLUDED, ROOM_CHANNEL_OFFSET,
    OBJECT_CHANNEL_OFFSET, COLOR_CHANNEL_OFFSET, NUM_CHANNELS,
)

HALF_WIDTH = config.PATCH_WIDTH // 2

# BFS expansion order; Stop is appended, never expanded
MOVE_ACTIONS = (Action.FORWARD, Action.TURN_LEFT, Action.TURN_RIGHT)


class StepOutcome(NamedTuple):
    pose: AgentPose
    collided: bool
    terminated: bool


def validate_pose(grid: GridMap, pose: AgentPose):
    if not grid.is_accessible(pose.x, pose.y):
        raise InvalidPoseError(f"Pose {pose} is not on an accessible cell")


def apply_action(grid: GridMap, pose: AgentPose, action: Action) -> StepOutcome:
    """Advance one step; a blocked Forward leaves the pose unchanged and reports a collision"""
    validate_pose(grid, pose)
    action = Action(action)
    if action == Action.FORWARD:
        dx, dy = pose.heading.vector
        nx, ny = pose.x + dx, pose.y + dy
        if grid.is_accessible(nx, ny):
            return StepOutcome(AgentPose(nx, ny, pose.heading), False, False)
        return StepOutcome(pose, True, False)
    if action == Action.TURN_LEFT:
        return StepOutcome(AgentPose(pose.x, pose.y, pose.heading.turned(-1)), False, False)
    if action == Action.TURN_RIGHT:
        return StepOutcome(AgentPose(pose.x, pose.y, pose.heading.turned(1)), False, False)
    return StepOutcome(pose, False, True)


def replay_actions(grid: GridMap, start: AgentPose, actions: Sequence[Action]) -> List[AgentPose]:
    """Poses visited: the start plus one pose after every action (Stop repeats the pose)"""
    poses = [start]
    pose = start
    for action in actions:
        pose = apply_action(grid, pose, action).pose
        poses.append(pose)
    return poses


def ego_to_world(pose: AgentPose, forward: int, lateral: int) -> Tuple[int, int]:
    """Map (forward offset, lateral offset to the right) to world coordinates"""
    fx, fy = pose.heading.vector
    rx, ry = pose.heading.turned(1).vector
    return (pose.x + forward * fx + lateral * rx, pose.y + forward * fy + lateral * ry)


def world_to_ego(pose: AgentPose, cell: Tuple[int, int]) -> Tuple[int, int]:
    """Inverse of ego_to_world"""
    dx, dy = cell[0] - pose.x, cell[1] - pose.y
    fx, fy = pose.heading.vector
    rx, ry = pose.heading.turned(1).vector
    return (dx * fx + dy * fy, dx * rx + dy * ry)


def _column_blocker(grid: GridMap, pose: AgentPose, lateral: int, depth: int) -> Optional[int]:
    """Forward offset of the nearest in-map blocked cell in one patch column"""
    for forward in range(depth):
        x, y = ego_to_world(pose, forward, lateral)
        if grid.in_bounds(x, y) and not grid.accessible[y, x]:
            return forward
    return None


def _is_occluded(grid: GridMap, pose: AgentPose, forward: int, lateral: int,
                 blocker: Optional[int]) -> bool:
    x, y = ego_to_world(pose, forward, lateral)
    if not grid.in_bounds(x, y):
        return True
    return blocker is not None and forward > blocker


def render_observation(grid: GridMap, pose: AgentPose, fov: FovParams = FovParams()) -> Observation:
    """Egocentric depth x 5 patch with column-shadow occlusion"""
    validate_pose(grid, pose)
    patch = np.zeros((fov.depth, config.PATCH_WIDTH, NUM_CHANNELS), dtype=float)
    objects = {obj.cell: obj for obj in grid.objects}
    room_types = {room.room_id: room.room_type for room in grid.rooms}

    for lateral in range(-HALF_WIDTH, HALF_WIDTH + 1):
        blocker = _column_blocker(grid, pose, lateral, fov.depth)
        col = lateral + HALF_WIDTH
        for forward in range(fov.depth):
            if _is_occluded(grid, pose, forward, lateral, blocker):
                patch[forward, col, CHANNEL_OCCLUDED] = 1.0
                continue
            x, y = ego_to_world(pose, forward, lateral)
            if not grid.accessible[y, x]:
                continue
            patch[forward, col, CHANNEL_ACCESSIBLE] = 1.0
            room_type = room_types.get(int(grid.room_ids[y, x]))
            if room_type is not None:
                patch[forward, col, ROOM_CHANNEL_OFFSET + config.ROOM_TYPES.index(room_type)] = 1.0
            obj = objects.get((x, y))
            if obj is not None:
                patch[forward, col, OBJECT_CHANNEL_OFFSET + config.OBJECT_CLASSES.index(obj.object_class)] = 1.0
                patch[forward, col, COLOR_CHANNEL_OFFSET + config.OBJECT_COLORS.index(obj.color)] = 1.0
    return Observation(patch=patch, pose=pose)


def is_visible(grid: GridMap, pose: AgentPose, cell: Tuple[int, int],
               fov: FovParams = FovParams()) -> bool:
    """True iff the cell is inside the patch and not occluded"""
    if not grid.in_bounds(*cell):
        raise ValueError(f"Cell {cell} is outside the map")
    forward, lateral = world_to_ego(pose, cell)
    if not (0 <= forward < fov.depth and abs(lateral) <= HALF_WIDTH):
        return False
    blocker = _column_blocker(grid, pose, lateral, fov.depth)
    return not _is_occluded(grid, pose, forward, lateral, blocker)


def is_well_framed(grid: GridMap, pose: AgentPose, cell: Tuple[int, int],
                   fov: FovParams = FovParams(),
                   max_offset: int = config.RECTIFY_MAX_OFFSET,
                   max_lateral: int = config.RECTIFY_MAX_LATERAL) -> bool:
    """Visible and inside the narrow band straight ahead of the agent"""
    forward, lateral = world_to_ego(pose, cell)
    return forward <= max_offset and abs(lateral) <= max_lateral and is_visible(grid, pose, cell, fov)


def euclid_dist(pose, cell: Tuple[int, int]) -> float:
    """Euclidean distance in cells; pose may be an AgentPose or an (x, y) pair"""
    x, y = (pose.x, pose.y) if isinstance(pose, AgentPose) else pose
    return math.hypot(x - cell[0], y - cell[1])


@dataclass(frozen=True)
class TerminalSpec:
    """Predicate over poses: target visible and within max_distance cells"""
    target: Tuple[int, int]
    fov: FovParams = FovParams()
    max_distance: float = config.TERMINAL_DISTANCE

    def is_terminal(self, grid: GridMap, pose: AgentPose) -> bool:
        return (euclid_dist(pose, self.target) <= self.max_distance
                and is_visible(grid, pose, self.target, self.fov))

    def __call__(self, grid: GridMap, pose: AgentPose) -> bool:
        return self.is_terminal(grid, pose)


def shortest_action_path(grid: GridMap, start: AgentPose, terminal: TerminalSpec) -> List[Action]:
    """Minimum-length action list to a terminal pose, Stop appended

    BFS over (x, y, heading) expanding Forward < TurnLeft < TurnRight, so among
    shortest paths the lexicographically smallest one is returned.
    """
    validate_pose(grid, start)
    parents: Dict[AgentPose, Tuple[Optional[AgentPose], Optional[Action]]] = {start: (None, None)}
    queue = deque([start])
    while queue:
        pose = queue.popleft()
        if terminal(grid, pose):
            return _unwind(parents, pose) + [Action.STOP]
        for action in MOVE_ACTIONS:
            outcome = apply_action(grid, pose, action)
            if outcome.collided or outcome.pose in parents:
                continue
            parents[outcome.pose] = (pose, action)
            queue.append(outcome.pose)
    raise NoPathError(f"No terminal pose reachable from {start} for target {terminal.target}")


def _unwind(parents, pose: AgentPose) -> List[Action]:
    actions = []
    while True:
        parent, action = parents[pose]
        if parent is None:
            break
        actions.append(action)
        pose = parent
    actions.reverse()
    return actions


def pad_fragment(actions: Sequence[Action], k: int) -> List[Action]:
    """First k actions, padded with Stop"""
    labels = list(actions[:k])
    return labels + [Action.STOP] * (k - len(labels))


def fragment_label(grid: GridMap, pose: AgentPose, terminal: TerminalSpec, k: int) -> List[Action]:
    """First k actions of the shortest path from pose"""
    return pad_fragment(shortest_action_path(grid, pose, terminal), k)


def trace_path_mask(grid: GridMap, pose: AgentPose, actions: Sequence[Action],
                    fov: FovParams = FovParams()) -> PathMask:
    """Mark patch cells entered while executing actions, restricted to visible accessible cells"""
    observation = render_observation(grid, pose, fov)
    visible_floor = observation.accessible & ~observation.occluded
    mask = np.zeros((fov.depth, config.PATCH_WIDTH), dtype=float)
    current = pose
    for action in actions:
        outcome = apply_action(grid, current, action)
        if outcome.terminated:
            break
        if outcome.pose.cell != current.cell:
            forward, lateral = world_to_ego(pose, outcome.pose.cell)
            if 0 <= forward < fov.depth and abs(lateral) <= HALF_WIDTH:
                mask[forward, lateral + HALF_WIDTH] = 1.0
        current = outcome.pose
    return PathMask(mask=mask * visible_floor)


def path_mask_label(grid: GridMap, pose: AgentPose, terminal: TerminalSpec, k: int,
                    fov: FovParams = FovParams()) -> PathMask:
    """Path mask of the first k label actions ("and" with the visible floor)"""
    return trace_path_mask(grid, pose, fragment_label(grid, pose, terminal, k), fov)


def flood_fill(grid: GridMap, start: Tuple[int, int]) -> set:
    """Accessible cells 4-connected to start"""
    seen = {start}
    queue = deque([start])
    while queue:
        x, y = queue.popleft()
        for dx, dy in ((0, -1), (1, 0), (0, 1), (-1, 0)):
            nxt = (x + dx, y + dy)
            if nxt not in seen and grid.is_accessible(*nxt):
                seen.add(nxt)
                queue.append(nxt)
    return seen


def is_connected(grid: GridMap) -> bool:
    cells = grid.accessible_cells()
    return bool(cells) and len(flood_fill(grid, cells[0])) == len(cells)


def all_poses(grid: GridMap) -> List[AgentPose]:
    """Every valid pose, row-major then heading order"""
    return [AgentPose(x, y, h) for (x, y) in grid.accessible_cells() for h in Heading]
