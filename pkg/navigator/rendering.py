"""
SVG route renders: room-colored grid, route polyline, start/end markers and the target
"""
from pathlib import Path
from typing import List, Tuple

from .exceptions import TraceMismatchError
from .gridworld import apply_action
from .models import EpisodeTrace, GridMap, Sample

CELL_SIZE = 16

WALL_COLOR = '#404040'
HALLWAY_COLOR = '#d9d9d9'
ROUTE_COLOR = '#ffffff'
START_COLOR = '#d62728'
END_COLOR = '#2ca02c'
TARGET_COLOR = '#ffbf00'

ROOM_COLORS = {
    'kitchen': '#8fb9d9',
    'living_room': '#a6d79b',
    'bedroom': '#d8b1e0',
    'bathroom': '#9fd9d3',
    'dining_room': '#f2c594',
    'office': '#e6e39a',
}


def _center(cell: Tuple[int, int]) -> Tuple[float, float]:
    return (cell[0] + 0.5) * CELL_SIZE, (cell[1] + 0.5) * CELL_SIZE


def check_trace(grid: GridMap, trace: EpisodeTrace):
    """Every recorded step must replay on this map"""
    pose = trace.start
    for step in trace.steps:
        if step.pose != pose:
            raise TraceMismatchError(f"Step {step.t} starts at {step.pose}, replay is at {pose}")
        try:
            outcome = apply_action(grid, pose, step.action)
        except ValueError as e:
            raise TraceMismatchError(f"Step {step.t} does not replay: {e}") from e
        if outcome.pose != step.next_pose:
            raise TraceMismatchError(f"Step {step.t} ends at {step.next_pose}, replay gives {outcome.pose}")
        pose = outcome.pose


def route_vertices(trace: EpisodeTrace) -> List[Tuple[int, int]]:
    """Start cell plus the cell after every step"""
    return [trace.start.cell] + [step.next_pose.cell for step in trace.steps]


def render_route(grid: GridMap, sample: Sample, trace: EpisodeTrace) -> str:
    check_trace(grid, trace)
    width, height = grid.width * CELL_SIZE, grid.height * CELL_SIZE
    lines = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
    ]
    for y in range(grid.height):
        for x in range(grid.width):
            if not grid.accessible[y, x]:
                fill = WALL_COLOR
            else:
                fill = ROOM_COLORS.get(grid.room_type_at(x, y), HALLWAY_COLOR)
            lines.append(
                f'<rect x="{x * CELL_SIZE}" y="{y * CELL_SIZE}" width="{CELL_SIZE}" '
                f'height="{CELL_SIZE}" fill="{fill}"/>'
            )

    target = grid.object_by_id(sample.question.target_object_id)
    lines.append(
        f'<rect class="target" x="{target.x * CELL_SIZE + 2}" y="{target.y * CELL_SIZE + 2}" '
        f'width="{CELL_SIZE - 4}" height="{CELL_SIZE - 4}" fill="none" '
        f'stroke="{TARGET_COLOR}" stroke-width="3"/>'
    )

    if trace.steps:
        points = ' '.join(f"{cx:.1f},{cy:.1f}" for cx, cy in map(_center, route_vertices(trace)))
        lines.append(
            f'<polyline class="route" points="{points}" fill="none" '
            f'stroke="{ROUTE_COLOR}" stroke-width="2"/>'
        )

    radius = CELL_SIZE / 4
    sx, sy = _center(trace.start.cell)
    lines.append(f'<circle class="start" cx="{sx:.1f}" cy="{sy:.1f}" r="{radius:.1f}" fill="{START_COLOR}"/>')
    if trace.steps:
        ex, ey = _center(trace.final_pose.cell)
        lines.append(f'<circle class="end" cx="{ex:.1f}" cy="{ey:.1f}" r="{radius:.1f}" fill="{END_COLOR}"/>')
    lines.append('</svg>')
    return '\n'.join(lines) + '\n'


def save_route(svg: str, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w') as f:
        f.write(svg)
    return path
