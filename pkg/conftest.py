"""
Shared fixtures: a hand-drawn room, small generated datasets and tiny policy configs
"""
from typing import List, Optional, Sequence

import numpy as np
import pytest

from navigator.dataset import answer_for, generate_dataset, rectify_dataset, terminal_for
from navigator.gridworld import replay_actions, shortest_action_path
from navigator.models import (
    AgentPose, GenParams, GridMap, Heading, MapObject, PolicyConfig, QuestionSpec,
    QuestionType, Room, Sample,
)


def grid_from_rows(rows: Sequence[str], rooms: Optional[List[Room]] = None,
                   objects: Optional[List[MapObject]] = None) -> GridMap:
    """'#' is wall; a digit is a floor cell of that room id; '.' is floor without a room"""
    height, width = len(rows), len(rows[0])
    accessible = np.zeros((height, width), dtype=bool)
    room_ids = np.full((height, width), -1, dtype=int)
    for y, row in enumerate(rows):
        for x, char in enumerate(row):
            if char == '#':
                continue
            accessible[y, x] = True
            if char.isdigit():
                room_ids[y, x] = int(char)
    return GridMap(width, height, accessible, room_ids, rooms or [], objects or [])


@pytest.fixture
def small_room() -> GridMap:
    """5x3 kitchen inside walls with a red bowl in the north-east corner"""
    return grid_from_rows(
        [
            "#######",
            "#00000#",
            "#00000#",
            "#00000#",
            "#######",
        ],
        rooms=[Room(0, 'kitchen')],
        objects=[MapObject(0, 'bowl', 'red', 5, 1)],
    )


@pytest.fixture
def two_rooms() -> GridMap:
    """Kitchen and bedroom joined by a door at (4, 2); the lamp sits in the bedroom"""
    return grid_from_rows(
        [
            "#########",
            "#000#111#",
            "#0000111#",
            "#000#111#",
            "#########",
        ],
        rooms=[Room(0, 'kitchen'), Room(1, 'bedroom')],
        objects=[MapObject(0, 'bowl', 'red', 1, 1), MapObject(1, 'lamp', 'blue', 7, 3)],
    )


def make_sample(grid: GridMap, start: AgentPose, target_id: int = 0,
                qtype: QuestionType = QuestionType.ROOM_OF, sample_id: str = 'fixture/0000'):
    question = QuestionSpec(qtype=qtype, target_object_id=target_id, text='fixture question')
    expert = shortest_action_path(grid, start, terminal_for(grid, question))
    return Sample(
        sample_id=sample_id,
        map_ref='fixture',
        question=question,
        answer=answer_for(grid, question),
        start=start,
        expert=expert,
        terminal_pose=replay_actions(grid, start, expert)[-1],
    )


@pytest.fixture
def room_sample(small_room) -> Sample:
    return make_sample(small_room, AgentPose(1, 3, Heading.W))


@pytest.fixture(scope='session')
def small_params() -> GenParams:
    return GenParams(width=11, height=11, min_rooms=2, max_rooms=3, samples_per_house=5)


@pytest.fixture(scope='session')
def generated(small_params):
    dataset, _ = generate_dataset(small_params, n_houses=3, seed=7)
    return dataset


@pytest.fixture(scope='session')
def rectified(generated):
    dataset, _ = rectify_dataset(generated)
    return dataset


@pytest.fixture
def tiny_policy_config():
    def build(model: str = 'pemr_b', fragment_length: int = 3) -> PolicyConfig:
        return PolicyConfig(
            model=model, fragment_length=fragment_length, semantic_dim=6, path_dim=4,
            path_hidden_dim=5, question_dim=3, hidden_dim=4,
        )
    return build
