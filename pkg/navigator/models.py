"""
Data models for the navigation framework
"""
from dataclasses import dataclass, field, asdict, fields
from enum import Enum, IntEnum
from typing import Dict, List, Optional, Tuple

import numpy as np

from . import config


class Action(IntEnum):
    """Agent actions; the integer value is the fixed probability-vector index"""
    FORWARD = 0
    TURN_LEFT = 1
    TURN_RIGHT = 2
    STOP = 3


NUM_ACTIONS = len(Action)


class Heading(IntEnum):
    """Horizontal direction, clockwise from north"""
    N = 0
    E = 1
    S = 2
    W = 3

    @property
    def vector(self) -> Tuple[int, int]:
        """Unit step (dx, dy); y grows southwards"""
        return HEADING_VECTORS[self]

    def turned(self, quarter_turns: int) -> 'Heading':
        """Heading after rotating clockwise by the given number of quarter turns"""
        return Heading((self.value + quarter_turns) % 4)


HEADING_VECTORS = {
    Heading.N: (0, -1),
    Heading.E: (1, 0),
    Heading.S: (0, 1),
    Heading.W: (-1, 0),
}


class QuestionType(Enum):
    """Templated question families"""
    ROOM_OF = "RoomOf"
    COLOR_OF = "ColorOf"


class Split(Enum):
    TRAIN = "train"
    TEST = "test"


class Variant(Enum):
    """Dataset family tags"""
    V1 = "v1"
    RECTIFIED = "v1--"
    REVERSED = "v1--R"
    COMBINED = "v1--+R"
    AUGMENTED = "v1+"


@dataclass(frozen=True)
class AgentPose:
    """Cell coordinates plus heading"""
    x: int
    y: int
    heading: Heading

    @property
    def cell(self) -> Tuple[int, int]:
        return (self.x, self.y)

    def to_dict(self) -> dict:
        return {'x': self.x, 'y': self.y, 'heading': self.heading.name}

    @classmethod
    def from_dict(cls, data: dict) -> 'AgentPose':
        return cls(int(data['x']), int(data['y']), Heading[data['heading']])


@dataclass(frozen=True)
class Cell:
    """One map cell"""
    accessible: bool
    room_id: Optional[int] = None


@dataclass(frozen=True)
class Room:
    room_id: int
    room_type: str


@dataclass(frozen=True)
class MapObject:
    """An object resting on an accessible cell"""
    object_id: int
    object_class: str
    color: str
    x: int
    y: int

    @property
    def cell(self) -> Tuple[int, int]:
        return (self.x, self.y)


@dataclass
class GridMap:
    """House layout: accessibility and room ids per cell, rooms, objects"""
    width: int
    height: int
    accessible: np.ndarray
    room_ids: np.ndarray
    rooms: List[Room] = field(default_factory=list)
    objects: List[MapObject] = field(default_factory=list)

    def in_bounds(self, x: int, y: int) -> bool:
        return 0 <= x < self.width and 0 <= y < self.height

    def is_accessible(self, x: int, y: int) -> bool:
        return self.in_bounds(x, y) and bool(self.accessible[y, x])

    def cell(self, x: int, y: int) -> Cell:
        if not self.in_bounds(x, y):
            raise ValueError(f"Cell ({x}, {y}) is outside the {self.width}x{self.height} map")
        room = int(self.room_ids[y, x])
        return Cell(bool(self.accessible[y, x]), room if room >= 0 else None)

    def room_type(self, room_id: int) -> str:
        for room in self.rooms:
            if room.room_id == room_id:
                return room.room_type
        raise KeyError(f"Unknown room id: {room_id}")

    def room_type_at(self, x: int, y: int) -> Optional[str]:
        room = self.cell(x, y).room_id
        return self.room_type(room) if room is not None else None

    def object_by_id(self, object_id: int) -> MapObject:
        for obj in self.objects:
            if obj.object_id == object_id:
                return obj
        raise KeyError(f"Unknown object id: {object_id}")

    def accessible_cells(self) -> List[Tuple[int, int]]:
        """Accessible cells in row-major order"""
        ys, xs = np.nonzero(self.accessible)
        return [(int(x), int(y)) for y, x in zip(ys, xs)]

    def to_dict(self) -> dict:
        """Serialize to the documented JSON layout (row-major cells)"""
        cells = []
        for y in range(self.height):
            for x in range(self.width):
                room = int(self.room_ids[y, x])
                cells.append({
                    'acc': int(bool(self.accessible[y, x])),
                    'room': room if room >= 0 else None,
                })
        return {
            'width': self.width,
            'height': self.height,
            'cells': cells,
            'rooms': [{'id': r.room_id, 'type': r.room_type} for r in self.rooms],
            'objects': [
                {'id': o.object_id, 'class': o.object_class, 'color': o.color,
                 'x': o.x, 'y': o.y}
                for o in self.objects
            ],
        }

    @classmethod
    def from_dict(cls, data: dict) -> 'GridMap':
        width, height = int(data['width']), int(data['height'])
        if len(data['cells']) != width * height:
            raise ValueError(
                f"Expected {width * height} cells, got {len(data['cells'])}"
            )
        accessible = np.zeros((height, width), dtype=bool)
        room_ids = np.full((height, width), -1, dtype=int)
        for index, cell in enumerate(data['cells']):
            y, x = divmod(index, width)
            accessible[y, x] = bool(cell['acc'])
            if cell['room'] is not None:
                room_ids[y, x] = int(cell['room'])
        return cls(
            width=width,
            height=height,
            accessible=accessible,
            room_ids=room_ids,
            rooms=[Room(int(r['id']), r['type']) for r in data['rooms']],
            objects=[
                MapObject(int(o['id']), o['class'], o['color'], int(o['x']), int(o['y']))
                for o in data['objects']
            ],
        )

    def __eq__(self, other) -> bool:
        if not isinstance(other, GridMap):
            return NotImplemented
        return self.to_dict() == other.to_dict()


@dataclass(frozen=True)
class FovParams:
    """Egocentric field of view: patch depth and occlusion rule"""
    depth: int = config.FOV_DEPTH
    occlusion_rule: str = config.OCCLUSION_RULE

    def __post_init__(self):
        if self.depth < 1:
            raise ValueError(f"FOV depth must be >= 1, got {self.depth}")
        if self.occlusion_rule != config.OCCLUSION_RULE:
            raise ValueError(f"Unknown occlusion rule: {self.occlusion_rule}")

    @property
    def width(self) -> int:
        return config.PATCH_WIDTH


# Observation channel layout
CHANNEL_ACCESSIBLE = 0
CHANNEL_OCCLUDED = 1
ROOM_CHANNEL_OFFSET = 2
OBJECT_CHANNEL_OFFSET = ROOM_CHANNEL_OFFSET + len(config.ROOM_TYPES)
COLOR_CHANNEL_OFFSET = OBJECT_CHANNEL_OFFSET + len(config.OBJECT_CLASSES)
NUM_CHANNELS = COLOR_CHANNEL_OFFSET + len(config.OBJECT_COLORS)


@dataclass
class Observation:
    """Egocentric semantic patch, shape (depth, 5, NUM_CHANNELS)

    Index [f, l + 2] holds the cell f steps ahead and l steps to the right.
    """
    patch: np.ndarray
    pose: AgentPose

    @property
    def depth(self) -> int:
        return self.patch.shape[0]

    @property
    def occluded(self) -> np.ndarray:
        return self.patch[:, :, CHANNEL_OCCLUDED] > 0.5

    @property
    def accessible(self) -> np.ndarray:
        return self.patch[:, :, CHANNEL_ACCESSIBLE] > 0.5

    def flatten(self) -> np.ndarray:
        return self.patch.reshape(-1)


@dataclass
class PathMask:
    """Binary feasible-path mask aligned with an Observation patch"""
    mask: np.ndarray

    def cells(self) -> List[Tuple[int, int]]:
        """Marked (forward offset, lateral) pairs"""
        fs, cols = np.nonzero(self.mask)
        return [(int(f), int(c) - config.PATCH_WIDTH // 2) for f, c in zip(fs, cols)]


@dataclass(frozen=True)
class QuestionSpec:
    qtype: QuestionType
    target_object_id: int
    text: str = ""

    def to_dict(self) -> dict:
        return {
            'qtype': self.qtype.value,
            'target_object_id': self.target_object_id,
            'text': self.text,
        }

    @classmethod
    def from_dict(cls, data: dict) -> 'QuestionSpec':
        return cls(QuestionType(data['qtype']), int(data['target_object_id']),
                   data.get('text', ''))


@dataclass
class Sample:
    """One task instance"""
    sample_id: str
    map_ref: str
    question: QuestionSpec
    answer: str
    start: AgentPose
    expert: List[Action]
    terminal_pose: AgentPose

    def to_dict(self) -> dict:
        return {
            'sample_id': self.sample_id,
            'map_ref': self.map_ref,
            'question': self.question.to_dict(),
            'answer': self.answer,
            'start': self.start.to_dict(),
            'expert': [a.name for a in self.expert],
            'terminal_pose': self.terminal_pose.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> 'Sample':
        return cls(
            sample_id=str(data['sample_id']),
            map_ref=str(data['map_ref']),
            question=QuestionSpec.from_dict(data['question']),
            answer=str(data['answer']),
            start=AgentPose.from_dict(data['start']),
            expert=[Action[name] for name in data['expert']],
            terminal_pose=AgentPose.from_dict(data['terminal_pose']),
        )


@dataclass
class Dataset:
    """Samples plus the maps they reference"""
    samples: List[Sample] = field(default_factory=list)
    maps: Dict[str, GridMap] = field(default_factory=dict)
    split: Split = Split.TRAIN
    variant: Variant = Variant.V1

    def map_for(self, sample: Sample) -> GridMap:
        try:
            return self.maps[sample.map_ref]
        except KeyError:
            raise KeyError(f"Sample {sample.sample_id} references unknown map {sample.map_ref}")

    def __len__(self) -> int:
        return len(self.samples)


@dataclass
class GenParams:
    """House and sample generation parameters"""
    width: int = config.DEFAULT_MAP_SIZE
    height: int = config.DEFAULT_MAP_SIZE
    min_rooms: int = config.DEFAULT_ROOM_RANGE[0]
    max_rooms: int = config.DEFAULT_ROOM_RANGE[1]
    num_object_classes: int = len(config.OBJECT_CLASSES)
    num_colors: int = len(config.OBJECT_COLORS)
    objects_per_room: int = config.OBJECTS_PER_ROOM
    samples_per_house: int = config.SAMPLES_PER_HOUSE
    seed: int = 0

    def __post_init__(self):
        if self.num_object_classes < 2 or self.num_colors < 2:
            raise ValueError("Object class and color vocabularies need at least 2 entries")
        if self.num_object_classes > len(config.OBJECT_CLASSES):
            raise ValueError(f"At most {len(config.OBJECT_CLASSES)} object classes available")
        if self.num_colors > len(config.OBJECT_COLORS):
            raise ValueError(f"At most {len(config.OBJECT_COLORS)} colors available")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> 'GenParams':
        return cls(**_known_fields(cls, data))


@dataclass
class PolicyConfig:
    """Architecture switches and feature sizes"""
    model: str = 'pemr_b'
    fragment_length: int = config.FRAGMENT_LENGTH
    semantic_dim: int = config.SEMANTIC_DIM
    path_dim: int = config.PATH_DIM
    path_hidden_dim: int = config.PATH_HIDDEN_DIM
    question_dim: int = config.QUESTION_DIM
    hidden_dim: int = config.HIDDEN_DIM
    fov_depth: int = config.FOV_DEPTH

    def __post_init__(self):
        if self.model not in config.MODEL_VARIANTS:
            raise ValueError(f"Unknown model variant: {self.model}")
        if self.fragment_length < 1:
            raise ValueError("Fragment length must be >= 1")

    @property
    def uses_fragments(self) -> bool:
        return self.model.startswith('pemr')

    @property
    def uses_path_encoder(self) -> bool:
        return self.model != 'baseline'

    @property
    def strategy(self) -> Optional[str]:
        return {'pemr_a': 'A', 'pemr_b': 'B'}.get(self.model)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> 'PolicyConfig':
        return cls(**_known_fields(cls, data))


@dataclass
class RewardWeights:
    r1: float = config.REWARD_WEIGHTS[0]
    r2: float = config.REWARD_WEIGHTS[1]
    r3: float = config.REWARD_WEIGHTS[2]

    def __post_init__(self):
        if not all(np.isfinite([self.r1, self.r2, self.r3])):
            raise ValueError("Reward weights must be finite")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainConfig:
    """Hyperparameters shared by FPE pretraining, BC and RL"""
    epochs: int = config.BC_EPOCHS
    pretrain_epochs: int = config.PRETRAIN_EPOCHS
    rl_episodes: int = config.RL_EPISODES
    batch_size: int = config.BATCH_SIZE
    learning_rate: float = config.LEARNING_RATE
    momentum: float = config.MOMENTUM
    gamma: float = config.GAMMA
    bptt_truncation: Optional[int] = None
    fragment_weight: float = config.FRAGMENT_LOSS_WEIGHT
    use_return_baseline: bool = True
    baseline_window: int = config.RETURN_BASELINE_WINDOW
    max_steps: int = config.MAX_EPISODE_STEPS
    frozen_groups: List[str] = field(default_factory=list)
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError(f"gamma must lie in [0, 1], got {self.gamma}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        unknown = set(self.frozen_groups) - set(config.PARAM_GROUPS)
        if unknown:
            raise ValueError(f"Unknown parameter groups: {sorted(unknown)}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> 'TrainConfig':
        return cls(**_known_fields(cls, data))


@dataclass
class EvalConfig:
    backtrack_levels: Tuple[int, ...] = config.BACKTRACK_LEVELS
    last_window: int = config.LAST_WINDOW
    max_steps: int = config.MAX_EPISODE_STEPS
    seed: int = 0

    def __post_init__(self):
        self.backtrack_levels = tuple(int(level) for level in self.backtrack_levels)
        if self.last_window < 1:
            raise ValueError("last_window must be >= 1")

    def to_dict(self) -> dict:
        data = asdict(self)
        data['backtrack_levels'] = list(self.backtrack_levels)
        return data

    @classmethod
    def from_dict(cls, data: dict) -> 'EvalConfig':
        return cls(**_known_fields(cls, data))


@dataclass
class TraceStep:
    """One executed step of an episode

    pose is where the observation was taken; distance_before/after bracket the action.
    """
    t: int
    pose: AgentPose
    action: Action
    collided: bool
    next_pose: AgentPose
    distance_before: float
    distance_after: float
    in_target_room: bool
    target_visible: bool
    yhat: Optional[List[float]] = None
    fragment: Optional[List[List[float]]] = None
    terminal: bool = False
    answer_correct: Optional[bool] = None

    def to_dict(self) -> dict:
        return {
            't': self.t,
            'pose': self.pose.to_dict(),
            'action': self.action.name,
            'collided': self.collided,
            'next_pose': self.next_pose.to_dict(),
            'distance_before': self.distance_before,
            'distance_after': self.distance_after,
            'in_target_room': self.in_target_room,
            'target_visible': self.target_visible,
            'yhat': self.yhat,
            'fragment': self.fragment,
            'terminal': self.terminal,
            'answer_correct': self.answer_correct,
        }


@dataclass
class EpisodeTrace:
    """Everything the metrics, rewards and renderer need from one episode"""
    sample_id: str
    start: AgentPose
    start_distance: float
    start_in_target_room: bool
    steps: List[TraceStep] = field(default_factory=list)
    forced_termination: bool = False
    answer: Optional[str] = None
    answer_correct: Optional[bool] = None
    final_in_target_room: Optional[bool] = None
    final_target_visible: Optional[bool] = None

    def frames(self) -> List[Tuple[bool, bool]]:
        """(in_target_room, target_visible) per judged pose

        Steps are judged where they were taken; an episode cut off by the step limit
        also gets the pose it ends on, which no step judged.
        """
        frames = [(s.in_target_room, s.target_visible) for s in self.steps]
        if self.forced_termination and self.final_in_target_room is not None:
            frames.append((self.final_in_target_room, bool(self.final_target_visible)))
        return frames

    def room_flags(self) -> List[bool]:
        return [room for room, _ in self.frames()]

    def visibility_flags(self) -> List[bool]:
        return [visible for _, visible in self.frames()]

    @property
    def final_pose(self) -> AgentPose:
        return self.steps[-1].next_pose if self.steps else self.start

    @property
    def final_distance(self) -> float:
        return self.steps[-1].distance_after if self.steps else self.start_distance

    @property
    def min_distance(self) -> float:
        return min([self.start_distance] + [s.distance_after for s in self.steps])

    @property
    def actions(self) -> List[Action]:
        return [s.action for s in self.steps]

    def to_dict(self) -> dict:
        return {
            'sample_id': self.sample_id,
            'start': self.start.to_dict(),
            'start_distance': self.start_distance,
            'start_in_target_room': self.start_in_target_room,
            'forced_termination': self.forced_termination,
            'answer': self.answer,
            'answer_correct': self.answer_correct,
            'final_in_target_room': self.final_in_target_room,
            'final_target_visible': self.final_target_visible,
            'steps': [s.to_dict() for s in self.steps],
        }


def _known_fields(cls, data: dict) -> dict:
    """Keep only the keys that name dataclass fields"""
    names = {f.name for f in fields(cls)}
    return {k: v for k, v in data.items() if k in names}


@dataclass
class RunConfig:
    """Resolved configuration of one CLI invocation"""
    command: str
    seed: int
    paths: Dict[str, Optional[str]] = field(default_factory=dict)
    gen: GenParams = field(default_factory=GenParams)
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def to_dict(self) -> dict:
        return {
            'command': self.command,
            'seed': self.seed,
            'paths': dict(self.paths),
            'gen': self.gen.to_dict(),
            'policy': self.policy.to_dict(),
            'train': self.train.to_dict(),
            'eval': self.eval.to_dict(),
        }

    @classmethod
    def from_sections(cls, command: str, seed: int, data: dict,
                      overrides: Optional[Dict[str, dict]] = None) -> 'RunConfig':
        """Build from a sectioned (gen/policy/train/eval) or flat dict; overrides win"""
        overrides = overrides or {}

        def section(name: str) -> dict:
            merged = dict(data.get(name, data))
            merged.update({k: v for k, v in overrides.get(name, {}).items() if v is not None})
            return merged

        gen = section('gen')
        train = section('train')
        evaluation = section('eval')
        for block in (gen, train, evaluation):
            block['seed'] = seed
        return cls(
            command=command,
            seed=seed,
            paths={k: v for k, v in overrides.get('paths', {}).items()},
            gen=GenParams.from_dict(gen),
            policy=PolicyConfig.from_dict(section('policy')),
            train=TrainConfig.from_dict(train),
            eval=EvalConfig.from_dict(evaluation),
        )
