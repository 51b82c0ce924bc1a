"""
Configuration settings for the navigation framework
"""
import os
from pathlib import Path

# Project paths
BASE_DIR = Path(__file__).resolve().parent.parent
DATA_DIR = BASE_DIR / 'data'
CHECKPOINT_DIR = DATA_DIR / 'checkpoints'
REPORTS_DIR = DATA_DIR / 'reports'
LOGS_DIR = BASE_DIR / 'logs'


def ensure_dirs():
    """Create the project directories if they don't exist"""
    for directory in (DATA_DIR, CHECKPOINT_DIR, REPORTS_DIR, LOGS_DIR):
        directory.mkdir(parents=True, exist_ok=True)


# Application settings
APP_NAME = "Path Estimation Navigator"
APP_VERSION = "1.0.0"
DEBUG = os.getenv('DEBUG', 'False').lower() == 'true'

# Logging
LOG_FILE = LOGS_DIR / 'navigator.log'
LOG_LEVEL = 'DEBUG' if DEBUG else 'INFO'
LOG_FORMAT = '%(asctime)s %(levelname)s %(name)s: %(message)s'

# World vocabularies (index order is the one-hot channel order)
ROOM_TYPES = [
    'kitchen', 'living_room', 'bedroom', 'bathroom', 'dining_room', 'office'
]
OBJECT_CLASSES = [
    'bowl', 'cup', 'sofa', 'bed', 'lamp', 'plant', 'television', 'towel'
]
OBJECT_COLORS = ['red', 'green', 'blue', 'yellow', 'white', 'black']

ROOM_OBJECT_CLASSES = {
    'kitchen': ['bowl', 'cup', 'plant'],
    'living_room': ['sofa', 'lamp', 'television', 'plant'],
    'bedroom': ['bed', 'lamp', 'television'],
    'bathroom': ['towel', 'cup', 'plant'],
    'dining_room': ['bowl', 'cup', 'lamp'],
    'office': ['lamp', 'plant', 'cup'],
}

# Gridworld settings
FOV_DEPTH = 5
PATCH_WIDTH = 5
TERMINAL_DISTANCE = 3.0
OCCLUSION_RULE = 'column_shadow'

# House generation
MIN_MAP_SIZE = 9
DEFAULT_MAP_SIZE = 21
DEFAULT_ROOM_RANGE = (4, 6)
MIN_ROOM_SIZE = 3
OBJECTS_PER_ROOM = 2
SAMPLES_PER_HOUSE = 10
TEST_FRACTION = 0.2

# Rectification ("full picture" band around the patch centre line)
RECTIFY_MAX_OFFSET = 3
RECTIFY_MAX_LATERAL = 1
RECTIFY_WINDOW = 5

# Policy settings
FRAGMENT_LENGTH = 4
SEMANTIC_DIM = 64
PATH_DIM = 32
PATH_HIDDEN_DIM = 48
QUESTION_DIM = 16
HIDDEN_DIM = 32
MODEL_VARIANTS = ['baseline', 'baseline_fpe', 'pemr_a', 'pemr_b']
INIT_SCHEME = 'glorot_uniform'

# Training settings
LEARNING_RATE = 0.01
MOMENTUM = 0.9
GAMMA = 0.99
FRAGMENT_LOSS_WEIGHT = 0.5
BATCH_SIZE = 8
BC_EPOCHS = 20
PRETRAIN_EPOCHS = 5
RL_EPISODES = 500
RETURN_BASELINE_WINDOW = 100
REWARD_WEIGHTS = (0.5, 0.3, 0.2)
PARAM_GROUPS = ['semantic', 'path', 'fpe_head', 'question', 'bdnav', 'head', 'recall', 'baseline']

# Evaluation settings
BACKTRACK_LEVELS = (10, 30, 50)
LAST_WINDOW = 5
MAX_EPISODE_STEPS = 100

# Gradient checking
GRAD_CHECK_EPS = 1e-5
GRAD_CHECK_TOLERANCE = 1e-4
