"""
Utility functions for the navigation framework
"""
import json
import logging
import math
from pathlib import Path
from typing import List, Optional, Union

import numpy as np

from .config import LOG_FORMAT, LOG_LEVEL


def setup_logging(level: str = LOG_LEVEL, log_file: Optional[Path] = None):
    """Configure the root logger once: stderr always, a file when requested"""
    handlers: List[logging.Handler] = [logging.StreamHandler()]
    if log_file is not None:
        log_file = Path(log_file)
        log_file.parent.mkdir(parents=True, exist_ok=True)
        handlers.append(logging.FileHandler(log_file))
    logging.basicConfig(level=level, format=LOG_FORMAT, handlers=handlers, force=True)


def canonical_json(data: Union[dict, list]) -> str:
    """Compact JSON with sorted keys; byte-stable for equal inputs"""
    return json.dumps(data, sort_keys=True, separators=(',', ':'))


def export_to_json(data: Union[dict, list], filepath: Path):
    """Export data to JSON file"""
    filepath = Path(filepath)
    filepath.parent.mkdir(parents=True, exist_ok=True)
    with open(filepath, 'w') as f:
        json.dump(data, f, indent=2, sort_keys=True)
        f.write('\n')


def import_from_json(filepath: Path) -> Union[dict, list]:
    """Import data from JSON file"""
    with open(filepath, 'r') as f:
        return json.load(f)


def safe_divide(numerator: float, denominator: float, default: float = 0) -> float:
    """Safely divide two numbers"""
    try:
        return numerator / denominator if denominator != 0 else default
    except (TypeError, ZeroDivisionError):
        return default


def chunk_list(lst: List, chunk_size: int) -> List[List]:
    """Split list into chunks"""
    return [lst[i:i + chunk_size] for i in range(0, len(lst), chunk_size)]


def spawn_seeds(seed: int, count: int) -> List[int]:
    """Independent child seeds derived from one parent seed"""
    children = np.random.SeedSequence(seed).spawn(count)
    return [int(child.generate_state(1)[0]) for child in children]


def derive_seed(*parts: int) -> int:
    """Deterministic seed for a tuple of integers (episode, level, ...)"""
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


def round_float(value: float, digits: int = 6) -> float:
    """Round for reports; keeps NaN out of JSON"""
    if value is None or not math.isfinite(value):
        return 0.0
    return round(float(value), digits)
