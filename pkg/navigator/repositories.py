"""
Data access layer - file repositories for datasets, checkpoints, reports and traces
"""
import json
import logging
from pathlib import Path
from typing import Iterable, List, Mapping, Optional, Tuple

from .exceptions import DatasetFormatError
from .ml.policy import NavigatorPolicy
from .ml.tensorkit import ParamStore
from .models import Dataset, EpisodeTrace, GridMap, PolicyConfig, Sample, Split, Variant
from .utils import canonical_json, export_to_json, import_from_json

logger = logging.getLogger(__name__)


class DatasetRepository:
    """JSON-lines dataset files

    Line kinds: one optional `meta` record, then `map` records, then one `sample` per line.
    """

    def save(self, dataset: Dataset, path: Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        lines = [canonical_json({
            'record': 'meta', 'split': dataset.split.value, 'variant': dataset.variant.value,
        })]
        for ref in sorted(dataset.maps):
            lines.append(canonical_json({'record': 'map', 'ref': ref, 'map': dataset.maps[ref].to_dict()}))
        for sample in dataset.samples:
            lines.append(canonical_json({'record': 'sample', **sample.to_dict()}))
        with open(path, 'w') as f:
            f.write('\n'.join(lines) + '\n')
        logger.info("Saved %d samples over %d maps to %s", len(dataset), len(dataset.maps), path)
        return path

    def load(self, path: Path) -> Dataset:
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"Dataset file not found: {path}")
        dataset = Dataset()
        with open(path, 'r') as f:
            for line_number, line in enumerate(f, start=1):
                if not line.strip():
                    continue
                self._read_line(dataset, line, line_number)
        for sample in dataset.samples:
            if sample.map_ref not in dataset.maps:
                raise DatasetFormatError(f"sample {sample.sample_id} references missing map {sample.map_ref}")
        return dataset

    def _read_line(self, dataset: Dataset, line: str, line_number: int):
        try:
            record = json.loads(line)
            kind = record.pop('record')
            if kind == 'meta':
                dataset.split = Split(record['split'])
                dataset.variant = Variant(record['variant'])
            elif kind == 'map':
                dataset.maps[record['ref']] = GridMap.from_dict(record['map'])
            elif kind == 'sample':
                dataset.samples.append(Sample.from_dict(record))
            else:
                raise ValueError(f"unknown record kind {kind!r}")
        except (ValueError, KeyError, TypeError, AttributeError) as e:
            raise DatasetFormatError(str(e), line_number) from e


class CheckpointRepository:
    """Policy checkpoints: architecture block plus the flat parameter dump"""

    def __init__(self, directory: Optional[Path] = None):
        self.directory = Path(directory) if directory is not None else None

    @staticmethod
    def epoch_name(epoch: int) -> str:
        return f"epoch_{epoch:03d}.json"

    def save(self, policy: NavigatorPolicy, path: Path, epoch: Optional[int] = None) -> Path:
        data = {'policy': policy.config.to_dict(), **policy.params.to_dict()}
        if epoch is not None:
            data['epoch'] = epoch
        export_to_json(data, path)
        return Path(path)

    def save_epoch(self, policy: NavigatorPolicy, epoch: int) -> Path:
        if self.directory is None:
            raise ValueError("No checkpoint directory configured")
        return self.save(policy, self.directory / self.epoch_name(epoch), epoch)

    def load(self, path: Path) -> NavigatorPolicy:
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"Checkpoint not found: {path}")
        data = import_from_json(path)
        policy_config = PolicyConfig.from_dict(data['policy'])
        params = ParamStore.from_dict(data)
        reference = NavigatorPolicy(policy_config, seed=params.seed)
        expected = {name: reference.params[name].shape for name in reference.params.names()}
        found = {name: params[name].shape for name in params.names()}
        if expected != found:
            raise DatasetFormatError(f"Checkpoint {path} does not match the {policy_config.model} architecture")
        return NavigatorPolicy(policy_config, params=params)

    def list_epochs(self) -> List[Path]:
        if self.directory is None or not self.directory.exists():
            return []
        return sorted(self.directory.glob('epoch_*.json'))


class ReportRepository:
    """Reports and comparison tables as JSON plus a fixed-width text rendering"""

    def save(self, data: dict, text: str, path: Path) -> Tuple[Path, Path]:
        json_path = Path(path).with_suffix('.json')
        text_path = Path(path).with_suffix('.txt')
        export_to_json(data, json_path)
        with open(text_path, 'w') as f:
            f.write(text)
        return json_path, text_path

    def load(self, path: Path) -> dict:
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"Report not found: {path}")
        return import_from_json(path)


class TraceRepository:
    """Per-episode traces as JSON lines for audit"""

    def save(self, traces_by_level: Mapping[int, Iterable[EpisodeTrace]], path: Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, 'w') as f:
            for level in sorted(traces_by_level):
                for trace in traces_by_level[level]:
                    f.write(canonical_json({'level': level, **trace.to_dict()}) + '\n')
        return path

    def load(self, path: Path) -> List[dict]:
        with open(path, 'r') as f:
            return [json.loads(line) for line in f if line.strip()]
