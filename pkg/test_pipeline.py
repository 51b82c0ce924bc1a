"""
Smoke pipeline: gen -> rectify -> pretrain-fpe -> train-bc -> train-rl -> eval -> render
"""
import json

import pytest

from navigator.cli import dispatch
from navigator.repositories import CheckpointRepository, DatasetRepository

TINY_RUN = {
    'gen': {'width': 11, 'height': 11, 'min_rooms': 2, 'max_rooms': 3, 'samples_per_house': 4},
    'policy': {
        'fragment_length': 3, 'semantic_dim': 6, 'path_dim': 4, 'path_hidden_dim': 5,
        'question_dim': 3, 'hidden_dim': 4,
    },
    'train': {'batch_size': 4, 'max_steps': 20},
    'eval': {'max_steps': 30},
}


def run_pipeline(root):
    root.mkdir(parents=True)
    config_file = root / 'run.json'
    config_file.write_text(json.dumps(TINY_RUN))
    common = ['--config', str(config_file)]

    def run(*argv):
        code = dispatch([*argv, *common])
        assert code == 0, argv

    run('gen', '--seed', '7', '--houses', '5', '--out', str(root / 'v1.jsonl'))
    run('rectify', '--in', str(root / 'v1.jsonl'), '--out', str(root / 'v1mm.jsonl'))
    data = str(root / 'v1mm.jsonl')
    run('pretrain-fpe', '--seed', '1', '--data', data, '--model', 'pemr_b', '--epochs', '1',
        '--out-dir', str(root / 'fpe'))
    run('train-bc', '--seed', '1', '--data', data, '--init', str(root / 'fpe' / 'final.json'),
        '--epochs', '2', '--out-dir', str(root / 'bc'))
    run('train-rl', '--seed', '1', '--data', data, '--init', str(root / 'bc' / 'final.json'),
        '--episodes', '4', '--out-dir', str(root / 'rl'))
    run('eval', '--seed', '0', '--data', data, '--ckpt', str(root / 'rl' / 'final.json'),
        '--levels', '10', '30', '--out', str(root / 'report'))
    sample_id = DatasetRepository().load(root / 'v1mm.jsonl').samples[0].sample_id
    run('render', '--data', data, '--sample', sample_id, '--ckpt', str(root / 'rl' / 'final.json'),
        '--out', str(root / 'route.svg'))
    return root


@pytest.mark.slow
def test_pipeline_is_reproducible(tmp_path):
    first = run_pipeline(tmp_path / 'first')
    second = run_pipeline(tmp_path / 'second')

    for name in ('v1mm.jsonl', 'report.json', 'report.txt', 'route.svg'):
        assert (first / name).read_bytes() == (second / name).read_bytes(), name

    assert sorted(p.name for p in (first / 'bc' / 'checkpoints').iterdir()) == [
        'epoch_000.json', 'epoch_001.json',
    ]
    assert (first / 'bc' / 'curves' / 'bc_loss.csv').exists()
    assert (first / 'rl' / 'curves' / 'rl_return.csv').exists()
    assert (first / 'fpe' / 'curves' / 'fpe_bce.csv').exists()

    policy = CheckpointRepository().load(first / 'rl' / 'final.json')
    assert policy.config.model == 'pemr_b'
    assert policy.config.fragment_length == 3

    report = json.loads((first / 'report.json').read_text())
    assert report['model'] == 'pemr_b'
    assert [level['level'] for level in report['levels']] == [10, 30]
