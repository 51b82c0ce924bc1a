"""
Command-line entry point: one binary, one subcommand per pipeline stage
"""
import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

from . import config
from .exceptions import NavigatorError
from .models import RunConfig
from .services import SCRIPTED_AGENTS, VARIANT_KINDS, NavigationService
from .utils import import_from_json, setup_logging

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_DOMAIN_ERROR = 1
EXIT_USAGE_ERROR = 2

SEEDED_COMMANDS = ('gen', 'variant', 'pretrain-fpe', 'train-bc', 'train-rl', 'eval')


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='navigator', description=config.APP_NAME)
    parser.add_argument('--log-level', default=config.LOG_LEVEL)
    parser.add_argument('--log-file', type=Path, default=None)
    sub = parser.add_subparsers(dest='command', required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', type=Path, default=None, help='JSON file; flags win')

    def seeded(name: str, help_text: str) -> argparse.ArgumentParser:
        command = sub.add_parser(name, parents=[common], help=help_text)
        command.add_argument('--seed', type=int, required=True)
        return command

    gen = seeded('gen', 'generate houses and samples')
    gen.add_argument('--houses', type=int, required=True)
    gen.add_argument('--out', type=Path, required=True)
    gen.add_argument('--test-out', type=Path, default=None)
    gen.add_argument('--size', type=int, default=None)
    gen.add_argument('--samples-per-house', type=int, default=None)

    rectify = sub.add_parser('rectify', parents=[common], help='reset or drop badly framed endings')
    rectify.add_argument('--in', dest='source', type=Path, required=True)
    rectify.add_argument('--out', type=Path, required=True)

    variant = seeded('variant', 'derive a dataset variant')
    variant.add_argument('--kind', choices=VARIANT_KINDS, required=True)
    variant.add_argument('--in', dest='source', type=Path, required=True)
    variant.add_argument('--other', type=Path, default=None)
    variant.add_argument('--houses', type=int, default=0)
    variant.add_argument('--out', type=Path, required=True)

    for name, help_text in (('pretrain-fpe', 'pretrain the path estimator'),
                            ('train-bc', 'behavioral cloning'),
                            ('train-rl', 'policy-gradient fine-tuning')):
        stage = seeded(name, help_text)
        stage.add_argument('--data', type=Path, required=True)
        stage.add_argument('--model', choices=config.MODEL_VARIANTS, default=None)
        stage.add_argument('--init', type=Path, default=None)
        stage.add_argument('--out-dir', type=Path, required=True)
        stage.add_argument('--epochs', type=int, default=None)
        stage.add_argument('--episodes', type=int, default=None)
        stage.add_argument('--learning-rate', type=float, default=None)
        stage.add_argument('--batch-size', type=int, default=None)

    evaluate = seeded('eval', 'evaluate from backtracked starts')
    evaluate.add_argument('--data', type=Path, required=True)
    agent = evaluate.add_mutually_exclusive_group(required=True)
    agent.add_argument('--ckpt', type=Path)
    agent.add_argument('--agent', choices=sorted(SCRIPTED_AGENTS))
    evaluate.add_argument('--out', type=Path, required=True)
    evaluate.add_argument('--levels', type=int, nargs='+', default=None)
    evaluate.add_argument('--max-steps', type=int, default=None)
    evaluate.add_argument('--traces-out', type=Path, default=None)

    compare = sub.add_parser('compare', parents=[common], help='align reports into one table')
    compare.add_argument('--reports', type=Path, nargs='+', required=True)
    compare.add_argument('--out', type=Path, required=True)

    render = sub.add_parser('render', parents=[common], help='draw one route as SVG')
    render.add_argument('--data', type=Path, required=True)
    render.add_argument('--sample', required=True)
    render.add_argument('--ckpt', type=Path, default=None)
    render.add_argument('--out', type=Path, required=True)
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    data = import_from_json(args.config) if getattr(args, 'config', None) else {}
    overrides = {
        'gen': {
            'width': getattr(args, 'size', None),
            'height': getattr(args, 'size', None),
            'samples_per_house': getattr(args, 'samples_per_house', None),
        },
        'policy': {'model': getattr(args, 'model', None)},
        'train': {
            'epochs': getattr(args, 'epochs', None),
            'pretrain_epochs': getattr(args, 'epochs', None),
            'rl_episodes': getattr(args, 'episodes', None),
            'learning_rate': getattr(args, 'learning_rate', None),
            'batch_size': getattr(args, 'batch_size', None),
        },
        'eval': {
            'backtrack_levels': getattr(args, 'levels', None),
            'max_steps': getattr(args, 'max_steps', None),
        },
        'paths': {
            key: str(value) for key, value in vars(args).items()
            if isinstance(value, Path)
        },
    }
    return RunConfig.from_sections(args.command, getattr(args, 'seed', 0), data, overrides)


def run_command(args: argparse.Namespace, run: RunConfig, service: NavigationService):
    command = args.command
    if command == 'gen':
        summary = service.generate(run.gen, args.houses, run.seed, args.out, args.test_out)
        print(' '.join(f"{k}={v}" for k, v in summary.items()))
    elif command == 'rectify':
        counts = service.rectify(args.source, args.out)
        print(' '.join(f"{k}={v}" for k, v in counts.to_dict().items()))
    elif command == 'variant':
        summary = service.make_variant(args.kind, args.source, args.out, args.other,
                                       run.gen, args.houses, run.seed)
        print(' '.join(f"{k}={v}" for k, v in summary.items()))
    elif command == 'pretrain-fpe':
        print(service.pretrain(args.data, run.policy, run.train, args.out_dir, args.init))
    elif command == 'train-bc':
        print(service.train_bc(args.data, run.policy, run.train, args.out_dir, args.init))
    elif command == 'train-rl':
        print(service.train_rl(args.data, run.policy, run.train, args.out_dir, args.init))
    elif command == 'eval':
        report = service.evaluate(args.data, run.eval, args.out, args.ckpt, args.agent, args.traces_out)
        for level in report.levels:
            print(f"T_{level.level}: d_delta={level.d_delta:.3f} d_T={level.d_T:.3f} "
                  f"r_T={level.r_T:.3f} o_T={level.o_T:.3f} acc={level.acc:.3f}")
    elif command == 'compare':
        data = service.compare(args.reports, args.out)
        if 'trends' in data:
            print(f"trend orderings hold: {data['trends']['passed']}")
    elif command == 'render':
        print(service.render(args.data, args.sample, args.out, args.ckpt))


def dispatch(argv: Optional[List[str]] = None, log_file: Optional[Path] = None) -> int:
    """Run one subcommand; 0 on success, 1 on domain errors, 2 on usage errors"""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_USAGE_ERROR

    setup_logging(args.log_level, args.log_file or log_file)
    try:
        run = resolve_config(args)
        service = NavigationService()
        service.log_config(run)
        run_command(args, run, service)
    except (NavigatorError, OSError, ValueError, KeyError) as e:
        logger.error("%s failed: %s", args.command, e)
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DOMAIN_ERROR
    return EXIT_OK


def main():
    config.ensure_dirs()
    sys.exit(dispatch(log_file=config.LOG_FILE))
