import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

from src.config import parse_config
from src.errors import LmsError
from src.pipeline import COMMANDS, write_config_echo
from src.studies import STUDIES
from src.utils import setup_logging

logger = logging.getLogger("lms2s")


def add_common_arguments(parser: argparse.ArgumentParser):
    parser.add_argument("--config", help="fichier key=value")
    parser.add_argument("--seed", type=int, help="graine (prioritaire sur le fichier et les surcharges)")
    parser.add_argument("--out-dir", help="repertoire de sortie (cle out_dir)")
    parser.add_argument("--log-level", default="INFO", help="DEBUG, INFO, WARNING...")
    parser.add_argument("overrides", nargs="*", metavar="key=value")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="main.py",
        description="LMS2S - seq2seq a espace latent ameliore et filtres multiples",
    )
    commands = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        add_common_arguments(commands.add_parser(name))
    study = commands.add_parser("study")
    study.add_argument("kind", choices=sorted(STUDIES))
    add_common_arguments(study)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(args.log_level)

    try:
        overrides = list(args.overrides)
        if args.out_dir:
            overrides.append(f"out_dir={args.out_dir}")
        config = parse_config(args.config, overrides, args.seed)
        Path(config.out_dir).mkdir(parents=True, exist_ok=True)
        write_config_echo(config)

        if args.command == "study":
            STUDIES[args.kind](config)
        else:
            COMMANDS[args.command](config)
    except LmsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1

    logger.info(f"{args.command} done, outputs in {config.out_dir}/")
    return 0


if __name__ == "__main__":
    sys.exit(main())
