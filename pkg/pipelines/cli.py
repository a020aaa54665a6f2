"""Command-line entry point: ``python -m pipelines.cli <command> [flags]``."""

from __future__ import annotations

import argparse
from typing import List, Optional

from pipelines import predict, simulate, train, verify
from pipelines.command import invoke

COMMANDS = {
    "simulate": (simulate.add_arguments, simulate.run, "Generate a synthetic ensemble archive."),
    "train": (train.add_arguments, train.run, "Rolling-window training of a calibration method."),
    "predict": (predict.add_arguments, predict.run, "Calibrated predictions from trained artifacts."),
    "verify": (verify.add_arguments, verify.run, "Score prediction files against observations."),
    "report": (verify.add_report_arguments, verify.run_report, "Summarize an existing verification report."),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="calibrate", description="Ensemble forecast calibration.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (add_arguments, _, help_text) in COMMANDS.items():
        add_arguments(sub.add_parser(name, help=help_text, description=help_text))
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    _, handler, _ = COMMANDS[args.command]
    return invoke(handler, args.command, args)


if __name__ == "__main__":  # pragma: no cover
    raise SystemExit(main())


__all__ = ["COMMANDS", "build_parser", "main"]
