"""Write a seeded synthetic archive (stations, forecasts, observations, truth)."""

from __future__ import annotations

import argparse
import logging
from pathlib import Path
from typing import Dict, List, Optional

from pydantic import ValidationError

from calibration.synthetic import ScenarioConfig, generate, write_scenario
from common.errors import ConfigError
from pipelines.command import EXIT_OK, RunConfig, add_common_arguments, run_module


def simulate(cfg: RunConfig) -> Dict[str, Path]:
    try:
        scenario_cfg = ScenarioConfig.model_validate(
            {
                **cfg.scenario,
                "variable": cfg.variable,
                "n_days": cfg.days,
                "n_stations": cfg.stations,
                "seed": cfg.effective_seed,
            }
        )
    except ValidationError as exc:
        raise ConfigError(f"invalid scenario: {exc}") from exc
    scenario = generate(scenario_cfg)
    return write_scenario(scenario, cfg.output or cfg.data_dir)


def add_arguments(parser: argparse.ArgumentParser) -> None:
    add_common_arguments(parser)
    parser.add_argument("--variable", help="wind or ghi.")
    parser.add_argument("--days", type=int, help="Number of forecast runs (one per day).")
    parser.add_argument("--stations", type=int, help="Number of stations.")
    parser.add_argument("--output", type=Path, help="Output directory (default: --data-dir).")
    parser.add_argument("--data-dir", type=Path, help="Archive directory.")


def run(cfg: RunConfig) -> int:
    paths = simulate(cfg)
    logging.info("Wrote synthetic %s archive to %s", cfg.variable.value, paths["forecasts"].parent)
    return EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:  # pragma: no cover
    return run_module("simulate", "Generate a synthetic ensemble archive.", add_arguments, run, argv)


if __name__ == "__main__":  # pragma: no cover
    raise SystemExit(main())


__all__ = ["simulate"]
