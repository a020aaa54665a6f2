"""Rolling-window training of one calibration method over a range of dates."""

from __future__ import annotations

import argparse
import logging
import multiprocessing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

from calibration.data import Dataset
from calibration.emos import EmosFit, EmosParams, fit_many, params_to_document
from calibration.presets import MethodSpec, config_hash
from common.errors import CalibrationError, InsufficientDataError
from pipelines.artifacts import artifact_path, write_json, write_manifest
from pipelines.command import (
    EXIT_FAILURE,
    EXIT_OK,
    RunConfig,
    add_common_arguments,
    add_method_arguments,
    read_archive,
    run_module,
)
from pipelines.methods import train_mlp_s, train_mlpex
from pipelines.windows import date_label, pool_masks, rolling_window, scopes, valid_dates

Documents = Dict[str, dict]


@dataclass
class TrainResult:
    manifest: dict
    trained: List[str] = field(default_factory=list)
    skipped: Dict[str, str] = field(default_factory=dict)

    @property
    def all_skipped(self) -> bool:
        return not self.trained


# ---------------------------------------------------------------------------
# EMOS: one parameter set per lead time
# ---------------------------------------------------------------------------


def _emos_documents(
    dataset: Dataset, spec: MethodSpec, days: List[int], *, seed: int, workers: int
) -> Tuple[Dict[Tuple[int, str], Documents], Dict[str, str]]:
    """Fit every (date, scope, lead) model, date by date.

    Each fit starts from the latest earlier fit of the same scope and lead
    besides the least-squares and random starts.
    """
    skipped: Dict[str, str] = {}
    latest: Dict[Tuple[str, str], EmosParams] = {}
    fits: Dict[Tuple[int, str, str], EmosFit] = {}
    for day in sorted(days):
        tasks = {}
        for scope in scopes(dataset, spec.window):
            try:
                window = rolling_window(dataset, day, spec.window, station=scope)
            except InsufficientDataError as exc:
                skipped[f"{date_label(day)}/{scope}"] = str(exc)
                continue
            frame = window.frame
            for pool, rows in pool_masks(frame, "per_lead_time").items():
                part = frame[rows]
                tasks[(day, scope, pool)] = (window.members[rows], part["observation"].to_numpy(float))
        inits = {key: latest[key[1:]] for key in tasks if key[1:] in latest}
        for key, fit in fit_many(tasks, spec.family, inits=inits, workers=workers, seed=seed).items():
            if fit is not None:
                fits[key] = fit
                latest[key[1:]] = fit.params

    documents: Dict[Tuple[int, str], Documents] = {}
    for (day, scope, pool), fit in sorted(fits.items()):
        lead = int(pool.split("_")[1])
        documents.setdefault((day, scope), {})[pool] = params_to_document(
            fit, scope=scope, lead_minutes=lead, valid_date=date_label(day)
        )
    return documents, skipped


# ---------------------------------------------------------------------------
# Networks: one task per (valid date, scope)
# ---------------------------------------------------------------------------

_SHARED: Dict[str, object] = {}


def _init_worker(dataset: Dataset, spec: MethodSpec, seed: int) -> None:
    _SHARED.update(dataset=dataset, spec=spec, seed=seed)


def _network_task(task: Tuple[int, str]):
    day, scope = task
    dataset: Dataset = _SHARED["dataset"]  # type: ignore[assignment]
    spec: MethodSpec = _SHARED["spec"]  # type: ignore[assignment]
    seed = int(_SHARED["seed"])  # type: ignore[arg-type]
    label = date_label(day)
    try:
        window = rolling_window(dataset, day, spec.window, station=scope, complete_only=False)
        docs: Documents = {}
        if spec.kind == "mlp_s":
            networks = train_mlp_s(window.frame, spec, seed=seed)
        else:
            networks, aux_mlp, aux_c1d = train_mlpex(window.frame, spec, seed=seed)
            docs["aux_mlp"] = aux_mlp.to_document(method=spec.name, scope=scope, valid_date=label, pool="aux_mlp")
            docs["aux_c1d"] = aux_c1d.to_document(method=spec.name, scope=scope, valid_date=label, pool="aux_c1d")
        for pool, trained in networks.items():
            docs[pool] = trained.to_document(method=spec.name, scope=scope, valid_date=label, pool=pool)
        logging.info("Trained %s for %s (%s)", spec.name, label, scope)
        return task, docs, None
    except CalibrationError as exc:
        return task, None, str(exc)


def _network_documents(
    dataset: Dataset, spec: MethodSpec, days: List[int], *, seed: int, workers: int
) -> Tuple[Dict[Tuple[int, str], Documents], Dict[str, str]]:
    tasks = [(day, scope) for day in days for scope in scopes(dataset, spec.window)]
    if workers > 1 and len(tasks) > 1:
        with multiprocessing.Pool(min(workers, len(tasks)), initializer=_init_worker, initargs=(dataset, spec, seed)) as pool:
            results = list(pool.imap_unordered(_network_task, tasks))
    else:
        _init_worker(dataset, spec, seed)
        results = [_network_task(t) for t in tasks]

    documents: Dict[Tuple[int, str], Documents] = {}
    skipped: Dict[str, str] = {}
    for (day, scope), docs, message in results:
        if docs is None:
            skipped[f"{date_label(day)}/{scope}"] = message or "failed"
        else:
            documents[(day, scope)] = docs
    return documents, skipped


def train_method(
    dataset: Dataset,
    spec: MethodSpec,
    *,
    model_dir: str | Path,
    days: Optional[List[int]] = None,
    seed: int = 0,
    workers: int = 1,
) -> TrainResult:
    """Train ``spec`` for every valid date and write artifacts plus a manifest.

    Dates (or date/scope pairs) without enough history are skipped with a
    warning; the manifest records them.
    """

    days = valid_dates(dataset, spec.window) if days is None else list(days)
    if not days:
        raise InsufficientDataError(f"archive has no date with {spec.window.train_days} days of history")
    build = _emos_documents if spec.kind == "emos" else _network_documents
    documents, skipped = build(dataset, spec, days, seed=seed, workers=workers)

    paths: List[Path] = []
    trained_dates = set()
    for (day, scope), docs in sorted(documents.items()):
        for pool, doc in sorted(docs.items()):
            paths.append(write_json(artifact_path(model_dir, spec.name, scope, date_label(day), pool), doc))
        trained_dates.add(date_label(day))
    for key, reason in sorted(skipped.items()):
        logging.warning("Skipped %s %s: %s", spec.name, key, reason)

    manifest = write_manifest(
        model_dir,
        spec.name,
        config_hash=config_hash(spec, seed=seed),
        seed=seed,
        variable=spec.variable.value,
        artifacts=paths,
        valid_dates=trained_dates,
        skipped=skipped,
    )
    return TrainResult(manifest=manifest, trained=sorted(trained_dates), skipped=skipped)


def add_arguments(parser: argparse.ArgumentParser) -> None:
    add_common_arguments(parser)
    add_method_arguments(parser)
    parser.add_argument("--train-days", type=int, help="Rolling window length in days (default: preset).")
    parser.add_argument("--spatial", choices=["local", "regional"], help="Estimation scope (default: preset).")
    parser.add_argument("--workers", type=int, help="Training worker processes (default: CALIB_WORKERS).")


def run(cfg: RunConfig) -> int:
    spec = cfg.method_spec()
    dataset = read_archive(cfg)
    days = valid_dates(dataset, spec.window, start=cfg.start, end=cfg.end)
    result = train_method(
        dataset,
        spec,
        model_dir=cfg.effective_model_dir,
        days=days,
        seed=cfg.effective_seed,
        workers=cfg.effective_workers,
    )
    if result.all_skipped:
        logging.error("No valid date could be trained for %s", spec.name)
        return EXIT_FAILURE
    logging.info("Trained %s for %d dates, skipped %d", spec.name, len(result.trained), len(result.skipped))
    return EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:  # pragma: no cover
    return run_module("train", "Rolling-window training of a calibration method.", add_arguments, run, argv)


if __name__ == "__main__":  # pragma: no cover
    raise SystemExit(main())


__all__ = ["TrainResult", "train_method"]
