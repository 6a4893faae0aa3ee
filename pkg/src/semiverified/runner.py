"""Run estimate / train / sweep experiments and write plot-ready artifacts.

Every CSV starts with two ``#`` comment lines carrying the resolved config
and master seed (read with ``pandas.read_csv(path, comment="#")``). JSON
envelopes carry the same information under ``resolved_config`` and
``master_seed``. Replication ``r`` uses seed ``master_seed + r``; sweep cells
share seeds per replication index so comparisons across cells are paired.
"""

from __future__ import annotations

import csv
import io
import itertools
import json
import math
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import storage as dataio
from .config import (
    ExperimentConfig,
    LowerBoundCfg,
    config_from_dict,
    contamination_spec,
    estimator_params,
    train_config,
    with_override,
)
from .contamination import corrupt, gen_clean_gaussian, gen_lower_bound_instance, substream
from .estimator import PointSet, semi_verified_mean
from .sim import run_training

ESTIMATE_COLUMNS = [
    "replication", "seed", "sq_error", "error_norm", "filter_iterations", "removed_total",
    "terminated_by", "final_lambda_p", "survivors", "clean_survivors", "p", "lambda_c",
]
TRAIN_COLUMNS = [
    "round", "dist_to_wstar", "agg_error", "filter_iterations", "removed_total",
    "lambda_p_final", "wall_ms",
]
SWEEP_METRICS = ["replication", "seed", "final_error", "mean_agg_error", "removed_total"]


def _fmt(value):
    if isinstance(value, float):
        return "" if math.isnan(value) else repr(value)
    if isinstance(value, (dict, list)):
        return json.dumps(value, sort_keys=True, separators=(",", ":"))
    return str(value)


def _csv_text(config: ExperimentConfig, columns, rows) -> str:
    buf = io.StringIO()
    buf.write("# resolved_config=" + json.dumps(config.to_json_dict(), sort_keys=True, separators=(",", ":")) + "\n")
    buf.write(f"# master_seed={config.master_seed}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_fmt(row[c]) for c in columns])
    return buf.getvalue()


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not serializable: {type(obj)}")


def _json_text(payload) -> str:
    return json.dumps(payload, indent=2, sort_keys=True, default=_json_default, allow_nan=True) + "\n"


# single replications


def run_estimate_once(config: ExperimentConfig, replication: int, dataset_dir=None) -> dict:
    seed = config.master_seed + replication
    if isinstance(config.attack, LowerBoundCfg):
        inst = gen_lower_bound_instance(
            config.d, config.alpha_clean, config.sigma, config.N, config.model, substream(seed, "clean")
        )
        S0, mask, mu_star = inst.points, inst.mask, inst.mu_star
        A = PointSet(inst.clean_draws(config.N_A, substream(seed, "aux")))
    else:
        clean = gen_clean_gaussian(config.d, config.N, config.mu, config.sigma, substream(seed, "clean"))
        A = gen_clean_gaussian(config.d, config.N_A, config.mu, config.sigma, substream(seed, "aux")).points
        S0, mask = corrupt(clean, contamination_spec(config), substream(seed, "corrupt"))
        mu_star = clean.true_mean
    params = estimator_params(config, seed)
    result = semi_verified_mean(S0, A, params)
    if dataset_dir is not None:
        dataio.save_points_bin(S0, Path(dataset_dir) / f"S0_seed{seed}.bin")
        dataio.save_points_bin(A, Path(dataset_dir) / f"A_seed{seed}.bin")
        dataio.save_mask(mask, Path(dataset_dir) / f"mask_seed{seed}.json")
    err = result.mu_hat - mu_star
    survivors = result.trace.survivor_ids
    bad = set(mask.corrupted_ids)
    row = {
        "replication": replication,
        "seed": seed,
        "sq_error": float(err @ err),
        "error_norm": float(np.linalg.norm(err)),
        "filter_iterations": len(result.trace.iterations),
        "removed_total": result.trace.removed_total,
        "terminated_by": result.trace.terminated_by.value,
        "final_lambda_p": result.trace.final_lambda_p,
        "survivors": len(survivors),
        "clean_survivors": sum(1 for i in survivors if i not in bad),
        "p": params.p,
        "lambda_c": params.lambda_c,
    }
    return {"row": row, "trace": result.trace.to_dict(), "mu_hat": result.mu_hat.tolist()}


def run_train_once(config: ExperimentConfig, replication: int) -> dict:
    seed = config.master_seed + replication
    metrics = run_training(train_config(config, seed))
    rows = []
    for r in metrics.rounds:
        rows.append({
            "round": r.round,
            "dist_to_wstar": r.dist_to_wstar,
            "agg_error": r.agg_error,
            "filter_iterations": r.filter_iterations,
            "removed_total": r.removed_total,
            "lambda_p_final": r.lambda_p_final,
            "wall_ms": r.wall_ms if config.record_timing else float("nan"),
        })
    return {
        "replication": replication,
        "seed": seed,
        "rows": rows,
        "initial_dist": metrics.initial_dist,
        "final_dist": metrics.final_dist,
        "final_w": metrics.final_w.tolist(),
        "byzantine_ids": metrics.byzantine_ids,
        "error": metrics.error,
    }


def _summary(config: ExperimentConfig, replication: int) -> dict:
    if config.run_mode == "estimate":
        out = run_estimate_once(config, replication)["row"]
        return {
            "final_error": out["error_norm"],
            "mean_agg_error": float("nan"),
            "removed_total": out["removed_total"],
        }
    out = run_train_once(config, replication)
    rows = out["rows"]
    return {
        "final_error": out["final_dist"],
        "mean_agg_error": float(np.mean([r["agg_error"] for r in rows])) if rows else float("nan"),
        "removed_total": int(sum(r["removed_total"] for r in rows)),
    }


def _sweep_cell(task):
    cfg_dict, replication = task
    return _summary(config_from_dict(cfg_dict), replication)


def sweep_cells(config: ExperimentConfig):
    """Yield ``(axis_values, cell_config)`` in row-major axis order."""
    axes = config.sweep
    for combo in itertools.product(*(a.values for a in axes)):
        cell = config
        for axis, value in zip(axes, combo):
            cell = with_override(cell, axis.path, value)
        yield dict(zip((a.path for a in axes), combo)), cell


# orchestration


def _write(path: Path, text: str, written: list):
    path.write_text(text)
    written.append(str(path))


def run_experiment(config: ExperimentConfig, out_dir=None, jobs: int = 1) -> list:
    """Run ``config`` and write artifacts; returns the written paths."""
    out = Path(out_dir if out_dir is not None else config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    want_csv = config.output_format in ("csv", "both")
    want_json = config.output_format in ("json", "both")
    envelope = {"resolved_config": config.to_json_dict(), "master_seed": config.master_seed}
    written = []
    seeds = [config.master_seed + r for r in range(config.replications)]

    if config.mode == "estimate":
        ds_dir = None
        if config.save_datasets:
            ds_dir = out / "datasets"
            ds_dir.mkdir(exist_ok=True)
        results = [run_estimate_once(config, r, ds_dir) for r in range(config.replications)]
        rows = [res["row"] for res in results]
        if want_csv:
            _write(out / "estimate.csv", _csv_text(config, ESTIMATE_COLUMNS, rows), written)
        if want_json:
            payload = dict(envelope, seeds=seeds, rows=rows,
                           traces=[res["trace"] for res in results],
                           mu_hat=[res["mu_hat"] for res in results])
            _write(out / "estimate.json", _json_text(payload), written)
        return written

    if config.mode == "train":
        results = [run_train_once(config, r) for r in range(config.replications)]
        if want_csv:
            for res in results:
                _write(out / f"train_seed{res['seed']}.csv",
                       _csv_text(config, TRAIN_COLUMNS, res["rows"]), written)
        if want_json:
            _write(out / "train.json", _json_text(dict(envelope, seeds=seeds, runs=results)), written)
        return written

    cells = list(sweep_cells(config))
    tasks = [(cell.to_json_dict(), r) for _, cell in cells for r in range(config.replications)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            summaries = list(pool.map(_sweep_cell, tasks))
    else:
        summaries = [_sweep_cell(t) for t in tasks]
    rows = []
    it = iter(summaries)
    for axis_values, _ in cells:
        for r in range(config.replications):
            row = dict(axis_values)
            row.update(replication=r, seed=config.master_seed + r)
            row.update(next(it))
            rows.append(row)
    columns = [a.path for a in config.sweep] + SWEEP_METRICS
    if want_csv:
        _write(out / "sweep.csv", _csv_text(config, columns, rows), written)
    if want_json:
        _write(out / "sweep.json", _json_text(dict(envelope, rows=rows)), written)
    return written
