"""Acceptance criteria at their stated tolerances and runtime budgets.

Each test records a one-line verdict that the terminal summary prints.
"""

import csv
import io
import time

import numpy as np
import pytest

from semiverified.aggregators import DistanceFilter, MasterOnly, SemiVerified, Zeno
from semiverified.config import config_from_dict, with_override
from semiverified.contamination import ContaminationSpec, GaussianNoise, MeanShift
from semiverified.errors import DegenerateEigenvalue
from semiverified.estimator import (
    EstimatorParams,
    PointSet,
    Termination,
    filter_once,
    sample_covariance,
    sample_mean,
    semi_verified_mean,
    tau_scores,
    theorem_bound,
    top_spectrum,
)
from semiverified.runner import run_experiment
from semiverified.sim import TrainConfig, run_training

pytestmark = pytest.mark.acceptance

VERDICTS = []


def record(number, ok, detail):
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'} | {detail}"
    VERDICTS.append(line)
    print(line)
    return ok


def _csv_rows(path):
    lines = path.read_text().splitlines()
    return list(csv.DictReader(io.StringIO("\n".join(l for l in lines if not l.startswith("#")))))


# shared random datasets for the first two criteria


def _datasets():
    rng = np.random.default_rng(12345)
    out = []
    for k in range(100):
        d = int(rng.integers(1, 21))
        n = int(rng.integers(d + 2, 501))
        p = int(rng.integers(1, d + 1))
        values = rng.normal(size=(n, d)) * rng.uniform(0.2, 5.0, size=d)
        bad = rng.random(n) < rng.uniform(0.0, 0.6)
        values[bad] += rng.normal(size=(int(bad.sum()), d)) * 10
        cov = sample_covariance(PointSet(values), values.mean(axis=0))
        # threshold inside the spectrum so the loop does some work
        lam_c = float(np.linalg.eigvalsh(cov)[::-1][p - 1]) * rng.uniform(0.2, 0.9)
        mode = "randomized" if k % 2 == 0 else "top_k"
        params = EstimatorParams(p=p, lambda_c=lam_c, removal_mode=mode, top_k=int(rng.integers(1, 6)), seed=k)
        A = PointSet(rng.normal(size=(5, d)))
        out.append((PointSet(values), A, params))
    return out


def _instrumented_run(S0, params, on_step):
    """Replays the filter loop, handing every step to ``on_step``."""
    S = S0
    stream = np.random.default_rng(params.seed)
    for _ in range(len(S0)):
        if len(S) < params.min_survivors:
            return
        step = filter_once(S, params, stream)
        on_step(S, step)
        if step.done or step.floor_reached:
            return
        S = S.without(step.removed_ids)


def test_criterion_1_tau_mean_identity():
    start = time.perf_counter()
    worst, iterations = 0.0, 0

    def check(S, step):
        nonlocal worst, iterations
        if step.tau is None:
            return
        iterations += 1
        p = step.spectrum.p
        # recompute independently from the surviving set
        mu = sample_mean(S)
        tau = tau_scores(S, mu, top_spectrum(sample_covariance(S, mu), p))
        worst = max(worst, abs(tau.mean() - p) / p, abs(step.tau.mean() - p) / p)

    for S0, _, params in _datasets():
        try:
            _instrumented_run(S0, params, check)
        except DegenerateEigenvalue:
            pass
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-8 and elapsed < 10 and iterations > 100
    assert record(1, ok, f"max |mean(tau)-p|/p = {worst:.2e} over {iterations} iterations, {elapsed:.1f}s")


def test_criterion_2_projector_laws_and_termination():
    start = time.perf_counter()
    worst = 0.0
    violations = []

    def check(S, step):
        nonlocal worst
        P, p = step.spectrum.projector, step.spectrum.p
        worst = max(
            worst,
            float(np.linalg.norm(P @ P - P)),
            float(np.linalg.norm(P - P.T)),
            abs(float(np.trace(P)) - p),
        )

    for k, (S0, A, params) in enumerate(_datasets()):
        _instrumented_run(S0, params, check)
        res = semi_verified_mean(S0, A, params)
        check(None, type("S", (), {"spectrum": res.trace.final_projector})())
        if len(res.trace.iterations) > len(S0):
            violations.append((k, "iterations"))
        if res.trace.terminated_by is Termination.EIGENVALUE_BELOW_THRESHOLD:
            if not res.trace.final_lambda_p < params.lambda_c:
                violations.append((k, "lambda_p"))
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-8 and not violations and elapsed < 30
    assert record(2, ok, f"max projector defect {worst:.2e}, violations {violations}, {elapsed:.1f}s")


def _estimate_config(alpha, model="additive"):
    return config_from_dict({
        "mode": "estimate", "master_seed": 0, "replications": 50, "output_format": "csv",
        "d": 50, "N": 5000, "N_A": 20, "sigma": 1.0, "alpha_clean": alpha, "model": model,
        "attack": {"kind": "mean_shift", "magnitude": 10.0, "axis": 0},
    })


def _mse_and_rhs(config, out_dir):
    run_experiment(config, out_dir)
    rows = _csv_rows(out_dir / "estimate.csv")
    se = np.array([float(r["sq_error"]) for r in rows])
    p, lam = int(rows[0]["p"]), float(rows[0]["lambda_c"])
    return se, theorem_bound(config.sigma, p, config.N_A, lam, config.alpha_clean)


def test_criterion_3_additive_bound(tmp_path):
    start = time.perf_counter()
    parts, ok = [], True
    for alpha in (0.2, 0.4, 0.8):
        se, rhs = _mse_and_rhs(_estimate_config(alpha), tmp_path / f"a{alpha}")
        ok &= bool(se.mean() <= rhs)
        parts.append(f"alpha={alpha}: mse {se.mean():.3f} <= {rhs:.1f}")
    elapsed = time.perf_counter() - start
    ok &= elapsed < 120
    assert record(3, ok, "; ".join(parts) + f", {elapsed:.1f}s")


def test_criterion_4_strong_model_degradation(tmp_path):
    start = time.perf_counter()
    se_add, rhs_add = _mse_and_rhs(_estimate_config(0.2, "additive"), tmp_path / "add")
    se_str, rhs_str = _mse_and_rhs(_estimate_config(0.2, "strong"), tmp_path / "strong")
    elapsed = time.perf_counter() - start
    worse = se_str.mean() > se_add.mean()
    bounded = se_add.mean() <= rhs_add and se_str.mean() <= rhs_str
    ok = bool(worse and bounded and elapsed < 120)
    detail = (
        f"strong mse {se_str.mean():.4f} vs additive {se_add.mean():.4f} "
        f"(strong worse on {int((se_str > se_add).sum())}/50 paired seeds); "
        f"bounds {rhs_str:.0f} / {rhs_add:.1f}, {elapsed:.1f}s"
    )
    assert record(4, ok, detail)


def test_criterion_5_minimax_floor(tmp_path):
    start = time.perf_counter()
    config = config_from_dict({
        "mode": "estimate", "master_seed": 0, "replications": 50, "output_format": "csv",
        "d": 64, "N": 20000, "N_A": 1, "sigma": 1.0, "alpha_clean": 0.5,
        "attack": {"kind": "lower_bound_instance", "beta": 0.25, "sigma": 1.0},
    })
    run_experiment(config, tmp_path)
    errors = np.array([float(r["error_norm"]) for r in _csv_rows(tmp_path / "estimate.csv")])
    floor = 0.5 * 1.0 / np.sqrt(2 * 0.5)
    elapsed = time.perf_counter() - start
    ok = bool(np.median(errors) >= floor and elapsed < 120)
    assert record(5, ok, f"median error {np.median(errors):.3f} >= {floor:.3f}, {elapsed:.1f}s")


def test_criterion_6_contraction():
    start = time.perf_counter()
    eta, d, m = 0.1, 30, 20
    attack = ContaminationSpec("additive", 0.5, MeanShift(5.0))
    aggregators = [
        MasterOnly(),
        DistanceFilter(q=10),
        Zeno(q=10),
        SemiVerified(EstimatorParams(p=2, lambda_c=0.5)),
    ]
    total = held = 0
    for seed in range(20):
        for agg in aggregators:
            metrics = run_training(
                TrainConfig(d=d, m=m, N_A=5, T=30, eta=eta, loss="quadratic", aggregator=agg,
                            contamination=attack, master_seed=seed)
            )
            prev = metrics.initial_dist
            for r in metrics.rounds:
                total += 1
                held += r.dist_to_wstar <= (1 - eta / 2) * prev + eta * r.agg_error
                prev = r.dist_to_wstar
    elapsed = time.perf_counter() - start
    ok = held == total and total == 20 * 4 * 30 and elapsed < 30
    assert record(6, ok, f"{held}/{total} rounds satisfy the contraction, {elapsed:.1f}s")


def _train_sweep(q_frac, seed=0):
    q = round(q_frac * 100)
    return config_from_dict({
        "mode": "sweep", "target": "train", "master_seed": seed, "replications": 10, "output_format": "csv",
        "d": 50, "m": 100, "n_per_worker": 20, "N_A": 20, "T": 30, "eta": 0.2,
        "loss": "linear_regression", "alpha_clean": round(1 - q_frac, 10),
        "attack": {"kind": "gaussian_noise", "level": 0.2, "interpretation": "variance"},
        "sweep": [{"path": "aggregator", "values": [
            {"kind": "master_only"},
            {"kind": "distance_filter", "q": q},
            {"kind": "zeno", "q": q},
            {"kind": "semi_verified", "p": 1, "lambda_c": 1e12},
        ]}],
    })


def _ratios(path):
    rows = _csv_rows(path)
    by_kind = {}
    for r in rows:
        kind = r["aggregator"].split('"kind":"')[1].split('"')[0]
        by_kind.setdefault(kind, []).append(float(r["final_error"]))
    base = np.min([by_kind[k] for k in ("master_only", "distance_filter", "zeno")], axis=0)
    return np.array(by_kind["semi_verified"]) / base


def test_criterion_7_figure_ordering(tmp_path):
    start = time.perf_counter()
    run_experiment(_train_sweep(0.7), tmp_path / "q70")
    run_experiment(_train_sweep(0.3), tmp_path / "q30")
    r70, r30 = _ratios(tmp_path / "q70" / "sweep.csv"), _ratios(tmp_path / "q30" / "sweep.csv")
    pass70, pass30 = int((r70 <= 0.5).sum()), int((r30 <= 1.0).sum())
    elapsed = time.perf_counter() - start
    ok = pass70 >= 8 and pass30 >= 8 and elapsed < 300
    detail = (
        f"q/m=0.7: {pass70}/10 ratios <= 0.5 (median {np.median(r70):.2f}); "
        f"q/m=0.3: {pass30}/10 ratios <= 1.0 (median {np.median(r30):.2f}), {elapsed:.1f}s"
    )
    assert record(7, ok, detail)


def test_criterion_8_determinism(tmp_path):
    start = time.perf_counter()
    same = []
    for alpha in (0.2, 0.4, 0.8):
        cfg = _estimate_config(alpha)
        run_experiment(cfg, tmp_path / f"a{alpha}_1")
        run_experiment(cfg, tmp_path / f"a{alpha}_2")
        same.append((tmp_path / f"a{alpha}_1" / "estimate.csv").read_bytes()
                    == (tmp_path / f"a{alpha}_2" / "estimate.csv").read_bytes())
    for q_frac in (0.7, 0.3):
        cfg = _train_sweep(q_frac)
        run_experiment(cfg, tmp_path / f"q{q_frac}_1")
        run_experiment(with_override(cfg, "output_dir", "elsewhere"), tmp_path / f"q{q_frac}_2")
        a = (tmp_path / f"q{q_frac}_1" / "sweep.csv").read_text().splitlines()
        b = (tmp_path / f"q{q_frac}_2" / "sweep.csv").read_text().splitlines()
        # only the echoed output_dir differs; data rows must match byte for byte
        same.append(a[1:] == b[1:])
        run_experiment(cfg, tmp_path / f"q{q_frac}_3")
        same.append((tmp_path / f"q{q_frac}_1" / "sweep.csv").read_bytes()
                    == (tmp_path / f"q{q_frac}_3" / "sweep.csv").read_bytes())
    elapsed = time.perf_counter() - start
    assert record(8, all(same), f"{sum(same)}/{len(same)} rerun comparisons byte-identical, {elapsed:.1f}s")
