import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from semiverified.aggregators import (
    DistanceFilter,
    GradientBatch,
    MasterOnly,
    SemiVerified,
    Zeno,
    aggregate,
    aggregate_distance_filter,
    aggregate_master_only,
    aggregate_semi_verified,
    aggregate_zeno,
    zeno_selection,
)
from semiverified.contamination import ContaminationSpec, GaussianNoise, corrupt, gen_clean_gaussian, substream
from semiverified.errors import EmptySet, InvalidQ
from semiverified.estimator import EstimatorParams, PointSet, recommend_params, theorem_bound


def _batch(workers, aux, n=1):
    return GradientBatch(PointSet(np.asarray(workers, float)), PointSet(np.asarray(aux, float)), n)


# master_only


def test_master_only_single_aux():
    assert np.array_equal(aggregate_master_only(_batch([[9.0, -9.0]], [[1.0, 1.0]])), [1.0, 1.0])


def test_master_only_symmetric():
    assert np.allclose(aggregate_master_only(_batch([[0.0, 0.0]], [[0.0, 2.0], [2.0, 0.0]])), [1.0, 1.0])


def test_master_only_summation_oracle(rng):
    aux = rng.normal(size=(9, 4))
    oracle = np.array([sum(aux[i, j] for i in range(9)) / 9 for j in range(4)])
    assert np.max(np.abs(aggregate_master_only(_batch(rng.normal(size=(3, 4)), aux)) - oracle)) <= 1e-12


def test_master_only_empty():
    with pytest.raises(EmptySet):
        aggregate_master_only(GradientBatch(PointSet([[0.0]]), PointSet(np.empty((0, 1)))))


# distance_filter


def test_distance_filter_single_selection():
    g0 = np.array([1.0, 2.0])
    workers = [[50.0, 0.0], g0, [-40.0, 3.0]]
    out = aggregate_distance_filter(_batch(workers, [g0, g0], n=5), q=2)
    assert np.allclose(out, g0)


def test_distance_filter_identical():
    g0 = [0.5, -0.5]
    out = aggregate_distance_filter(_batch([g0] * 4, [g0], n=3), q=2)
    assert np.allclose(out, g0)


def test_distance_filter_hand_computation():
    g0 = np.zeros(2)
    workers = np.array([[3.0, 0.0], [0.0, 1.0], [0.0, -5.0], [2.0, 0.0], [-4.0, 0.0]])
    out = aggregate_distance_filter(_batch(workers, [[1.0, 0.0], [-1.0, 0.0]], n=3), q=2)
    closest = workers[[1, 3, 0]]
    expect = (2 * g0 + 3 * closest.sum(axis=0)) / (2 + 3 * 3)
    assert np.max(np.abs(out - expect)) <= 1e-12


def test_distance_filter_q0_weighted_mean(rng):
    workers, aux = rng.normal(size=(6, 3)), rng.normal(size=(4, 3))
    out = aggregate_distance_filter(_batch(workers, aux, n=7), q=0)
    expect = (4 * aux.mean(axis=0) + 7 * workers.sum(axis=0)) / (4 + 7 * 6)
    assert np.allclose(out, expect, atol=1e-12)


def test_distance_filter_tie_by_id():
    workers = [[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0]]
    out = aggregate_distance_filter(_batch(workers, [[0.0, 0.0]], n=1), q=2)
    assert np.allclose(out, [0.5, 0.0])


def test_invalid_q():
    b = _batch([[0.0], [1.0]], [[0.0]])
    for q in (-1, 2, 5):
        with pytest.raises(InvalidQ):
            aggregate_distance_filter(b, q)
        with pytest.raises(InvalidQ):
            aggregate_zeno(b, q, 1.0, 0.0)


# zeno


def test_zeno_prefers_aligned():
    g0 = np.array([1.0, 2.0])
    out = aggregate_zeno(_batch([g0, -g0], [g0]), q=1, gamma=1.0, rho_reg=0.0)
    assert np.allclose(out, g0)


def test_zeno_norm_only():
    workers = np.array([[3.0, 0.0], [0.1, 0.0], [0.0, -2.0], [0.5, 0.5]])
    keep = zeno_selection(_batch(workers, [[1.0, 1.0]]), q=2, gamma=0.0, rho_reg=1.0)
    assert sorted(keep.tolist()) == [1, 3]


def test_zeno_score_sort_oracle(rng):
    workers, aux = rng.normal(size=(6, 4)), rng.normal(size=(5, 4))
    gamma, rho = 0.3, 0.05
    g0 = aux.mean(axis=0)
    scores = [gamma * float(np.dot(g0, y)) - rho * float(np.dot(y, y)) for y in workers]
    top = sorted(range(6), key=lambda i: (-scores[i], i))[:3]
    expect = workers[top].mean(axis=0)
    assert np.max(np.abs(aggregate_zeno(_batch(workers, aux), 3, gamma, rho) - expect)) <= 1e-12


def test_zeno_default_gamma_is_step():
    workers = np.array([[1.0, 0.0], [0.0, 3.0], [-1.0, 0.0]])
    b = _batch(workers, [[1.0, 1.0]])
    g, _ = aggregate(b, Zeno(q=1), step_size=0.5)
    assert np.allclose(g, aggregate_zeno(b, 1, 0.5, 0.001))


# semi_verified


def test_semi_verified_identical():
    v = [1.0, -1.0, 2.0]
    g, trace = aggregate_semi_verified(_batch([v] * 10, [v] * 3), EstimatorParams(p=1, lambda_c=1.0))
    assert np.allclose(g, v, atol=1e-12) and trace.removed_total == 0


def test_semi_verified_loop_guard(rng):
    workers, aux = rng.normal(size=(30, 4)), rng.normal(size=(5, 4))
    g, trace = aggregate(_batch(workers, aux), SemiVerified(EstimatorParams(p=2, lambda_c=1e6)))
    P = trace.final_projector.projector
    expect = P @ aux.mean(axis=0) + (np.eye(4) - P) @ workers.mean(axis=0)
    assert np.allclose(g, expect, atol=1e-10) and trace.removed_total == 0


def test_semi_verified_gradient_bound():
    # m=200 workers with n samples each, 70% replaced by noise; worker noise variance is sigma^2/n
    d, m, n, N_A, alpha = 50, 200, 20, 20, 0.3
    sigma_eff = 1.0 / np.sqrt(n)
    rec = recommend_params(sigma_eff, alpha, m, d)
    grad = np.linspace(-1, 1, d)
    spec = ContaminationSpec("additive", alpha, GaussianNoise(0.2))
    errs = []
    for seed in range(50):
        clean = gen_clean_gaussian(d, m, grad, sigma_eff, substream(seed, "w"))
        Y, _ = corrupt(clean, spec, substream(seed, "a"))
        aux = PointSet(grad + substream(seed, "aux").standard_normal((N_A, d)))
        params = EstimatorParams(p=min(rec.p, d), lambda_c=rec.lambda_c, seed=seed)
        g, _ = aggregate_semi_verified(GradientBatch(Y, aux, n), params)
        errs.append(float(np.sum((g - grad) ** 2)))
    # trusted per-sample gradients carry unit variance, the worker means carry sigma^2/n
    bound = 3.0 * 1.0 * min(rec.p, d) / N_A + 15 * rec.lambda_c / (2 * alpha)
    assert np.mean(errs) <= bound
    assert bound >= theorem_bound(sigma_eff, min(rec.p, d), N_A, rec.lambda_c, alpha)


# invariances


@given(seed=st.integers(0, 2**32 - 1))
def test_permutation_invariance(seed):
    rng = np.random.default_rng(seed)
    workers, aux = rng.normal(size=(8, 3)) * 3, rng.normal(size=(4, 3))
    perm = rng.permutation(8)
    a = _batch(workers, aux, n=2)
    b = GradientBatch(PointSet(workers[perm], ids=perm), PointSet(aux), 2)
    for spec in (MasterOnly(), DistanceFilter(3), Zeno(3, 0.5, 0.01)):
        assert np.allclose(aggregate(a, spec)[0], aggregate(b, spec)[0], atol=1e-12)
    params = EstimatorParams(p=1, lambda_c=0.5, removal_mode="top_k")
    assert np.allclose(aggregate(a, SemiVerified(params))[0], aggregate(b, SemiVerified(params))[0], atol=1e-10)


@given(seed=st.integers(0, 2**32 - 1), c=st.floats(0.1, 20.0))
def test_scale_consistency(seed, c):
    rng = np.random.default_rng(seed)
    workers, aux = rng.normal(size=(10, 3)) * 2, rng.normal(size=(4, 3))
    a, b = _batch(workers, aux, 3), _batch(workers * c, aux * c, 3)
    for spec in (MasterOnly(), DistanceFilter(4)):
        assert np.allclose(aggregate(b, spec)[0], c * aggregate(a, spec)[0], rtol=1e-9, atol=1e-12)
    params = EstimatorParams(p=1, lambda_c=0.7, removal_mode="top_k", top_k=2)
    ga = aggregate(a, SemiVerified(params))[0]
    gb = aggregate(b, SemiVerified(params.rescaled(c)))[0]
    assert np.allclose(gb, c * ga, rtol=1e-8, atol=1e-10)
    sa = zeno_selection(a, 4, 1.0, 0.1)
    # both score terms are quadratic in the inputs, so rho_reg stays fixed
    sb = zeno_selection(b, 4, 1.0, 0.1)
    assert set(sa.tolist()) == set(sb.tolist())
