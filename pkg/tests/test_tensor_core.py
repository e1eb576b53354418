import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from otl.tensor_core import (
    ComponentSet, SpherePoint, CorrelationProfile, sample_components, correlations,
    eval_objective, dense_tensor_eval, riemannian_gradient, riemannian_hessian,
    hessian_matvec, to_tangent, ambient_gradient, write_components, read_components,
)
from otl.sphere_optimizer import tangent_eigmax
from otl.rng import make_rng, stream_key


def _unit(rng, d):
    v = rng.standard_normal(d)
    return v / np.linalg.norm(v)


def _tangent(rng, x):
    v = rng.standard_normal(x.size)
    v -= (x @ v) * x
    return v / np.linalg.norm(v)


def _geo(x, xi, t):
    return np.cos(t) * x + np.sin(t) * xi


seeds = st.integers(0, 2 ** 32)


# --- rng ---------------------------------------------------------------------

def test_streams_reproducible_and_distinct():
    a = make_rng(5, "x", 1).standard_normal(4)
    assert np.array_equal(a, make_rng(5, "x", 1).standard_normal(4))
    assert not np.array_equal(a, make_rng(5, "x", 2).standard_normal(4))
    assert not np.array_equal(a, make_rng(6, "x", 1).standard_normal(4))
    assert stream_key("x") == stream_key("x")


def test_rng_rejects_bad_labels():
    with pytest.raises(ValueError):
        make_rng(-1)
    with pytest.raises(ValueError):
        make_rng(0, -3)
    with pytest.raises(TypeError):
        make_rng(0, 1.5)


# --- types -------------------------------------------------------------------

def test_component_set_validation():
    with pytest.raises(ValueError):
        ComponentSet(np.ones((1, 3)))
    with pytest.raises(ValueError):
        ComponentSet(np.ones((3, 0)))
    with pytest.raises(ValueError):
        ComponentSet([[1.0, np.nan], [0.0, 1.0]])
    A = ComponentSet(np.eye(3))
    with pytest.raises(ValueError):
        A.A[0, 0] = 5.0


def test_sphere_point_normalizes():
    p = SpherePoint([3.0, 4.0])
    assert abs(np.linalg.norm(p.x) - 1) < 1e-12
    assert np.allclose(p.x, [0.6, 0.8])
    assert np.allclose((-p).x, [-0.6, -0.8])
    with pytest.raises(ValueError):
        SpherePoint([0.0, 0.0])
    P = p.projector()
    assert np.allclose(P @ p.x, 0)


@given(seeds, st.integers(1, 30))
@settings(max_examples=40, deadline=None)
def test_profile_cached_norms(seed, n):
    a = make_rng(seed, "t").standard_normal(n) * 3
    c = CorrelationProfile(a)
    assert np.isclose(c.l2sq, np.sum(a ** 2), rtol=1e-12)
    assert np.isclose(c.l4, np.sum(a ** 4), rtol=1e-12)
    assert np.isclose(c.l6, np.sum(a ** 6), rtol=1e-12)
    assert np.isclose(c.l8, np.sum(a ** 8), rtol=1e-12)
    assert c.linf == np.max(np.abs(a))
    assert c.l4 <= c.linf ** 2 * c.l2sq * (1 + 1e-12)


# --- sampling ------------------------------------------------------------------

def test_sample_components_deterministic():
    a = sample_components(4, 6, 7)
    b = sample_components(4, 6, 7)
    assert np.array_equal(a.A, b.A)
    assert np.array_equal(sample_components(2, 1, 0).A, sample_components(2, 1, 0).A)
    with pytest.raises(ValueError):
        sample_components(1, 5, 0)
    with pytest.raises(ValueError):
        sample_components(3, 0, 0)


def test_sample_components_variance():
    # 40000 N(0,1): the chi-square 1e-6 band on the variance is about +-0.03
    A = sample_components(100, 400, 1).A
    assert 0.95 <= A.var() <= 1.05
    assert abs(A.mean()) < 0.03


# --- evaluation ------------------------------------------------------------------

def test_correlations_examples():
    assert np.allclose(correlations(np.eye(2), [1.0, 0.0]).alpha, [1, 0])
    A = np.array([[3.0], [4.0]])
    assert correlations(A, [0.0, 1.0]).alpha[0] == 4.0
    with pytest.raises(ValueError):
        correlations(np.eye(3), [1.0, 0.0])


def test_correlations_match_loop():
    rng = make_rng(2, "loop")
    A = rng.standard_normal((15, 40))
    x = _unit(rng, 15)
    loop = [sum(A[r, i] * x[r] for r in range(15)) for i in range(40)]
    assert np.max(np.abs(correlations(A, x).alpha - loop)) < 1e-14 * 40


def test_objective_single_component():
    a = np.array([[1.0], [2.0], [2.0]])
    assert np.isclose(eval_objective(a, SpherePoint(a[:, 0])), 81.0)


def test_dense_oracle_examples():
    assert dense_tensor_eval(np.array([[1.0], [0.0]]), [1.0, 0.0]) == 1.0
    with pytest.raises(ValueError):
        dense_tensor_eval(np.ones((13, 2)), np.ones(13))
    with pytest.raises(ValueError):
        dense_tensor_eval(np.ones((3, 2)), np.ones(4))


@given(seeds, st.integers(2, 6), st.integers(1, 12))
@settings(max_examples=60, deadline=None)
def test_objective_matches_dense(seed, d, n):
    rng = make_rng(seed, "dense")
    A = rng.standard_normal((d, n))
    x = _unit(rng, d)
    f = eval_objective(A, x)
    assert abs(f - dense_tensor_eval(A, x)) <= 1e-10 * max(1.0, f)


@given(seeds)
@settings(max_examples=30, deadline=None)
def test_objective_even(seed):
    rng = make_rng(seed, "even")
    A = rng.standard_normal((7, 11))
    x = _unit(rng, 7)
    assert eval_objective(A, x) == eval_objective(A, -x)


# --- derivatives ---------------------------------------------------------------

def test_gradient_zero_at_single_component():
    a = np.array([[1.0], [2.0], [2.0]])
    assert np.allclose(riemannian_gradient(a, a[:, 0] / 3), 0, atol=1e-12)


@given(seeds, st.integers(2, 25), st.integers(1, 60))
@settings(max_examples=60, deadline=None)
def test_gradient_tangent_and_scaling(seed, d, n):
    rng = make_rng(seed, "g")
    A = rng.standard_normal((d, n))
    x = _unit(rng, d)
    g = riemannian_gradient(A, x, "objective")
    gc = riemannian_gradient(A, x, "quarter")
    assert abs(g @ x) <= 1e-10 * max(1.0, np.linalg.norm(g))
    assert np.allclose(g, 4 * gc, rtol=1e-14, atol=0)
    amb = ambient_gradient(A, x)
    assert np.allclose(g, amb - (amb @ x) * x, rtol=1e-10, atol=1e-10 * np.linalg.norm(amb))


def test_gradient_finite_difference():
    h = 1e-5
    for s in range(10):
        rng = make_rng(s, "fd")
        A = rng.standard_normal((20, 100))
        x = _unit(rng, 20)
        g = riemannian_gradient(A, x)
        for _ in range(5):
            xi = _tangent(rng, x)
            fd = (eval_objective(A, _geo(x, xi, h)) - eval_objective(A, _geo(x, xi, -h))) / (2 * h)
            assert abs(fd - g @ xi) <= 1e-6 * max(abs(fd), np.linalg.norm(g))


def test_hessian_single_component():
    a = np.array([[1.0], [2.0], [2.0]])
    x = a[:, 0] / 3
    H = riemannian_hessian(a, x, "quarter")
    P = np.eye(3) - np.outer(x, x)
    assert np.allclose(H, -81 * P, atol=1e-10)


@given(seeds, st.integers(2, 20), st.integers(1, 50))
@settings(max_examples=50, deadline=None)
def test_hessian_invariants(seed, d, n):
    rng = make_rng(seed, "h")
    A = rng.standard_normal((d, n))
    x = _unit(rng, d)
    H = riemannian_hessian(A, x)
    sc = max(1.0, np.abs(H).max())
    assert np.linalg.norm(H - H.T) < 1e-12 * sc
    assert np.linalg.norm(H @ x) < 1e-10 * sc
    assert np.allclose(H, 4 * riemannian_hessian(A, x, "quarter"), rtol=1e-13, atol=0)


def test_hessian_finite_difference():
    h = 1e-4
    for s in range(10):
        rng = make_rng(s, "fdh")
        A = rng.standard_normal((20, 100))
        x = _unit(rng, 20)
        H = riemannian_hessian(A, x)
        f0 = eval_objective(A, x)
        for _ in range(5):
            xi = _tangent(rng, x)
            fd = (eval_objective(A, _geo(x, xi, h)) - 2 * f0
                  + eval_objective(A, _geo(x, xi, -h))) / h ** 2
            q = xi @ H @ xi
            assert abs(fd - q) <= 1e-4 * max(abs(q), np.abs(H).max())


def test_matvec_matches_dense():
    rng = make_rng(3, "mv")
    A = rng.standard_normal((20, 80))
    x = _unit(rng, 20)
    H = riemannian_hessian(A, x)
    for _ in range(5):
        xi = _tangent(rng, x)
        assert np.allclose(hessian_matvec(A, x, xi), H @ xi, rtol=0,
                           atol=1e-10 * np.abs(H).max())
    assert np.allclose(hessian_matvec(A, x, np.zeros(20)), 0)
    with pytest.raises(ValueError):
        hessian_matvec(A, x, x)


def test_matvec_large_instance_runs():
    rng = make_rng(4, "mv-large")
    A = rng.standard_normal((200, 800))
    x = _unit(rng, 200)
    xi = _tangent(rng, x)
    v = hessian_matvec(A, x, xi)
    assert abs(v @ x) < 1e-8 * np.linalg.norm(v)


def test_matfree_eigmax_matches_dense():
    rng = make_rng(5, "eig")
    A = rng.standard_normal((20, 60))
    x = _unit(rng, 20)
    dense = tangent_eigmax(A, x, method="dense")
    mf = tangent_eigmax(A, x, method="matfree")
    assert abs(dense - mf) <= 1e-6 * max(1.0, abs(dense))


def test_to_tangent():
    x = np.array([1.0, 0.0, 0.0])
    assert np.allclose(to_tangent(x, [0.0, 1.0, 2.0]), [0, 1, 2])
    assert np.allclose(to_tangent(x, [1e-12, 1.0, 0.0]), [0, 1, 0])
    with pytest.raises(ValueError):
        to_tangent(x, [0.5, 1.0, 0.0])


@given(seeds)
@settings(max_examples=20, deadline=None)
def test_random_point_law(seed):
    # f at a fixed x over resampled A has mean 3n; one draw stays in a wide band
    rng = make_rng(seed, "law")
    n = 400
    A = rng.standard_normal((10, n))
    f = eval_objective(A, np.eye(10)[0])
    assert abs(f - 3 * n) < 8 * np.sqrt(96 * n)


# --- file format ------------------------------------------------------------------

def test_csv_roundtrip_bitwise(tmp_path):
    A = sample_components(4, 6, 7)
    p = tmp_path / "c.csv"
    write_components(p, A)
    B = read_components(p)
    assert np.array_equal(A.A, B.A)
    assert p.read_text().splitlines()[0] == "4,6"


@given(st.lists(st.floats(allow_nan=False, allow_infinity=False, width=64), min_size=4,
                max_size=4))
@settings(max_examples=50, deadline=None)
def test_csv_roundtrip_any_floats(tmp_path_factory, vals):
    p = tmp_path_factory.mktemp("rt") / "c.csv"
    A = np.array(vals).reshape(2, 2)
    write_components(p, A)
    assert np.array_equal(read_components(p).A, A)


def test_csv_errors_name_line(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("2,2\n1.0,2.0\n1.0,oops\n")
    with pytest.raises(ValueError, match=":3:"):
        read_components(p)
    p.write_text("2,2\n1.0,2.0\n1.0\n")
    with pytest.raises(ValueError, match=":3:"):
        read_components(p)
    p.write_text("x\n")
    with pytest.raises(ValueError, match=":1:"):
        read_components(p)
    p.write_text("")
    with pytest.raises(ValueError):
        read_components(p)
