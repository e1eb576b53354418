import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from otl.rng import make_rng
from otl.tensor_core import sample_components, eval_objective, SpherePoint
from otl.sphere_optimizer import (
    OptimizerConfig, ZeroGradientError, power_step, ascend, best_of_init, certify,
    tangent_eigmax, recover_all, basin_census, cluster_points, contraction_probe,
    cap_concavity_check, CENSUS_COLUMNS,
)

seeds = st.integers(0, 2 ** 32)


def _near(u, c, rng):
    v = rng.standard_normal(u.size)
    v -= (u @ v) * u
    v /= np.linalg.norm(v)
    return c * u + np.sqrt(1 - c * c) * v


# --- power step ------------------------------------------------------------------

def test_power_step_single_component():
    a = np.array([[1.0], [2.0], [2.0]])
    u = a[:, 0] / 3
    assert np.allclose(power_step(a, u).x, u)
    y = power_step(a, [1.0, 0.0, 0.0]).x
    assert np.allclose(y, u)


def test_power_step_zero_gradient():
    A = np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]])
    with pytest.raises(ZeroGradientError):
        power_step(A, [0.0, 0.0, 1.0])


def test_power_step_increases_correlation():
    A = sample_components(30, 120, 0)
    u = A.unit_columns[:, 0]
    x = _near(u, 0.8, make_rng(0, "ps"))
    c0 = abs(x @ u)
    c1 = abs(power_step(A, x).x @ u)
    assert c1 > c0


@given(seeds)
@settings(max_examples=30, deadline=None)
def test_power_step_sign_equivariant(seed):
    rng = make_rng(seed, "sgn")
    A = rng.standard_normal((6, 9))
    x = rng.standard_normal(6)
    assert np.allclose(power_step(A, -x).x, -power_step(A, x).x, atol=1e-14)


@given(seeds)
@settings(max_examples=30, deadline=None)
def test_power_step_monotone(seed):
    # f is convex in R^d, so the power map never decreases it on the sphere
    rng = make_rng(seed, "mono")
    A = rng.standard_normal((8, 20))
    x = SpherePoint(rng.standard_normal(8)).x
    assert eval_objective(A, power_step(A, x)) >= eval_objective(A, x) * (1 - 1e-12)


# --- config and ascent -------------------------------------------------------------

def test_config_validation():
    with pytest.raises(ValueError):
        OptimizerConfig(method="gradient", step_size=0.0)
    with pytest.raises(ValueError):
        OptimizerConfig(method="gradient", step_size=-1.0)
    with pytest.raises(ValueError):
        OptimizerConfig(init_probes=0)
    with pytest.raises(ValueError):
        OptimizerConfig(grad_tol=0.0)
    with pytest.raises(ValueError):
        OptimizerConfig(method="newton")


def test_ascend_from_component_stops():
    a = np.array([[1.0], [2.0], [2.0]])
    summ, x = ascend(a, a[:, 0])
    assert summ.converged and summ.iterations == 0
    assert summ.grad_norm < OptimizerConfig().resolved_grad_tol(3)


def test_gradient_ascent_monotone():
    A = sample_components(10, 20, 3)
    cfg = OptimizerConfig(method="gradient", perturb_scale=0.0, max_iters=3000,
                          escape_saddles=False)
    summ, _ = ascend(A, make_rng(0, "x0").standard_normal(10), cfg)
    assert summ.monotone_violations == 0
    assert np.all(np.diff(summ.f_trace) >= -1e-9 * summ.f_trace[-1])
    assert summ.step_size == pytest.approx(1 / (4 * np.max(A.norms) ** 4))


def test_power_and_gradient_agree_on_endpoint():
    A = sample_components(8, 12, 4)
    x0 = make_rng(1, "x0").standard_normal(8)
    _, xp = ascend(A, x0, OptimizerConfig(method="power"))
    _, xg = ascend(A, x0, OptimizerConfig(method="gradient", max_iters=200000))
    assert certify(A, xp).certified and certify(A, xg).certified


def test_ascend_reports_unconverged():
    A = sample_components(20, 60, 0)
    summ, _ = ascend(A, np.ones(20), OptimizerConfig(max_iters=2))
    assert not summ.converged and summ.iterations == 2


def test_ascend_d50_best_init_finds_component():
    A = sample_components(50, 150, 0)
    x0 = best_of_init(A, 200, -1.0, 0)
    summ, x = ascend(A, x0)
    c = certify(A, x)
    assert summ.converged and c.certified
    assert c.correlation >= 0.99


# --- best_of_init -----------------------------------------------------------------

def test_best_of_init_thresholds():
    A = sample_components(30, 300, 0)
    assert best_of_init(A, 1, -1.0, 0) is not None
    # f <= ||alpha||_inf^2 ||alpha||^2 <= max ||a_i||^2 * sum ||a_i||^2
    cap = np.max(A.norms) ** 2 * np.sum(A.norms ** 2)
    assert best_of_init(A, 50, cap / (3 * 300), 0) is None
    with pytest.raises(ValueError):
        best_of_init(A, 0, 0.1, 0)


def test_best_of_init_qualification_rate():
    A = sample_components(30, 300, 0)
    hits = [best_of_init(A, 500, 0.1, s) is not None for s in range(20)]
    assert np.mean(hits) >= 0.9


# --- certify -------------------------------------------------------------------------

def test_certify_single_component():
    a = np.array([[1.0], [2.0], [2.0]])
    c = certify(a, a[:, 0], normalization="quarter")
    assert c.certified
    assert c.hess_eigmax == pytest.approx(-81.0)
    assert c.nearest_index == 0 and c.sign == 1 and c.correlation == pytest.approx(1.0)
    c2 = certify(a, -a[:, 0])
    assert c2.sign == -1 and c2.euclidean_distance < 1e-12


def test_certify_saddle_between_components():
    A = sample_components(50, 150, 0)
    U = A.unit_columns
    m = U[:, 0] + U[:, 1]
    c = certify(A, m / np.linalg.norm(m))
    assert c.hess_eigmax > 0 and not c.certified


@pytest.mark.xfail(strict=True, reason="f/d^2 of certified maxima reaches about 2 at d=50: "
                   "f(abar_k) tracks ||a_k||^4, which spreads well beyond the band")
def test_certified_values_in_band():
    A = sample_components(50, 150, 0)
    res = basin_census(A, 40, seed=0)
    f = np.array([r.f_value for r in res.rows]) / 50 ** 2
    assert np.all((0.8 <= f) & (f <= 1.3))


def test_certificate_reverifiable():
    A = sample_components(8, 12, 0)
    res = basin_census(A, 30, seed=1)
    for c in res.certificates:
        assert c.grad_norm <= c.grad_tol and c.hess_eigmax <= c.eig_tol
        again = certify(A, c.x, c.grad_tol, c.eig_tol)
        assert again.certified


# --- recovery ------------------------------------------------------------------------

def test_recover_single_component():
    A = sample_components(5, 1, 0)
    res = recover_all(A, seed=0)
    assert res.coverage == 1.0 and res.restarts_used == 1 and not res.partial


def test_recover_budget_one():
    A = sample_components(8, 10, 0)
    res = recover_all(A, seed=0, budget=1)
    assert res.coverage <= 0.1 and res.partial and res.restarts_used == 1


def test_recover_dedup():
    A = sample_components(10, 15, 2)
    res = recover_all(A, seed=0, budget=60)
    X = np.array([p.x for p in res.found])
    G = np.abs(X @ X.T)
    np.fill_diagonal(G, 0)
    assert G.max() < OptimizerConfig().dedup_corr


def test_recover_deflation_runs():
    A = sample_components(10, 12, 2)
    res = recover_all(A, OptimizerConfig(deflation=True), seed=0, budget=10)
    assert res.deflation and res.restarts_used <= 10
    assert 0 <= res.coverage <= 1


# --- census ---------------------------------------------------------------------------

def test_census_single_component():
    A = sample_components(6, 1, 0)
    res = basin_census(A, 20, seed=0)
    assert res.n_clusters == 2
    assert {r.sign for r in res.rows} == {1, -1}


def test_census_rejects_zero_restarts():
    with pytest.raises(ValueError):
        basin_census(sample_components(4, 2, 0), 0)


def test_census_independent_of_workers(tmp_path):
    A = sample_components(8, 12, 0)
    a = basin_census(A, 24, seed=3, workers=1)
    b = basin_census(A, 24, seed=3, workers=2)
    a.to_csv(tmp_path / "a.csv")
    b.to_csv(tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    assert (tmp_path / "a.csv").read_text().splitlines()[0] == ",".join(CENSUS_COLUMNS)


@given(seeds, st.integers(1, 40), st.floats(0.5, 0.999))
@settings(max_examples=40, deadline=None)
def test_cluster_labels_are_components_of_link_graph(seed, m, thr):
    rng = make_rng(seed, "clu")
    base = rng.standard_normal((3, 4))
    X = base[rng.integers(0, 3, m)] + 0.3 * rng.standard_normal((m, 4))
    X /= np.linalg.norm(X, axis=1, keepdims=True)
    labels, transitive = cluster_points(X, thr, atom_tol=0.0)
    G = X @ X.T >= thr
    # same label iff connected in the threshold graph
    reach = G.copy()
    for k in range(m):
        reach |= reach[:, [k]] & reach[[k], :]
    assert np.array_equal(labels[:, None] == labels[None, :], reach)
    if transitive:
        assert np.all(G[labels[:, None] == labels[None, :]])


def test_cluster_atoms_merge_duplicates():
    X = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]])
    labels, tr = cluster_points(X)
    assert labels.tolist() == [0, 0, 1, 2] and tr


# --- local probes --------------------------------------------------------------------

def test_contraction_at_component():
    A = sample_components(20, 40, 0)
    r = contraction_probe(A, A.unit_columns[:, 3])
    assert r.ratio_before == pytest.approx(0, abs=1e-12)
    assert r.leading_index == 3
    assert not r.applicable and r.holds is None


def test_contraction_declines_on_tie():
    A = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
    r = contraction_probe(A, [1.0, 1.0, 0.3])
    assert not r.applicable and r.holds is None


def test_contraction_sweep_holds():
    A = sample_components(50, 150, 0)
    U = A.unit_columns
    rng = make_rng(0, "contr")
    applicable = 0
    for s in range(100):
        x = _near(U[:, s % 150], rng.uniform(0.5, 0.99), rng)
        r = contraction_probe(A, x)
        if r.applicable:
            applicable += 1
            assert r.holds, (s, r)
    assert applicable >= 50


def test_contraction_zero_leading():
    A = np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]])
    with pytest.raises(ValueError):
        contraction_probe(A, [0.0, 0.0, 1.0])


def test_cap_single_component():
    A = sample_components(10, 1, 0)
    rep = cap_concavity_check(A, 0, 30, 0)
    assert rep.max_eigmax < 0


def test_cap_largest_norm_component_concave():
    A = sample_components(50, 150, 0)
    k = int(np.argmax(A.norms))
    assert cap_concavity_check(A, k, 200, 0).max_eigmax < 0


@pytest.mark.xfail(strict=True, reason="the 0.99 cap around abar_0 (a mid-norm component) "
                   "contains points with positive curvature, max eigmax about +1.5e3")
def test_cap_first_component_concave():
    A = sample_components(50, 150, 0)
    assert cap_concavity_check(A, 0, 200, 0).max_eigmax < 0


def test_cap_hemisphere_finds_saddles():
    A = sample_components(50, 150, 0)
    assert cap_concavity_check(A, 0, 50, 0, threshold=0.0).max_eigmax > 0
