"""Ascent on the unit sphere, local-maximum certificates, recovery and census.

Two update rules are available:

* ``power``: x <- grad f(x) / ||grad f(x)|| with the ambient gradient. Since
  f is convex in R^d this never decreases f.
* ``gradient``: x <- (x + eta * grad) / ||x + eta * grad|| with the sphere
  gradient (metric-projection retraction).

Both stop once the sphere gradient norm (objective normalization) drops
below ``grad_tol``. When the gradient norm stops improving for
``perturb_every`` iterations a small tangent Gaussian kick is injected, and
an endpoint whose Hessian still has a positive tangent eigenvalue is kicked
off the saddle a bounded number of times.
"""
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, asdict

import numpy as np
from scipy.sparse.linalg import LinearOperator, eigsh

from .rng import make_rng
from .tensor_core import (
    SpherePoint, _mat, _vec, _check_norm, eval_objective,
    riemannian_gradient, riemannian_hessian, hessian_matvec,
)

__all__ = [
    "OptimizerConfig", "AscentSummary", "Certificate", "RecoveredPoint",
    "RecoveryResult", "CensusRow", "CensusResult", "ContractionReport",
    "CapReport", "ZeroGradientError", "power_step", "ascend", "best_of_init",
    "tangent_eigmax", "certify", "recover_all", "basin_census",
    "contraction_probe", "cap_concavity_check", "cluster_points",
]

_DENSE_MAX_D = 400


class ZeroGradientError(ValueError):
    """The ambient gradient vanishes, so the power map is undefined."""


@dataclass(frozen=True)
class OptimizerConfig:
    """Settings for :func:`ascend` and the restart drivers.

    ``step_size`` and ``grad_tol`` left as None are resolved per instance:
    eta = 1 / (4 max_i ||a_i||^4) and grad_tol = 1e-9 d^2.
    """

    method: str = "power"
    step_size: float | None = None
    max_iters: int = 5000
    grad_tol: float | None = None
    eig_tol: float = 0.0
    perturb_scale: float = 1e-3
    perturb_every: int = 50
    init_probes: int = 1
    zeta: float = 0.1
    gamma: float = 10.0
    escape_saddles: bool = True
    max_escapes: int = 5
    dedup_corr: float = 0.9
    cover_corr: float = 0.99
    cluster_corr: float = 0.99
    deflation: bool = False
    budget: int | None = None

    def __post_init__(self):
        if self.method not in ("power", "gradient"):
            raise ValueError(f"method must be 'power' or 'gradient', got {self.method!r}")
        if self.step_size is not None and not self.step_size > 0:
            raise ValueError(f"step_size must be positive, got {self.step_size}")
        if self.grad_tol is not None and not self.grad_tol > 0:
            raise ValueError(f"grad_tol must be positive, got {self.grad_tol}")
        if self.init_probes < 1:
            raise ValueError("init_probes must be >= 1")
        if self.max_iters < 1 or self.perturb_every < 1:
            raise ValueError("max_iters and perturb_every must be >= 1")
        if self.perturb_scale < 0:
            raise ValueError("perturb_scale must be >= 0")
        if self.budget is not None and self.budget < 1:
            raise ValueError("budget must be >= 1")

    def resolved_grad_tol(self, d):
        return self.grad_tol if self.grad_tol is not None else 1e-9 * d * d

    def resolved_step(self, A):
        if self.step_size is not None:
            return self.step_size
        return 1.0 / (4.0 * float(np.max(np.sum(A * A, axis=0)) ** 2))


@dataclass
class AscentSummary:
    iterations: int
    converged: bool
    grad_norm: float
    f_trace: np.ndarray
    perturbations: int
    escapes: int
    monotone_violations: int
    step_size: float | None


# --- weighted objective used by deflation ---------------------------------

def _ambient_grad(C, w, x):
    g = C.T @ x
    return 4.0 * (C @ (w * g ** 3))


def _weighted_f(C, w, x):
    return float(w @ (C.T @ x) ** 4)


def _weighted_sphere_grad(C, w, x):
    g = _ambient_grad(C, w, x)
    return g - (x @ g) * x


def _weighted_hessian(C, w, x):
    g = C.T @ x
    B = C - np.outer(x, g)
    P = np.eye(C.shape[0]) - np.outer(x, x)
    H = 3.0 * (B * (w * g ** 2)) @ B.T - float(w @ g ** 4) * P
    return 4.0 * 0.5 * (H + H.T)


def _deflated(A, deflate):
    """Stack components with negative weights for the peeled-off points."""
    A = _mat(A)
    w = np.ones(A.shape[1])
    if deflate is None or len(deflate[1]) == 0:
        return A, w
    Xh, lam = deflate
    Xh = np.asarray(Xh, dtype=float).reshape(A.shape[0], -1)
    return np.hstack([A, Xh]), np.concatenate([w, -np.asarray(lam, dtype=float)])


# --- single steps and runs -------------------------------------------------

def power_step(A, x):
    """One power iteration: normalized ambient gradient 4 sum alpha_i^3 a_i."""
    A = _mat(A)
    x = _vec(x, A.shape[0])
    g = A @ (A.T @ x) ** 3
    nrm = np.linalg.norm(g)
    if nrm == 0.0 or not np.isfinite(nrm):
        raise ZeroGradientError("ambient gradient is zero at x")
    return SpherePoint(g / nrm)


def _tangent_noise(rng, x, scale):
    v = rng.standard_normal(x.shape[0])
    v -= (x @ v) * x
    nv = np.linalg.norm(v)
    return v * (scale / nv) if nv > 0 else v


def ascend(A, x0, config=None, rng=None, deflate=None):
    """Run power or gradient ascent from ``x0``.

    Parameters
    ----------
    A : ComponentSet or ndarray
    x0 : SpherePoint or array
    config : OptimizerConfig
    rng : numpy Generator, optional
        Source of the perturbation noise.
    deflate : (ndarray, ndarray), optional
        Points x_hat (d x m) and weights lambda; the objective becomes
        f(x) - sum_j lambda_j <x_hat_j, x>^4. Deflated runs always use the
        gradient rule since the deflated objective is not convex.

    Returns
    -------
    summary : AscentSummary
    x : SpherePoint
    """
    config = config or OptimizerConfig()
    A = _mat(A)
    d = A.shape[0]
    x = _vec(SpherePoint(x0), d).copy()
    rng = rng if rng is not None else make_rng(0, "ascend")
    C, w = _deflated(A, deflate)
    deflating = C.shape[1] != A.shape[1]
    method = "gradient" if deflating else config.method
    tol = config.resolved_grad_tol(d)
    eta = config.resolved_step(A) if method == "gradient" else None

    f_trace = [_weighted_f(C, w, x)]
    best, since = np.inf, 0
    n_pert = n_esc = n_viol = 0
    kicked = False
    converged = False
    it = 0
    gn = np.inf
    for it in range(config.max_iters + 1):
        g = _weighted_sphere_grad(C, w, x)
        gn = float(np.linalg.norm(g))
        if gn <= tol:
            if config.escape_saddles and n_esc < config.max_escapes:
                H = _weighted_hessian(C, w, x)
                if _eigmax_dense(H, x) > config.eig_tol:
                    x = x + _tangent_noise(rng, x, config.perturb_scale)
                    x /= np.linalg.norm(x)
                    n_esc += 1
                    kicked = True
                    best, since = np.inf, 0
                    f_trace.append(_weighted_f(C, w, x))
                    continue
            converged = True
            break
        if it == config.max_iters:
            break
        if gn < 0.999 * best:
            best, since = gn, 0
        else:
            since += 1
        if method == "power":
            y = _ambient_grad(C, w, x)
            ny = np.linalg.norm(y)
            if ny == 0.0:
                raise ZeroGradientError("ambient gradient is zero during ascent")
            x_new = y / ny
        else:
            x_new = x + eta * g
            x_new /= np.linalg.norm(x_new)
        if since >= config.perturb_every and config.perturb_scale > 0:
            x_new = x_new + _tangent_noise(rng, x_new, config.perturb_scale)
            x_new /= np.linalg.norm(x_new)
            n_pert += 1
            since = 0
            best = np.inf
            kicked = True
        f_new = _weighted_f(C, w, x_new)
        if not kicked and f_new < f_trace[-1] - 1e-12 * max(1.0, abs(f_trace[-1])):
            n_viol += 1
        kicked = False
        f_trace.append(f_new)
        x = x_new

    summary = AscentSummary(
        iterations=it, converged=converged, grad_norm=gn,
        f_trace=np.asarray(f_trace), perturbations=n_pert, escapes=n_esc,
        monotone_violations=n_viol, step_size=eta,
    )
    return summary, SpherePoint(x)


def _uniform_sphere(rng, d, m):
    X = rng.standard_normal((m, d))
    return X / np.linalg.norm(X, axis=1, keepdims=True)


def best_of_init(A, m, zeta, seed, stream=("init",)):
    """Best of ``m`` uniform probes, if it clears f >= 3(1+zeta)n.

    Returns None when no probe qualifies.
    """
    A = _mat(A)
    if m < 1:
        raise ValueError("m must be >= 1")
    d, n = A.shape
    X = _uniform_sphere(make_rng(seed, *stream), d, int(m))
    fv = (((X @ A) ** 2) ** 2).sum(axis=1)
    j = int(np.argmax(fv))
    if fv[j] >= 3.0 * (1.0 + zeta) * n:
        return SpherePoint(X[j])
    return None


# --- certification ---------------------------------------------------------

def _eigmax_dense(H, x):
    # x is an exact null vector of H; push it far below the spectrum
    s = float(np.linalg.norm(H)) + 1.0
    return float(np.linalg.eigvalsh(H - s * np.outer(x, x))[-1])


def tangent_eigmax(A, x, normalization="objective", method="auto"):
    """Largest eigenvalue of the Riemannian Hessian restricted to x-perp.

    ``method="dense"`` uses a full eigensolve; ``"matfree"`` runs Lanczos on
    the Hessian-vector product with the normal direction shifted away.
    ``"auto"`` picks dense for d <= 400.
    """
    A = _mat(A)
    x = _vec(x, A.shape[0])
    d = A.shape[0]
    if method == "auto":
        method = "dense" if d <= _DENSE_MAX_D else "matfree"
    if method == "dense":
        return _eigmax_dense(riemannian_hessian(A, x, normalization), x)
    if method != "matfree":
        raise ValueError(f"unknown eigen method {method!r}")
    scale = _check_norm(normalization)
    # crude bound on the spectrum to size the shift
    shift = scale * (3.0 * float(np.sum(A * A, axis=0).max()) * float(np.sum((A.T @ x) ** 2))
                     + float(np.sum((A.T @ x) ** 4))) + 1.0

    def mv(v):
        v = np.ravel(v)
        t = v - (x @ v) * x
        return hessian_matvec(A, x, t, normalization) - shift * (x @ v) * x

    op = LinearOperator((d, d), matvec=mv, dtype=float)
    v0 = np.ones(d) / np.sqrt(d)
    vals = eigsh(op, k=1, which="LA", v0=v0, tol=1e-12, maxiter=20 * d,
                 return_eigenvectors=False)
    return float(vals[0])


@dataclass
class Certificate:
    """First- and second-order evidence about a point on the sphere."""

    x: np.ndarray
    f_value: float
    grad_norm: float
    hess_eigmax: float
    nearest_index: int
    sign: int
    correlation: float
    euclidean_distance: float
    in_L1: bool
    grad_tol: float
    eig_tol: float
    normalization: str = "objective"

    @property
    def certified(self):
        return bool(self.grad_norm <= self.grad_tol and self.hess_eigmax <= self.eig_tol)

    def to_dict(self):
        out = asdict(self)
        out["x"] = [float(v) for v in self.x]
        out["certified"] = self.certified
        return out


def certify(A, x, grad_tol=None, eig_tol=0.0, gamma=10.0, normalization="objective",
            eig_method="auto"):
    """Certificate for ``x``: gradient, top tangent eigenvalue, nearest component.

    ``grad_tol`` defaults to 1e-9 d^2. ``f_value`` and L1 membership
    (f >= 3n + gamma sqrt(nd)) always use the un-normalized objective.
    """
    A = _mat(A)
    x = _vec(SpherePoint(x), A.shape[0])
    d, n = A.shape
    tol = 1e-9 * d * d if grad_tol is None else grad_tol
    f = eval_objective(A, x)
    gn = float(np.linalg.norm(riemannian_gradient(A, x, normalization)))
    lam = tangent_eigmax(A, x, normalization, eig_method)
    U = A / np.linalg.norm(A, axis=0)
    c = U.T @ x
    k = int(np.argmax(np.abs(c)))
    s = 1 if c[k] >= 0 else -1
    dist = float(np.linalg.norm(x - s * U[:, k]))
    return Certificate(
        x=x.copy(), f_value=f, grad_norm=gn, hess_eigmax=lam, nearest_index=k,
        sign=s, correlation=float(abs(c[k])), euclidean_distance=dist,
        in_L1=bool(f >= 3 * n + gamma * np.sqrt(n * d)), grad_tol=float(tol),
        eig_tol=float(eig_tol), normalization=normalization,
    )


def _certify_weighted(C, w, x, tol, eig_tol):
    gn = float(np.linalg.norm(_weighted_sphere_grad(C, w, x)))
    lam = _eigmax_dense(_weighted_hessian(C, w, x), x)
    return gn <= tol and lam <= eig_tol


# --- restart drivers -------------------------------------------------------

def _start_point(A, config, seed, stream):
    d, n = A.shape
    rng = make_rng(seed, *stream, "start")
    X = _uniform_sphere(rng, d, config.init_probes)
    if config.init_probes == 1:
        return X[0]
    fv = (((X @ A) ** 2) ** 2).sum(axis=1)
    # fall back to the best probe when none clears the superlevel threshold
    return X[int(np.argmax(fv))]


def _restart_task(args):
    A, config, seed, label, r = args
    x0 = _start_point(A, config, seed, (label, r))
    summ, xp = ascend(A, x0, config, rng=make_rng(seed, label, r, "noise"))
    cert = certify(A, xp, config.resolved_grad_tol(A.shape[0]), config.eig_tol, config.gamma)
    return r, summ.converged, summ.iterations, cert


def _pmap(fn, tasks, workers):
    if workers is None or workers <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, tasks, chunksize=max(1, len(tasks) // (8 * workers))))


@dataclass
class RecoveredPoint:
    sign: int
    index: int
    x: np.ndarray
    distance: float
    correlation: float
    f_value: float
    restart: int
    certificate: Certificate


@dataclass
class RecoveryResult:
    found: list
    coverage: float
    covered: list
    restarts_used: int
    partial: bool
    n_certified: int
    n_uncertified: int
    deflation: bool

    def to_dict(self):
        return {
            "coverage": self.coverage, "covered": list(self.covered),
            "restarts_used": self.restarts_used, "partial": self.partial,
            "n_certified": self.n_certified, "n_uncertified": self.n_uncertified,
            "deflation": self.deflation,
            "found": [
                {"sign": p.sign, "index": p.index, "distance": p.distance,
                 "correlation": p.correlation, "f_value": p.f_value,
                 "restart": p.restart, "x": [float(v) for v in p.x]}
                for p in self.found
            ],
        }


def recover_all(A, config=None, seed=0, budget=None, workers=1):
    """Restart-and-deduplicate recovery of the components.

    Every restart ascends from a fresh seeded start and certifies its
    endpoint. A certified endpoint is kept unless it has |correlation| >=
    ``config.dedup_corr`` with an already kept point. Component i counts as
    covered when a kept point has correlation >= ``config.cover_corr`` with
    abar_i (either sign). Stops when every component is covered or the
    restart budget (default 50 n) runs out.

    With ``config.deflation`` each kept point x_j is subtracted from the
    objective with weight f(x_j) before the next restart; certification is
    then done on the deflated objective. Deflated runs are sequential.
    """
    config = config or OptimizerConfig()
    A = _mat(A)
    d, n = A.shape
    budget = budget or config.budget or 50 * n
    tol = config.resolved_grad_tol(d)
    found, covered = [], set()
    n_cert = n_unc = 0
    used = 0

    def consider(r, cert, certified):
        nonlocal n_cert, n_unc
        if not certified:
            n_unc += 1
            return False
        n_cert += 1
        if any(abs(float(p.x @ cert.x)) >= config.dedup_corr for p in found):
            return False
        found.append(RecoveredPoint(cert.sign, cert.nearest_index, cert.x,
                                    cert.euclidean_distance, cert.correlation,
                                    cert.f_value, r, cert))
        if cert.correlation >= config.cover_corr:
            covered.add(cert.nearest_index)
        return True

    if config.deflation:
        for r in range(budget):
            used = r + 1
            Xh = np.array([p.x for p in found]).T if found else np.zeros((d, 0))
            lam = np.array([p.f_value for p in found])
            x0 = _start_point(A, config, seed, ("recover", r))
            _, xp = ascend(A, x0, config, rng=make_rng(seed, "recover", r, "noise"),
                           deflate=(Xh, lam))
            C, w = _deflated(A, (Xh, lam))
            ok = _certify_weighted(C, w, xp.x, tol, config.eig_tol)
            cert = certify(A, xp, tol, config.eig_tol, config.gamma)
            consider(r, cert, ok)
            if len(covered) == n:
                break
    else:
        chunk = max(1, 4 * (workers or 1))
        r0 = 0
        done = False
        while r0 < budget and not done:
            tasks = [(A, config, seed, "recover", r) for r in range(r0, min(budget, r0 + chunk))]
            for r, _, _, cert in _pmap(_restart_task, tasks, workers):
                used = r + 1
                consider(r, cert, cert.certified)
                if len(covered) == n:
                    done = True
                    break
            r0 += chunk

    return RecoveryResult(
        found=found, coverage=len(covered) / n, covered=sorted(covered),
        restarts_used=used, partial=len(covered) < n, n_certified=n_cert,
        n_uncertified=n_unc, deflation=bool(config.deflation),
    )


# --- census ----------------------------------------------------------------

def cluster_points(X, threshold=0.99, atom_tol=1e-8):
    """Single-linkage clusters of unit vectors at signed correlation >= threshold.

    Points are first merged into atoms (correlation >= 1 - atom_tol) so that
    thousands of endpoints of the same maximum cost one comparison; linkage
    is then exact on the atom representatives.

    Returns
    -------
    labels : ndarray of int
        Cluster label per input row, numbered by first appearance.
    transitive : bool
        Whether every pair of atoms inside each cluster also clears the
        threshold (the clusters are then cliques).
    """
    X = np.asarray(X, dtype=float)
    m = X.shape[0]
    if m == 0:
        return np.zeros(0, dtype=int), True
    reps, atom = [], np.empty(m, dtype=int)
    for i in range(m):
        if reps:
            c = np.asarray(reps) @ X[i]
            j = int(np.argmax(c))
            if c[j] >= 1.0 - atom_tol:
                atom[i] = j
                continue
        reps.append(X[i])
        atom[i] = len(reps) - 1
    R = np.asarray(reps)
    G = R @ R.T
    parent = list(range(len(reps)))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    ii, jj = np.nonzero(np.triu(G >= threshold, k=1))
    for a, b in zip(ii, jj):
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)
    roots = np.array([find(a) for a in range(len(reps))])
    transitive = True
    for r in np.unique(roots):
        idx = np.nonzero(roots == r)[0]
        if len(idx) > 1 and G[np.ix_(idx, idx)].min() < threshold:
            transitive = False
    order, labels = {}, np.empty(m, dtype=int)
    for i in range(m):
        r = roots[atom[i]]
        labels[i] = order.setdefault(r, len(order))
    return labels, transitive


@dataclass
class CensusRow:
    cluster_id: int
    sign: int
    nearest_index: int
    correlation: float
    distance: float
    f_value: float
    grad_norm: float
    hess_eigmax: float
    in_L1: bool
    hits: int


CENSUS_COLUMNS = ("cluster_id", "sign", "nearest_index", "correlation", "distance",
                  "f_value", "grad_norm", "hess_eigmax", "in_L1", "hits")


@dataclass
class CensusResult:
    rows: list
    restarts: int
    n_certified: int
    n_uncertified: int
    n_unconverged: int
    transitive: bool
    certificates: list = field(repr=False, default_factory=list)

    @property
    def n_clusters(self):
        return len(self.rows)

    def to_csv(self, path):
        with open(path, "w", encoding="ascii", newline="\n") as fh:
            fh.write(",".join(CENSUS_COLUMNS) + "\n")
            for r in self.rows:
                vals = [getattr(r, c) for c in CENSUS_COLUMNS]
                fh.write(",".join(_fmt(v) for v in vals) + "\n")

    def summary(self):
        return {
            "restarts": self.restarts, "n_clusters": self.n_clusters,
            "n_certified": self.n_certified, "n_uncertified": self.n_uncertified,
            "n_unconverged": self.n_unconverged, "transitive": self.transitive,
            "n_clusters_in_L1": sum(r.in_L1 for r in self.rows),
        }


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return format(float(v), ".17g")


def basin_census(A, restarts, config=None, seed=0, workers=1):
    """Ascend from ``restarts`` uniform starts and tabulate distinct maxima.

    Restart r uses the streams ``(seed, "census", r, ...)`` so the table does
    not depend on ``workers``. Only certified endpoints are clustered.
    """
    if restarts < 1:
        raise ValueError("restarts must be >= 1")
    config = config or OptimizerConfig()
    A = _mat(A)
    tasks = [(A, config, seed, "census", r) for r in range(int(restarts))]
    results = _pmap(_restart_task, tasks, workers)
    certs = [c for _, _, _, c in results if c.certified]
    n_unconv = sum(1 for _, conv, _, _ in results if not conv)
    X = np.array([c.x for c in certs]) if certs else np.zeros((0, A.shape[0]))
    labels, transitive = cluster_points(X, config.cluster_corr)
    rows = []
    for cid in range(labels.max() + 1 if len(labels) else 0):
        members = np.nonzero(labels == cid)[0]
        rep = certs[max(members, key=lambda i: certs[i].f_value)]
        rows.append(CensusRow(
            cluster_id=cid, sign=rep.sign, nearest_index=rep.nearest_index,
            correlation=rep.correlation, distance=rep.euclidean_distance,
            f_value=rep.f_value, grad_norm=rep.grad_norm, hess_eigmax=rep.hess_eigmax,
            in_L1=rep.in_L1, hits=int(len(members)),
        ))
    return CensusResult(rows=rows, restarts=int(restarts), n_certified=len(certs),
                        n_uncertified=len(results) - len(certs), n_unconverged=n_unconv,
                        transitive=transitive, certificates=certs)


# --- local analysis probes -------------------------------------------------

@dataclass
class ContractionReport:
    ratio_before: float
    ratio_after: float
    bound_rhs: float
    c1: float
    c2: float
    leading_index: int
    applicable: bool
    holds: bool | None


def contraction_probe(A, x, c_pow=1.0):
    """Tangent-to-radial ratios around the most correlated component.

    ratio = ||P_{abar_1 perp} v|| / |<v, abar_1>| for v = x (before) and
    v = ambient gradient at x (after). The bound is
    0.75 * ratio_before + c_pow sqrt(nd) log(d)^4 / (|c1|^3 d^2).
    ``applicable`` is the precondition 0.99 > |c1| > sqrt(2) |c2|; when it
    fails the ratios are still reported but ``holds`` is None.
    """
    A = _mat(A)
    x = _vec(SpherePoint(x), A.shape[0])
    d, n = A.shape
    U = A / np.linalg.norm(A, axis=0)
    c = U.T @ x
    order = np.argsort(-np.abs(c), kind="stable")
    k = int(order[0])
    c1 = float(abs(c[k]))
    c2 = float(abs(c[order[1]])) if n > 1 else 0.0
    if c1 < 1e-12:
        raise ValueError("leading correlation is numerically zero")
    u = U[:, k]

    def ratio(v):
        r = float(u @ v)
        return float(np.linalg.norm(v - r * u)) / abs(r)

    y = A @ (A.T @ x) ** 3
    before, after = ratio(x), ratio(y)
    rhs = 0.75 * before + c_pow * np.sqrt(n * d) * np.log(d) ** 4 / (c1 ** 3 * d ** 2)
    applicable = bool(0.99 > c1 > np.sqrt(2.0) * c2)
    return ContractionReport(before, after, float(rhs), c1, c2, k, applicable,
                             bool(after < rhs) if applicable else None)


@dataclass
class CapReport:
    max_eigmax: float
    eigmax: np.ndarray
    midpoint_eigmax: np.ndarray
    threshold: float
    index: int


def cap_concavity_check(A, k, samples, seed, threshold=0.99, normalization="objective"):
    """Largest tangent Hessian eigenvalue over the cap <x, abar_k> >= threshold.

    Random points are x = t abar_k + sqrt(1 - t^2) u with t uniform on
    [threshold, 1] and u uniform on the unit sphere of abar_k-perp. Midpoints
    (abar_k +- abar_j)/||.|| that fall inside the cap are evaluated as well,
    since saddles sit near them.
    """
    A = _mat(A)
    d, n = A.shape
    if d > _DENSE_MAX_D:
        raise ValueError("cap check uses dense eigensolves (d <= 400)")
    U = A / np.linalg.norm(A, axis=0)
    u0 = U[:, k]
    rng = make_rng(seed, "cap", int(k))
    vals = np.empty(int(samples))
    for s in range(int(samples)):
        t = rng.uniform(threshold, 1.0)
        v = rng.standard_normal(d)
        v -= (u0 @ v) * u0
        v /= np.linalg.norm(v)
        x = t * u0 + np.sqrt(max(0.0, 1.0 - t * t)) * v
        vals[s] = tangent_eigmax(A, x / np.linalg.norm(x), normalization)
    mids = []
    for j in range(n):
        if j == k:
            continue
        for sgn in (1.0, -1.0):
            m = u0 + sgn * U[:, j]
            nm = np.linalg.norm(m)
            if nm > 0 and (u0 @ m) / nm >= threshold:
                mids.append(tangent_eigmax(A, m / nm, normalization))
    mids = np.asarray(mids)
    top = max(vals.max() if vals.size else -np.inf, mids.max() if mids.size else -np.inf)
    return CapReport(float(top), vals, mids, float(threshold), int(k))
