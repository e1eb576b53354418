"""Monte Carlo for the conditional Hessian ensemble and the Kac-Rice integrand.

Given weights w and a conditioning vector y, the ensemble is

    M = ||w||_4^4 I_{d-1} - 3 Z diag(w^2) Z^T,

where the d-1 rows of Z are independent standard normal vectors in R^n
projected off qbar = y^3 / ||y^3||. At a point with correlations alpha the
negated Hessian given a vanishing gradient has this law with w = y = alpha.

Everything that is a d-th power is carried as a log plus a sign.
"""
from dataclasses import dataclass, field, asdict
import math

import numpy as np
from scipy.special import gammaln, logsumexp
from scipy.stats import binomtest, beta as beta_dist

from .rng import make_rng
from .landscape_probe import EventThresholds, classify_events, Q, _alpha

__all__ = [
    "ConditionalSpec", "sample_conditional_matrix", "sample_conditional_batch",
    "conditional_trace_mean", "TraceMomentReport", "mc_trace_moments",
    "trace_moment_log_bound", "density_at_zero_log", "sphere_log_surface",
    "TValues", "T_values", "is_psd", "PSDReport", "psd_probability",
    "KacRiceEstimate", "estimate_W_log", "HExpectation", "estimate_h_expectation",
    "holder_split_check", "large_entries_check", "wilson_interval", "planted_alpha",
    "DENSITY_CONVENTIONS", "SURFACE_CONVENTIONS",
]

DENSITY_CONVENTIONS = ("exact", "full_dim")
SURFACE_CONVENTIONS = ("surface", "unit_ball", "ball_dm1")
_PSD_FLOOR = 1e-10
_EIG_BATCH_MAX = 50


@dataclass(frozen=True)
class ConditionalSpec:
    """Weights ``w``, conditioning vector ``y`` and ambient dimension ``d``."""

    w: np.ndarray
    y: np.ndarray
    d: int
    qbar: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        w = np.array(self.w, dtype=float).ravel()
        y = np.array(self.y, dtype=float).ravel()
        if w.shape != y.shape or w.size == 0:
            raise ValueError("w and y must be nonempty and of equal length")
        if int(self.d) < 2:
            raise ValueError("d must be >= 2")
        y3 = y ** 3
        ny = np.linalg.norm(y3)
        if ny == 0 or not np.isfinite(ny):
            raise ValueError("y^3 must be nonzero and finite")
        for a in (w, y):
            a.setflags(write=False)
        q = y3 / ny
        q.setflags(write=False)
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "d", int(self.d))
        object.__setattr__(self, "qbar", q)

    @property
    def n(self):
        return self.w.shape[0]

    @property
    def w4(self):
        return float(np.sum(self.w ** 4))


def sample_conditional_batch(spec, rng, size, return_Z=False):
    """Draw ``size`` matrices M (shape size x (d-1) x (d-1)); optionally Z."""
    m, n = spec.d - 1, spec.n
    L = rng.standard_normal((int(size), m, n))
    Z = L - (L @ spec.qbar)[..., None] * spec.qbar
    Y = Z * np.abs(spec.w)
    M = -3.0 * (Y @ np.swapaxes(Y, 1, 2))
    M = 0.5 * (M + np.swapaxes(M, 1, 2))
    M += spec.w4 * np.eye(m)
    return (M, Z) if return_Z else M


def sample_conditional_matrix(spec, rng):
    """One draw of M from the conditional ensemble."""
    return sample_conditional_batch(spec, rng, 1)[0]


def conditional_trace_mean(spec):
    """(d-1)(||w||_4^4 - 3||w||^2 + 3 <y^6, w^2> / ||y||_6^6)."""
    w2 = spec.w ** 2
    y6 = spec.y ** 6
    return (spec.d - 1) * (spec.w4 - 3.0 * w2.sum() + 3.0 * float(y6 @ w2) / float(y6.sum()))


def _trace_draws(spec, rng, size):
    # tr(M) = (d-1)||w||_4^4 - 3 sum_r sum_i Z_ri^2 w_i^2, no need for M itself
    m, n = spec.d - 1, spec.n
    L = rng.standard_normal((int(size), m, n))
    Z = L - (L @ spec.qbar)[..., None] * spec.qbar
    return m * spec.w4 - 3.0 * np.einsum("bri,i->b", Z * Z, spec.w ** 2)


def trace_moment_log_bound(spec, p, epsilon=0.1):
    """Log of max{(1+e)^p |mean|^p, (1/e+1)^p max{4p||w||_inf^2, 2 sqrt(pd) ||w||_4^2}^p}."""
    mu = abs(conditional_trace_mean(spec))
    first = p * math.log((1 + epsilon) * mu) if mu > 0 else -math.inf
    s = max(4 * p * float(np.max(spec.w ** 2)), 2 * math.sqrt(p * spec.d) * math.sqrt(spec.w4))
    second = p * math.log((1 / epsilon + 1) * s) if s > 0 else -math.inf
    return max(first, second)


@dataclass
class TraceMomentReport:
    p: float
    log_estimate: float
    std_err_log: float
    log_bound: float
    holds: bool
    epsilon: float
    n_samples: int

    def to_dict(self):
        return asdict(self)


def _log_mean(logv):
    """Log of the sample mean and delta-method s.e. of that log."""
    logv = np.asarray(logv, dtype=float)
    N = logv.size
    fin = np.isfinite(logv)
    if not fin.any():
        return -math.inf, math.inf
    lm = float(logsumexp(logv[fin]) - math.log(N))
    r = np.where(fin, np.exp(np.where(fin, logv, 0.0) - lm), 0.0)
    se = float(np.std(r, ddof=1) / math.sqrt(N)) if N > 1 else math.inf
    return lm, se


def mc_trace_moments(spec, p, n_samples, seed, epsilon=0.1, chunk=10000):
    """Estimate E|tr M|^p in log domain and compare with the moment bound.

    ``holds`` is False only when the estimate minus three standard errors
    still exceeds the bound.
    """
    if p == 0:
        return TraceMomentReport(0.0, 0.0, 0.0, 0.0, True, epsilon, int(n_samples))
    if p < 1:
        raise ValueError("p must be 0 or >= 1")
    rng = make_rng(seed, "trace-moments")
    parts, left = [], int(n_samples)
    while left > 0:
        b = min(chunk, left)
        parts.append(_trace_draws(spec, rng, b))
        left -= b
    t = np.concatenate(parts)
    with np.errstate(divide="ignore"):
        logv = p * np.log(np.abs(t))
    lm, se = _log_mean(logv)
    lb = trace_moment_log_bound(spec, p, epsilon)
    low = 1.0 - 3.0 * se
    holds = bool(low <= 0 or lm + math.log(low) <= lb)
    return TraceMomentReport(float(p), lm, se, lb, holds, epsilon, int(n_samples))


def density_at_zero_log(alpha, d, convention="exact"):
    """Log density of the conditional gradient at zero.

    The gradient is Gaussian in R^{d-1} with covariance ||alpha||_6^6 I, so
    ``exact`` uses exponent (d-1)/2; ``full_dim`` uses d/2.
    """
    a = _alpha(alpha)
    m6 = float(np.sum(a ** 6))
    if not m6 > 0:
        raise ValueError("density at zero needs ||alpha||_6 > 0")
    if convention == "exact":
        e = (d - 1) / 2.0
    elif convention == "full_dim":
        e = d / 2.0
    else:
        raise ValueError(f"density convention must be one of {DENSITY_CONVENTIONS}")
    return -e * math.log(2 * math.pi * m6)


def sphere_log_surface(d, convention="surface"):
    """Log measure of the unit sphere S^{d-1} under the chosen convention.

    ``surface``      2 pi^{d/2} / Gamma(d/2), the true surface area.
    ``unit_ball``    pi^{d/2} / Gamma(d/2 + 1), which is the ball volume.
    ``ball_dm1``     pi^{(d-1)/2} / Gamma((d+1)/2), the (d-1)-ball volume.
    """
    if d < 2:
        raise ValueError("d must be >= 2")
    if convention == "surface":
        return math.log(2) + 0.5 * d * math.log(math.pi) - float(gammaln(d / 2))
    if convention == "unit_ball":
        return 0.5 * d * math.log(math.pi) - float(gammaln(d / 2 + 1))
    if convention == "ball_dm1":
        return 0.5 * (d - 1) * math.log(math.pi) - float(gammaln((d + 1) / 2))
    raise ValueError(f"surface convention must be one of {SURFACE_CONVENTIONS}")


@dataclass
class TValues:
    log_T1: float
    T2: int
    log_T3: float
    log_T4: float
    P: float
    Q_S: float
    Q_L: float

    @property
    def T1_plus_T2(self):
        return math.exp(self.log_T1) + self.T2

    def to_dict(self):
        out = asdict(self)
        out["T1_plus_T2"] = self.T1_plus_T2
        return out


def _log_ratio_power(q, m6, d):
    # (q^2 / m6)^{d/2} in log domain; zero when q == 0 or the block is empty
    if q == 0 or m6 == 0:
        return -math.inf
    return 0.5 * d * (2 * math.log(abs(q)) - math.log(m6))


def T_values(alpha, thresholds, d):
    """T1..T4 for alpha under the S/L split at sqrt(C log d)."""
    a = _alpha(alpha)
    n = a.size
    small = np.abs(a) <= thresholds.tau_hat(d)
    aS, aL = a[small], a[~small]
    if aS.size == 0:
        raise ValueError("S is empty; T1 and T3 are undefined")
    P = thresholds.P(n, d)
    qS, qL = Q(aS), Q(aL)
    m4S = float(np.sum(aS ** 4))
    log_T1 = -((P - qS) ** 2) / (36.0 * m4S) if m4S > 0 else -math.inf
    if P == qS:
        log_T1 = 0.0
    return TValues(
        log_T1=float(log_T1), T2=int(P <= qS),
        log_T3=_log_ratio_power(qS, float(np.sum(aS ** 6)), d),
        log_T4=_log_ratio_power(qL, float(np.sum(aL ** 6)), d) if aL.size else -math.inf,
        P=P, Q_S=qS, Q_L=qL,
    )


def is_psd(M, rel_tol=_PSD_FLOOR):
    """PSD test: Cholesky of M + floor*I, eigenvalue fallback when disputed.

    The floor is rel_tol times the Frobenius norm (an upper bound on the
    spectral norm). If the shifted factorization succeeds but the unshifted
    one does not, the smallest eigenvalue decides.
    """
    M = np.asarray(M, dtype=float)
    s = float(np.linalg.norm(M))
    if s == 0.0:
        return True
    floor = rel_tol * s
    I = np.eye(M.shape[0])
    try:
        np.linalg.cholesky(M + floor * I)
    except np.linalg.LinAlgError:
        return False
    try:
        np.linalg.cholesky(M - floor * I)
        return True
    except np.linalg.LinAlgError:
        return bool(np.linalg.eigvalsh(M)[0] >= -floor)


def _psd_batch(M):
    """Eigenvalues (ascending) and PSD flags for a stack of matrices."""
    if M.shape[-1] <= _EIG_BATCH_MAX:
        lam = np.linalg.eigvalsh(M)
        scale = np.max(np.abs(lam), axis=1)
        return lam, lam[:, 0] >= -_PSD_FLOOR * scale
    lam = np.linalg.eigvalsh(M)
    return lam, np.array([is_psd(m) for m in M])


def wilson_interval(k, N, level=0.95):
    ci = binomtest(int(k), int(N)).proportion_ci(confidence_level=level, method="wilson")
    return float(ci.low), float(ci.high)


def _cp_upper(k, N, level=0.95):
    """One-sided Clopper-Pearson upper bound."""
    if k >= N:
        return 1.0
    return float(beta_dist.ppf(level, k + 1, N - k))


@dataclass
class PSDReport:
    applicable: bool
    reason: str
    n_samples: int
    count: int = 0
    count_psd: int = 0
    p_hat: float = float("nan")
    ci_low: float = float("nan")
    ci_high: float = float("nan")
    bound: float = float("nan")
    verdict: str = "inapplicable"

    def to_dict(self):
        return asdict(self)


def planted_alpha(n, d, thresholds, seed, stream=("planted",)):
    """Gaussian alpha pushed into a stratum F_k with k >= 1.

    The largest coordinate (in absolute value) is raised to at least
    (2 tau)^{1/4}, keeping its sign, so that alpha_k^4 >= 2 tau and k is the
    argmax. Returns (alpha, k) with k zero-based.
    """
    a = make_rng(seed, *stream).standard_normal(int(n))
    k = int(np.argmax(np.abs(a)))
    t = (2.0 * thresholds.tau(n, d)) ** 0.25
    a[k] = math.copysign(max(abs(a[k]), t), a[k])
    return a, k


def _draw_chunks(spec, rng, n_samples, chunk):
    left = int(n_samples)
    while left > 0:
        b = min(chunk, left)
        yield sample_conditional_batch(spec, rng, b, return_Z=True)
        left -= b


def psd_probability(alpha, d, thresholds, n_samples, seed, require_preconditions=True,
                    chunk=20000):
    """Estimate Pr[M psd and all ||v_i||^2 >= (1-delta)d] with a Wilson CI.

    Compares the interval with T1 + T2. Unless ``require_preconditions`` is
    False, alpha must lie in some F_k (k >= 1) and satisfy E0.
    """
    a = _alpha(alpha)
    th = thresholds
    ev = classify_events(a, th, d)
    if require_preconditions and not (ev.F_index >= 1 and ev.E0):
        why = "F_index = 0" if ev.F_index == 0 else "E0 fails"
        return PSDReport(False, why, int(n_samples))
    spec = ConditionalSpec(a, a, d) if np.any(a != 0) else None
    rng = make_rng(seed, "psd")
    hits = hits_psd = 0
    if spec is None:
        # w = 0: M = 0 is psd and Z has unconditioned rows
        spec0 = ConditionalSpec(np.zeros_like(a), np.ones_like(a), d)
        gen = _draw_chunks(spec0, rng, n_samples, chunk)
    else:
        gen = _draw_chunks(spec, rng, n_samples, chunk)
    for M, Z in gen:
        _, psd = _psd_batch(M)
        e2 = np.all(np.sum(Z * Z, axis=1) >= (1 - th.delta) * d, axis=1)
        hits += int(np.sum(psd & e2))
        hits_psd += int(np.sum(psd))
    lo, hi = wilson_interval(hits, n_samples)
    try:
        bound = T_values(a, th, d).T1_plus_T2
    except ValueError:
        bound = float("nan")
    if not np.isfinite(bound):
        verdict = "no-bound"
    elif hi <= bound:
        verdict = "holds"
    elif lo <= bound:
        verdict = "straddles"
    else:
        verdict = "violated"
    return PSDReport(True, "", int(n_samples), hits, hits_psd, hits / n_samples, lo, hi,
                     float(bound), verdict)


@dataclass
class KacRiceEstimate:
    log_value: float
    sign: int
    std_err_log: float
    n_samples: int
    components: dict
    zero_observed: bool = False
    cp_upper: float | None = None
    log_surrogate: float = -math.inf
    surrogate_std_err_log: float = math.inf
    log_trace_surrogate: float = -math.inf
    n_psd: int = 0
    n_psd_e2: int = 0
    amgm_violations: int = 0
    mode: str = "direct"

    def to_dict(self):
        return _jsonable(asdict(self))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def estimate_W_log(alpha, d, thresholds, n_samples, seed, mode="direct", include_e2=True,
                   stream=("W",), density="exact", surface="surface", chunk=5000,
                   apply_events=True):
    """Log-domain estimate of W(alpha).

    W(alpha) = E[det M 1{M psd} 1{E2'}] 1{E0} 1{E1} 1{E2}. The AM-GM
    surrogate E[(|tr M|/(d-1))^{d-1} 1{M psd}] is computed on the same draws,
    as is the trace-only version without the psd indicator. ``mode`` picks
    which of the two is reported as ``log_value``. ``apply_events=False``
    drops the E0 E1 E2 factor (a diagnostic: at small d the three events
    cannot hold together, so the gated W is identically zero).
    """
    if mode not in ("direct", "surrogate"):
        raise ValueError("mode must be 'direct' or 'surrogate'")
    a = _alpha(alpha)
    th = thresholds
    ev = classify_events(a, th, d)
    gate = ev.E0 and ev.E1 and ev.E2
    comps = {"E0": ev.E0, "E1": ev.E1, "E2": ev.E2, "F_index": ev.F_index,
             "log_W": -math.inf, "log_density": -math.inf,
             "log_surface": sphere_log_surface(d, surface),
             "density_convention": density, "surface_convention": surface}
    if np.any(a != 0):
        comps["log_density"] = density_at_zero_log(a, d, density)
    if (apply_events and not gate) or not np.any(a != 0):
        return KacRiceEstimate(-math.inf, 0, 0.0, int(n_samples), comps, mode=mode)
    if mode == "direct" and d > 30:
        raise ValueError("direct mode limited to d <= 30")
    spec = ConditionalSpec(a, a, d)
    rng = make_rng(seed, *stream)
    m = d - 1
    log_direct, log_sur, log_tr = [], [], []
    n_psd = n_hit = viol = 0
    for M, Z in _draw_chunks(spec, rng, n_samples, chunk):
        lam, psd = _psd_batch(M)
        tr = lam.sum(axis=1)
        e2 = np.all(np.sum(Z * Z, axis=1) >= (1 - th.delta) * d, axis=1) if include_e2 \
            else np.ones(len(M), dtype=bool)
        pos = lam[:, 0] > 0
        with np.errstate(divide="ignore", invalid="ignore"):
            logdet = np.where(pos, np.sum(np.log(np.where(pos[:, None], lam, 1.0)), axis=1),
                              -np.inf)
            ltr = m * (np.log(np.abs(tr)) - math.log(m))
        # AM-GM per sample, only where both sides are defined
        chk = psd & pos
        viol += int(np.sum(logdet[chk] > ltr[chk] + 1e-10 * np.maximum(1.0, np.abs(ltr[chk]))))
        log_direct.append(np.where(psd & e2, logdet, -np.inf))
        log_sur.append(np.where(psd, ltr, -np.inf))
        log_tr.append(ltr)
        n_psd += int(psd.sum())
        n_hit += int((psd & e2).sum())
    ld, se_d = _log_mean(np.concatenate(log_direct))
    ls, se_s = _log_mean(np.concatenate(log_sur))
    lt, _ = _log_mean(np.concatenate(log_tr))
    zero = n_hit == 0
    val, se = (ld, se_d) if mode == "direct" else (ls, se_s)
    comps["log_W"] = val
    return KacRiceEstimate(
        log_value=val, sign=0 if val == -math.inf else 1,
        std_err_log=se if np.isfinite(val) else 0.0, n_samples=int(n_samples),
        components=comps, zero_observed=bool(zero),
        cp_upper=_cp_upper(n_hit, n_samples) if zero else None,
        log_surrogate=ls, surrogate_std_err_log=se_s, log_trace_surrogate=lt,
        n_psd=n_psd, n_psd_e2=n_hit, amgm_violations=viol, mode=mode,
    )


@dataclass
class HExpectation:
    log_value: float
    sign: int
    std_err_log: float
    n_samples: int
    strata: list
    conventions: dict
    n_gate_pass: int
    n_matrix: int

    def to_dict(self):
        return _jsonable(asdict(self))


def _h_task(args):
    j, a, d, th, n_matrix, seed, mode, density, surface, apply_events = args
    est = estimate_W_log(a, d, th, n_matrix, seed, mode=mode, stream=("W", j),
                         density=density, surface=surface, apply_events=apply_events)
    c = est.components
    gate = c["E0"] and c["E1"] and c["E2"]
    log_h = est.log_value + c["log_surface"] + c["log_density"] if est.sign else -math.inf
    return c["F_index"], gate, log_h


def estimate_h_expectation(d, n, thresholds, n_alpha, n_matrix, seed, mode="direct",
                           density="exact", surface="surface", alphas=None, workers=1,
                           apply_events=True):
    """Outer MC over alpha ~ N(0, I_n) of h(alpha) = Vol * W(alpha) * p(0).

    Per-alpha values are combined with logsumexp in sample order, so the
    result does not depend on ``workers``. Strata are keyed by F_index.
    """
    from .sphere_optimizer import _pmap

    if mode == "direct" and d > 12:
        raise ValueError("direct mode of the h estimator is limited to d <= 12")
    if alphas is None:
        alphas = [make_rng(seed, "alpha", j).standard_normal(n) for j in range(int(n_alpha))]
    else:
        alphas = [np.asarray(a, dtype=float) for a in np.atleast_2d(alphas)]
    tasks = [(j, a, d, thresholds, n_matrix, seed, mode, density, surface, apply_events)
             for j, a in enumerate(alphas)]
    res = _pmap(_h_task, tasks, workers)
    N = len(res)
    logh = np.array([r[2] for r in res])
    lm, se = _log_mean(logh)
    strata = []
    for k in sorted({r[0] for r in res}):
        sel = np.array([r[0] == k for r in res])
        v = logh[sel]
        fin = np.isfinite(v)
        strata.append({"k": int(k), "count": int(sel.sum()),
                       "log_contrib": float(logsumexp(v[fin]) - math.log(N)) if fin.any()
                       else -math.inf})
    return HExpectation(
        log_value=lm, sign=0 if lm == -math.inf else 1,
        std_err_log=se if np.isfinite(lm) else 0.0, n_samples=N, strata=strata,
        conventions={"density": density, "surface": surface, "mode": mode,
                     "apply_events": bool(apply_events)},
        n_gate_pass=int(sum(r[1] for r in res)), n_matrix=int(n_matrix),
    )


def holder_split_check(z, small, eta, d, rtol=1e-10):
    """Check |Q(z)|^d / m6(z)^{d/2} <= eta^{1-d/2} T(z_S) + (1-eta)^{1-d/2} T(z_L).

    Here T(u) = (Q(u)^2 / ||u||_6^6)^{d/2}, with T = 0 for an empty or zero
    block, and ``small`` marks the S coordinates. Returns (lhs_log, rhs_log,
    holds).
    """
    z = np.asarray(z, dtype=float)
    small = np.asarray(small, dtype=bool)
    lhs = _log_ratio_power(Q(z), float(np.sum(z ** 6)), d)
    tS = _log_ratio_power(Q(z[small]), float(np.sum(z[small] ** 6)), d)
    tL = _log_ratio_power(Q(z[~small]), float(np.sum(z[~small] ** 6)), d)
    e = d / 2.0 - 1.0
    rhs = np.logaddexp(-e * math.log(eta) + tS, -e * math.log(1 - eta) + tL)
    holds = lhs == -math.inf or lhs <= rhs + rtol * max(1.0, abs(rhs))
    return float(lhs), float(rhs), bool(holds)


def large_entries_check(alpha, thresholds, d):
    """Q(alpha_L)^2 / ||alpha_L||_6^6 against (1+delta)d.

    Returns (value, bound, E0, holds); ``holds`` is True whenever E0 fails
    since the bound is only asserted on E0.
    """
    a = _alpha(alpha)
    ev = classify_events(a, thresholds, d)
    aL = a[ev.L]
    m6 = float(np.sum(aL ** 6))
    val = Q(aL) ** 2 / m6 if m6 > 0 else 0.0
    bound = (1 + thresholds.delta) * d
    return val, bound, ev.E0, bool((not ev.E0) or val <= bound)
