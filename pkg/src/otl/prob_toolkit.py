"""Checkable versions of sub-exponential and Gaussian concentration tools.

Bounds are evaluated in log domain. Hidden absolute constants are explicit,
named defaults:

C_MOM = 4          constant in the moment bound for sub-exponential X
ZETA_P = 0.1       the (1 + zeta_p) slack in the truncated-moment bound
C6_DEFAULT = 28000 numerator of c_6(eps) = c6 / eps^5 in the sixth-power
                   triangle inequality (search gives sup ~ 27510.5, reached
                   as eps -> 1)
QUOTED_NU_SQ = 41  second-moment constant quoted for the truncated quartic;
                   the Gaussian moments give 42, which is what we use
"""
from dataclasses import dataclass, asdict, field
import math

import numpy as np
from scipy import integrate
from scipy.special import gammaln, ndtri
from scipy.stats import chi2

from .rng import make_rng
from .kac_rice_mc import wilson_interval, _jsonable

__all__ = [
    "C_MOM", "ZETA_P", "C6_DEFAULT", "QUOTED_NU_SQ", "ANALYTIC_NU_SQ",
    "SubExpParams", "CheckReport", "quartic_samples", "truncated_quartic_moments",
    "quartic_second_moment_exact", "subexp_tail", "subexp_tail_check",
    "log_double_factorial", "subexp_moment_bound", "truncated_moment_bound",
    "gaussian_quadratic_tail_check", "norm_lower_tail_check",
    "sixth_power_triangle_check", "calibrate_sixth_power_constant",
    "exp_polynomial_antiderivative", "factorial_bounds_check", "subexp_sum_params",
    "mgf_sum_check", "run_suite",
]

C_MOM = 4.0
ZETA_P = 0.1
C6_DEFAULT = 28000.0
QUOTED_NU_SQ = 41.0
ANALYTIC_NU_SQ = 42.0   # E[x^8] - 6 E[x^6] + 9 E[x^4] = 105 - 90 + 27


@dataclass(frozen=True)
class SubExpParams:
    """Sub-exponential parameters (nu, b) and mean mu."""

    nu: float
    b: float
    mu: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.nu) and math.isfinite(self.b) and math.isfinite(self.mu)):
            raise ValueError("nu, b, mu must be finite")
        if self.nu < 0 or self.b < 0:
            raise ValueError("nu and b must be nonnegative")


@dataclass
class CheckReport:
    """One bound check: ``verdict`` is 'holds', 'violated' or 'info'."""

    claim_id: str
    parameters: dict
    empirical: object
    bound: object
    verdict: str
    ci: object = None

    def to_dict(self):
        return _jsonable(asdict(self))


def _verdict(ok):
    return "holds" if ok else "violated"


# --- truncated quartic -----------------------------------------------------

def quartic_samples(tau, n_samples, seed, sampling="stratified", stream=("quartic",)):
    """Draw z = (x^4 - 3x^2) 1{|x| <= tau^{1/4}} for standard normal x.

    ``stratified`` places one uniform in each of n equal-probability cells
    and maps through the normal quantile (same marginal law, far lower
    variance for moments); ``iid`` draws independent normals.
    """
    if not tau > 0:
        raise ValueError("tau must be positive")
    rng = make_rng(seed, *stream)
    N = int(n_samples)
    if sampling == "stratified":
        u = (np.arange(N) + rng.random(N)) / N
        x = ndtri(u)
    elif sampling == "iid":
        x = rng.standard_normal(N)
    else:
        raise ValueError("sampling must be 'stratified' or 'iid'")
    x2 = x * x
    return np.where(np.abs(x) <= tau ** 0.25, x2 * x2 - 3.0 * x2, 0.0)


def quartic_second_moment_exact(tau):
    """E[z^2] for the truncated quartic by adaptive quadrature."""
    # beyond |x| = 40 the Gaussian weight underflows; clipping keeps quad from
    # stepping over the bulk when tau is huge
    c = min(tau ** 0.25, 40.0)
    phi = lambda x: math.exp(-0.5 * x * x) / math.sqrt(2 * math.pi)
    val, _ = integrate.quad(lambda x: (x ** 4 - 3 * x * x) ** 2 * phi(x), -c, c,
                            epsabs=0, epsrel=1e-12, limit=200)
    return val


@dataclass
class QuarticMomentReport:
    tau: float
    n_samples: int
    mean: float
    second_moment: float
    central_second_moment: float
    analytic_second_moment: float
    quoted_nu_sq: float
    lam: np.ndarray
    mgf: np.ndarray
    mgf_se: np.ndarray
    envelope: np.ndarray
    mgf_holds: bool

    def to_dict(self):
        return _jsonable({k: (v.tolist() if isinstance(v, np.ndarray) else v)
                          for k, v in asdict(self).items()})


def _mgf_curve(z, mu, lam):
    e = np.exp(np.outer(lam, z - mu))
    return e.mean(axis=1), e.std(axis=1, ddof=1) / math.sqrt(z.size)


def truncated_quartic_moments(tau, n_samples, seed, n_lam=21, sampling="stratified"):
    """Moments of the truncated quartic and its MGF on |lam| < 1/(8 sqrt(tau)).

    The MGF check compares E exp(lam (Z - mu)) against exp(nu^2 lam^2 / 2)
    with nu^2 the measured central second moment and passes a grid point
    when the estimate minus three standard errors is below the envelope.
    """
    z = quartic_samples(tau, n_samples, seed, sampling)
    mu = float(z.mean())
    m2 = float(np.mean(z * z))
    v = float(np.mean((z - mu) ** 2))
    lmax = 1.0 / (8.0 * math.sqrt(tau))
    lam = np.linspace(-lmax, lmax, n_lam + 2)[1:-1]
    mgf, se = _mgf_curve(z, mu, lam)
    env = np.exp(0.5 * v * lam ** 2)
    return QuarticMomentReport(
        tau=float(tau), n_samples=int(n_samples), mean=mu, second_moment=m2,
        central_second_moment=v, analytic_second_moment=quartic_second_moment_exact(tau),
        quoted_nu_sq=QUOTED_NU_SQ, lam=lam, mgf=mgf, mgf_se=se, envelope=env,
        mgf_holds=bool(np.all(mgf - 3 * se <= env)),
    )


# --- tails and moments -----------------------------------------------------

def subexp_tail(params, x):
    """(max form, sum form) of the sub-exponential tail bound at ``x`` >= 0."""
    if x < 0:
        raise ValueError("x must be nonnegative")
    if x == 0:
        return 1.0, 2.0
    g = math.exp(-x * x / (2 * params.nu ** 2)) if params.nu > 0 else 0.0
    e = math.exp(-x / (2 * params.b)) if params.b > 0 else 0.0
    return max(g, e), g + e


def subexp_tail_check(samples, params, xs, level=0.95):
    """Empirical Pr[X - mu >= x] vs the sum-form bound, with Wilson CIs."""
    z = np.asarray(samples, dtype=float) - params.mu
    N = z.size
    out = []
    for x in xs:
        k = int(np.sum(z >= x))
        lo, hi = wilson_interval(k, N, level)
        bnd = subexp_tail(params, x)[1]
        out.append(CheckReport("sub-exp-tail", {"x": float(x), "nu": params.nu, "b": params.b,
                                                "mu": params.mu, "n": N},
                               k / N, bnd, _verdict(lo <= bnd), [lo, hi]))
    return out


def log_double_factorial(p):
    """log p!! for integer p >= -1 through log-Gamma."""
    p = int(p)
    if p < -1:
        raise ValueError("p must be >= -1")
    if p <= 0:
        return 0.0
    if p % 2 == 0:
        k = p // 2
        return k * math.log(2) + float(gammaln(k + 1))
    k = (p + 1) // 2
    return float(gammaln(2 * k + 1)) - k * math.log(2) - float(gammaln(k + 1))


def _logpow(base, p):
    return p * math.log(base) if base > 0 else -math.inf


def subexp_moment_bound(params, p, epsilon=0.5, c_mom=C_MOM):
    """Log of the p-th absolute moment bound for sub-exponential X.

    c_mom [eps^{1-p} |mu|^p + (1-eps)^{1-p} (nu^p p!! + (2b)^p p!)]. For
    mu = 0 the mean-zero form c_mom (nu^p p!! + (2b)^p p!) is used.
    """
    if p < 1 or int(p) != p:
        raise ValueError("p must be a positive integer")
    if not 0 < epsilon < 1:
        raise ValueError("epsilon must lie in (0, 1)")
    p = int(p)
    core = np.logaddexp(_logpow(params.nu, p) + log_double_factorial(p),
                        _logpow(2 * params.b, p) + float(gammaln(p + 1)))
    if params.mu == 0:
        return math.log(c_mom) + float(core)
    t1 = (1 - p) * math.log(epsilon) + _logpow(abs(params.mu), p)
    t2 = (1 - p) * math.log(1 - epsilon) + float(core)
    return math.log(c_mom) + float(np.logaddexp(t1, t2))


def truncated_moment_bound(params, p, s, epsilon=0.5, eta=0.5, zeta_p=ZETA_P):
    """Log of the bound on E[|X|^p 1{|X| >= mu + s}].

    eps^{1-p}|mu|^p + (1-eps)^{1-p} s^p ((1+zeta_p)^p p^2 exp(-s^2/(2nu^2))
    + p exp(-s/(2b)) / eta), valid for s >= max(nu sqrt(p), 2bp(1+eta)). The
    |mu|^p term is dropped when mu = 0.
    """
    if not 0 < epsilon < 1 or not eta > 0:
        raise ValueError("need epsilon in (0, 1) and eta > 0")
    need_g = params.nu * math.sqrt(p)
    need_e = 2 * params.b * p * (1 + eta)
    if s < need_g:
        raise ValueError(f"s={s} below nu*sqrt(p)={need_g:.6g} (Gaussian-branch constraint)")
    if s < need_e:
        raise ValueError(f"s={s} below 2bp(1+eta)={need_e:.6g} (exponential-branch constraint)")
    lg = (p * math.log(1 + zeta_p) + 2 * math.log(p) - s * s / (2 * params.nu ** 2)
          if params.nu > 0 else -math.inf)
    le = math.log(p) - s / (2 * params.b) - math.log(eta) if params.b > 0 else -math.inf
    tail = p * math.log(s) + float(np.logaddexp(lg, le))
    if params.mu == 0:
        return (1 - p) * math.log(1 - epsilon) + tail
    t1 = (1 - p) * math.log(epsilon) + p * math.log(abs(params.mu))
    return float(np.logaddexp(t1, (1 - p) * math.log(1 - epsilon) + tail))


# --- Gaussian quadratic forms ----------------------------------------------

def _psd_eigs(Sigma):
    S = np.asarray(Sigma, dtype=float)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise ValueError("Sigma must be square")
    if not np.allclose(S, S.T, rtol=0, atol=1e-12 * max(1.0, np.abs(S).max())):
        raise ValueError("Sigma must be symmetric")
    lam, V = np.linalg.eigh(S)
    if lam.size and lam[0] < -1e-12 * max(1.0, abs(lam[-1])):
        raise ValueError(f"Sigma is not PSD (min eigenvalue {lam[0]:.3g})")
    return np.clip(lam, 0, None), V


def gaussian_quadratic_tail_check(Sigma, t, n_samples, seed, chunk=200000):
    """MC frequencies of the two quadratic-form tail events vs exp(-t).

    With Q = x^T Sigma x, x standard normal: upper event
    Q - tr > 2 sqrt(tr(Sigma^2) t) + 2 ||Sigma|| t, lower event
    Q - tr < -2 sqrt(tr(Sigma^2) t). Strict inequalities, so Sigma = 0
    gives empty events.
    """
    lam, _ = _psd_eigs(Sigma)
    tr, tr2, top = lam.sum(), float(lam @ lam), (lam.max() if lam.size else 0.0)
    up_thr = 2 * math.sqrt(tr2 * t) + 2 * top * t
    lo_thr = -2 * math.sqrt(tr2 * t)
    rng = make_rng(seed, "quadratic-form")
    up = low = 0
    left = int(n_samples)
    while left > 0:
        b = min(chunk, left)
        g = rng.standard_normal((b, lam.size))
        dev = (g * g) @ lam - tr
        up += int(np.sum(dev > up_thr))
        low += int(np.sum(dev < lo_thr))
        left -= b
    bound = math.exp(-t)
    res = []
    for name, k in (("upper", up), ("lower", low)):
        lo, hi = wilson_interval(k, n_samples)
        res.append(CheckReport(f"quadratic-gaussian-{name}",
                               {"t": float(t), "k": int(lam.size), "tr": float(tr),
                                "tr_sq": tr2, "norm": float(top), "n": int(n_samples)},
                               k / n_samples, bound, _verdict(lo <= bound), [lo, hi]))
    return res


def norm_lower_tail_check(mu_vec, Sigma, v, t, n_samples, seed, variant="tr_sigma2",
                          chunk=200000):
    """Pr[||X||^2 >= tr - ||S|| - 2 sqrt(c t)] against 1 - exp(-t).

    X = sum_j v_j z_j with z_j ~ N(mu, Sigma) i.i.d., simulated through its
    law N((sum v) mu, ||v||^2 Sigma); S is that covariance and c is tr(S^2)
    (``tr_sigma2``) or tr(S) (``tr_sigma``).
    """
    mu_vec = np.asarray(mu_vec, dtype=float).ravel()
    v = np.asarray(v, dtype=float).ravel()
    lam, V = _psd_eigs(Sigma)
    if mu_vec.size != lam.size:
        raise ValueError("mu and Sigma dimensions differ")
    s2 = float(v @ v)
    lamX = s2 * lam
    tr, top = lamX.sum(), (lamX.max() if lamX.size else 0.0)
    if variant == "tr_sigma2":
        c = float(lamX @ lamX)
    elif variant == "tr_sigma":
        c = float(tr)
    else:
        raise ValueError("variant must be 'tr_sigma2' or 'tr_sigma'")
    thr = tr - top - 2 * math.sqrt(c * t)
    mean = v.sum() * mu_vec
    root = V * np.sqrt(lamX)
    rng = make_rng(seed, "norm-lower")
    hits, left = 0, int(n_samples)
    while left > 0:
        b = min(chunk, left)
        X = mean + rng.standard_normal((b, lam.size)) @ root.T
        hits += int(np.sum(np.sum(X * X, axis=1) >= thr))
        left -= b
    lo, hi = wilson_interval(hits, n_samples)
    bound = 1 - math.exp(-t)
    return CheckReport("norm-lower-tail", {"t": float(t), "variant": variant,
                                           "threshold": float(thr), "n": int(n_samples)},
                       hits / n_samples, bound, _verdict(hi >= bound), [lo, hi])


# --- elementary inequalities -----------------------------------------------

def sixth_power_triangle_check(a, b, epsilon, constant=C6_DEFAULT):
    """||a+b||_6^6 <= (1+eps)||a||_6^6 + (constant / eps^5) ||b||_6^6."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    lhs = float(np.sum((a + b) ** 6))
    rhs = (1 + epsilon) * float(np.sum(a ** 6)) + constant / epsilon ** 5 * float(np.sum(b ** 6))
    return bool(lhs <= rhs * (1 + 1e-12))


def calibrate_sixth_power_constant(n_pairs=10 ** 6, eps_grid=None, seed=0):
    """Largest eps^5 ((a+b)^6 - (1+eps) a^6) / b^6 seen over random scalars.

    By homogeneity only r = b/a matters; r is drawn log-uniformly on
    [1e-3, 10] with random sign. Returns (constant, eps, r) at the worst
    pair.
    """
    eps_grid = np.linspace(0.01, 0.999, 100) if eps_grid is None else np.asarray(eps_grid)
    rng = make_rng(seed, "c6-search")
    r = np.exp(rng.uniform(math.log(1e-3), math.log(10.0), int(n_pairs)))
    r *= rng.choice([-1.0, 1.0], size=r.size)
    best = (-math.inf, None, None)
    for e in eps_grid:
        req = e ** 5 * ((1 + r) ** 6 - (1 + e)) / r ** 6
        i = int(np.argmax(req))
        if req[i] > best[0]:
            best = (float(req[i]), float(e), float(r[i]))
    return best


def exp_polynomial_antiderivative(mu, beta, deg, x):
    """-(e^{-beta x} (mu+x)^deg / beta) sum_k deg!/(deg-k)! ((mu+x) beta)^{-k}."""
    if not beta > 0:
        raise ValueError("beta must be positive")
    u = mu + x
    if u == 0:
        raise ValueError("pole at mu + x = 0")
    deg = int(deg)
    s = sum(math.exp(gammaln(deg + 1) - gammaln(deg - k + 1)) * (u * beta) ** (-k)
            for k in range(deg + 1))
    return -math.exp(-beta * x) * u ** deg / beta * s


@dataclass
class FactorialReport:
    n: int
    lower: bool
    upper: bool
    chain_literal: bool
    chain_corrected: bool
    links: dict = field(default_factory=dict)

    @property
    def holds(self):
        return self.lower and self.upper


def factorial_bounds_check(n):
    """Log-domain check of e(n/e)^n <= n! <= e((n+1)/e)^{n+1} and the
    double-factorial chain

        L (2(n-1)/e)^{n-1} <= (2n-2)!! <= (2n-1)!! <= (2n)!! = 2^n n!
                           <= (e/2)(2(n+1)/e)^{n+1}

    with L = 2e as written (``chain_literal``) and L = e (``chain_corrected``).
    """
    n = int(n)
    if n < 1:
        raise ValueError("n must be >= 1")
    tol = 1e-12
    lf = float(gammaln(n + 1))
    lo = 1 + n * (math.log(n) - 1)
    hi = 1 + (n + 1) * (math.log(n + 1) - 1)
    m = n - 1
    base = (m * (math.log(2 * m) - 1)) if m > 0 else 0.0
    d_even_lo = log_double_factorial(2 * n - 2)
    d_odd = log_double_factorial(2 * n - 1)
    d_even = log_double_factorial(2 * n)
    top = math.log(math.e / 2) + (n + 1) * (math.log(2 * (n + 1)) - 1)
    links = {
        "lit_lower": math.log(2 * math.e) + base <= d_even_lo + tol,
        "cor_lower": 1 + base <= d_even_lo + tol,
        "even_le_odd": d_even_lo <= d_odd + tol,
        "odd_le_even": d_odd <= d_even + tol,
        "even_identity": abs(d_even - (n * math.log(2) + lf)) <= 1e-9 * max(1.0, d_even),
        "upper": d_even <= top + tol,
    }
    rest = links["even_le_odd"] and links["odd_le_even"] and links["even_identity"] and links["upper"]
    return FactorialReport(n, lo <= lf + tol, lf <= hi + tol,
                           bool(links["lit_lower"] and rest), bool(links["cor_lower"] and rest),
                           links)


def subexp_sum_params(params):
    """Parameters of a sum of independent sub-exponentials."""
    params = list(params)
    if not params:
        raise ValueError("need at least one parameter set")
    return SubExpParams(nu=math.sqrt(sum(p.nu ** 2 for p in params)),
                        b=max(p.b for p in params), mu=sum(p.mu for p in params))


def mgf_sum_check(tau, n_terms, n_samples, seed, n_lam=11):
    """MGF of a sum of ``n_terms`` i.i.d. truncated quartics vs the combined
    envelope exp(nu*^2 lam^2 / 2), nu*^2 = n_terms * measured variance."""
    z = quartic_samples(tau, n_terms * n_samples, seed, "iid", stream=("quartic-sum",))
    var = float(np.var(z, ddof=1))
    mu = float(z.mean())
    comb = subexp_sum_params([SubExpParams(math.sqrt(var), 4 * math.sqrt(tau), mu)] * n_terms)
    sums = z.reshape(n_samples, n_terms).sum(axis=1)
    lmax = 1.0 / (8.0 * math.sqrt(tau))
    lam = np.linspace(-lmax, lmax, n_lam + 2)[1:-1]
    mgf, se = _mgf_curve(sums, comb.mu, lam)
    env = np.exp(0.5 * comb.nu ** 2 * lam ** 2)
    ok = mgf - 3 * se <= env
    return CheckReport("sub-exp-addition-mgf",
                       {"tau": tau, "n_terms": n_terms, "n": n_samples, "nu_star": comb.nu,
                        "lam": lam.tolist()},
                       mgf.tolist(), env.tolist(), _verdict(bool(ok.all())),
                       (mgf - 3 * se).tolist())


# --- suite -----------------------------------------------------------------

def run_suite(n_samples=10 ** 6, seed=0, tau=10 ** 6):
    """Run the toolbox checks and return a list of CheckReports."""
    reps = []
    qm = truncated_quartic_moments(tau, n_samples, seed)
    reps.append(CheckReport("quartic-second-moment",
                            {"tau": tau, "n": n_samples, "quoted_nu_sq": QUOTED_NU_SQ,
                             "analytic": qm.analytic_second_moment},
                            qm.second_moment, [40.0, 43.0],
                            _verdict(40.0 <= qm.second_moment <= 43.0)))
    reps.append(CheckReport("quartic-mgf", {"tau": tau, "nu_sq": qm.central_second_moment},
                            qm.mgf.tolist(), qm.envelope.tolist(), _verdict(qm.mgf_holds)))
    small_tau = 100.0
    z = quartic_samples(small_tau, n_samples, seed, "iid", stream=("quartic-tail",))
    prm = SubExpParams(math.sqrt(ANALYTIC_NU_SQ), 4 * math.sqrt(small_tau), float(z.mean()))
    reps.extend(subexp_tail_check(z, prm, [5.0, 10.0, 20.0]))
    m6 = float(np.mean(np.abs(z) ** 6))
    lb = subexp_moment_bound(SubExpParams(float(z.std()), 4 * math.sqrt(small_tau),
                                          float(z.mean())), 6, 0.5)
    reps.append(CheckReport("sub-exp-moment-p6", {"tau": small_tau, "c_mom": C_MOM},
                            m6, math.exp(lb), _verdict(m6 <= math.exp(lb))))
    k = 10
    reps.extend(gaussian_quadratic_tail_check(np.eye(k), 1.0, n_samples, seed))
    reps.append(norm_lower_tail_check(np.zeros(k), np.eye(k), np.eye(3)[0], 1.0,
                                      n_samples, seed))
    # chi-square oracles against the exact survival functions
    thr_up = k + 2 * math.sqrt(k) + 2
    reps.append(CheckReport("chi2-upper-oracle", {"k": k, "t": 1.0},
                            float(chi2.sf(thr_up, k)), math.exp(-1),
                            _verdict(chi2.sf(thr_up, k) <= math.exp(-1))))
    thr_lo = k - 1 - 2 * math.sqrt(k)
    reps.append(CheckReport("chi2-lower-oracle", {"k": k, "t": 1.0},
                            float(chi2.sf(thr_lo, k)), 1 - math.exp(-1),
                            _verdict(chi2.sf(thr_lo, k) >= 1 - math.exp(-1))))
    fac = [factorial_bounds_check(n) for n in range(1, 171)]
    reps.append(CheckReport("factorial", {"n_max": 170}, all(f.holds for f in fac), True,
                            _verdict(all(f.holds for f in fac))))
    lit = [factorial_bounds_check(n).chain_literal for n in range(2, 81)]
    cor = [factorial_bounds_check(n).chain_corrected for n in range(2, 81)]
    reps.append(CheckReport("double-factorial-chain-literal", {"n": [2, 80]}, all(lit), True,
                            "info"))
    reps.append(CheckReport("double-factorial-chain-corrected", {"n": [2, 80]}, all(cor), True,
                            _verdict(all(cor))))
    F = lambda x: exp_polynomial_antiderivative(0.0, 1.0, 2, x)
    exact = F(5.0) - F(1.0)
    quad, _ = integrate.quad(lambda x: math.exp(-x) * x * x, 1, 5, epsabs=0, epsrel=1e-12)
    reps.append(CheckReport("exp-poly-antiderivative", {"mu": 0, "beta": 1, "deg": 2},
                            exact, quad, _verdict(abs(exact - quad) <= 1e-8 * abs(quad))))
    c6, e6, r6 = calibrate_sixth_power_constant(min(n_samples, 10 ** 6), seed=seed)
    reps.append(CheckReport("sixth-power-constant", {"eps_at_worst": e6, "r_at_worst": r6},
                            c6, C6_DEFAULT, _verdict(c6 <= C6_DEFAULT)))
    return reps
