"""Event classifiers on correlation vectors, superlevel sets, RIP and
concentration sweeps.

Natural logs throughout. Wherever sqrt(C log d) or n/log d appears we need
log d > 0 with some room, so those functions insist on d >= 3.
"""
from dataclasses import dataclass, asdict, field
import math

import numpy as np

from .rng import make_rng
from .tensor_core import _mat, _vec, CorrelationProfile

__all__ = [
    "EventThresholds", "EventReport", "Q", "classify_events", "e0_subset_size",
    "superlevel_membership", "RIPReport", "rip_check", "SweepReport",
    "concentration_sweep",
]


def _logd(d):
    if d < 3:
        raise ValueError(f"log d thresholds need d >= 3, got d={d}")
    return math.log(d)


@dataclass(frozen=True)
class EventThresholds:
    """Constants for the events and the S/L split.

    ``K`` and ``C`` default to desk-scale values: with K of order one a
    planted largest coordinate can satisfy both alpha_k^4 >= tau and the
    E0 subset bound at small d. ``c_P`` is the constant in
    P = (2 - c_P delta) sqrt(K n d). ``e0_moment`` selects the power in
    E0's moment condition ("sixth" or the literal "fourth").
    """

    delta: float = 0.1
    gamma: float = 10.0
    K: float = 1.0
    C: float = 20.0
    zeta: float = 0.1
    c_P: float = 10.0
    e0_moment: str = "sixth"

    def __post_init__(self):
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")
        if not (self.gamma >= 0 and self.K > 0 and self.C > 0 and self.zeta >= 0):
            raise ValueError("need gamma >= 0, K > 0, C > 0, zeta >= 0")
        if self.e0_moment not in ("sixth", "fourth"):
            raise ValueError("e0_moment must be 'sixth' or 'fourth'")
        vals = (self.delta, self.gamma, self.K, self.C, self.zeta, self.c_P)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError("thresholds must be finite")

    def tau(self, n, d):
        return self.K * n / d

    def tau_hat(self, d):
        return math.sqrt(self.C * _logd(d))

    def P(self, n, d):
        p = (2.0 - self.c_P * self.delta) * math.sqrt(self.K * n * d)
        if not p > 0:
            raise ValueError(f"P = {p} is not positive; lower c_P or delta")
        return p

    def to_dict(self):
        return asdict(self)


def Q(z):
    """Q(z) = ||z||_4^4 - 3 ||z||_2^2."""
    z = np.asarray(z, dtype=float)
    z2 = z * z
    return float(z2 @ z2 - 3.0 * z2.sum())


@dataclass
class EventReport:
    E0: bool
    E1: bool
    E2: bool
    F_index: int
    S: list
    L: list
    Q_alpha: float
    Q_alpha_S: float
    Q_alpha_L: float
    size_L_ok: bool
    E0_subset: bool = True
    E0_moment: bool = True
    E0_norm: bool = True
    details: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)


def e0_subset_size(n, d, delta):
    """Largest integer strictly below delta n / log d."""
    r = delta * n / _logd(d)
    return max(0, math.ceil(r) - 1)


def _alpha(alpha):
    if isinstance(alpha, CorrelationProfile):
        return alpha.alpha
    return np.asarray(alpha, dtype=float).ravel()


def classify_events(alpha, thresholds, d, n=None):
    """Evaluate E0, E1, E2, the F-stratum and the S/L split for ``alpha``.

    ``F_index`` is 0 when max alpha_i^4 <= tau and otherwise 1 + the
    position of the largest alpha_i^4 (lowest position on ties), so the
    strata are numbered 0..n.
    """
    a = _alpha(alpha)
    n = a.shape[0] if n is None else int(n)
    if a.shape[0] != n:
        raise ValueError(f"alpha has length {a.shape[0]}, expected n={n}")
    th = thresholds
    logd = _logd(d)
    a2 = a * a
    a4 = a2 * a2
    l2, l4, l6 = float(a2.sum()), float(a4.sum()), float((a4 * a2).sum())
    root = math.sqrt(n * d)

    m = e0_subset_size(n, d, th.delta)
    top = float(np.sort(a2)[::-1][:m].sum()) if m > 0 else 0.0
    e0_subset = top <= (1.0 + th.delta) * d
    moment = l6 if th.e0_moment == "sixth" else l4
    e0_moment = moment >= 15.0 * (1.0 - th.delta) * n
    e0_norm = n - 3.0 * root <= l2 <= n + 3.0 * root
    E1 = l4 >= 3.0 * n + th.gamma * root
    E2 = float(a2.max()) <= th.delta * d if n else True

    tau = th.tau(n, d)
    k = int(np.argmax(a4)) if n else 0
    F_index = 0 if (n == 0 or a4[k] <= tau) else k + 1

    small = np.abs(a) <= th.tau_hat(d)
    S = np.nonzero(small)[0]
    L = np.nonzero(~small)[0]
    qS, qL = Q(a[S]), Q(a[L])
    return EventReport(
        E0=bool(e0_subset and e0_moment and e0_norm), E1=bool(E1), E2=bool(E2),
        F_index=F_index, S=S.tolist(), L=L.tolist(), Q_alpha=Q(a),
        Q_alpha_S=qS, Q_alpha_L=qL, size_L_ok=bool(len(L) <= th.delta * n / logd),
        E0_subset=bool(e0_subset), E0_moment=bool(e0_moment), E0_norm=bool(e0_norm),
        details={"subset_size": m, "top_subset_mass": top, "tau": tau,
                 "tau_hat": th.tau_hat(d), "l2sq": l2, "l4": l4, "l6": l6,
                 "n_over_dlogd": n / (d * logd), "n_over_dlog2d": n / (d * logd ** 2)},
    )


def superlevel_membership(A, x, thresholds):
    """(in_L, in_L1, in_L2) for x: value thresholds and the L2 shape test."""
    A = _mat(A)
    x = _vec(x, A.shape[0])
    d, n = A.shape
    th = thresholds
    alpha = A.T @ x
    f = float(np.sum(alpha ** 4))
    in_L = f >= 3.0 * (1.0 + th.zeta) * n
    in_L1 = f >= 3.0 * n + th.gamma * math.sqrt(n * d)
    proj_sq = np.sum(A * A, axis=0) - alpha ** 2     # ||P_x a_i||^2
    in_L2 = bool(np.all(proj_sq >= (1.0 - th.delta) * d) and np.all(alpha ** 2 <= th.delta * d))
    return bool(in_L), bool(in_L1), in_L2


@dataclass
class RIPReport:
    k: int
    delta: float
    trials: int
    sigma_min: float
    sigma_max: float
    adversarial_sigma_min: float
    adversarial_sigma_max: float
    adversarial_subset: list
    passed: bool
    random_passed: bool

    def to_dict(self):
        return asdict(self)


def _svals(M):
    return np.linalg.svd(M, compute_uv=False)


def rip_check(A, k, delta, trials, seed):
    """Extreme singular values of k-column submatrices of the normalized A.

    Covers ``trials`` uniformly random subsets plus one greedy adversarial
    subset built by repeatedly adding the column that most increases the
    top singular value, starting from the most correlated pair.
    """
    A = _mat(A)
    d, n = A.shape
    k = int(k)
    if k < 1 or k > min(d, n):
        raise ValueError(f"need 1 <= k <= min(d, n) = {min(d, n)}, got k={k}")
    U = A / np.linalg.norm(A, axis=0)
    rng = make_rng(seed, "rip")
    lo, hi = np.inf, -np.inf
    for _ in range(int(trials)):
        idx = rng.choice(n, size=k, replace=False)
        s = _svals(U[:, idx])
        lo, hi = min(lo, s[-1]), max(hi, s[0])
    if k == 1:
        chosen = [0]
    else:
        G = np.abs(U.T @ U)
        np.fill_diagonal(G, -1.0)
        i, j = np.unravel_index(int(np.argmax(G)), G.shape)
        chosen = [int(min(i, j)), int(max(i, j))]
        while len(chosen) < k:
            best, arg = -np.inf, -1
            for c in range(n):
                if c in chosen:
                    continue
                s0 = _svals(U[:, chosen + [c]])[0]
                if s0 > best:
                    best, arg = s0, c
            chosen.append(arg)
    s = _svals(U[:, chosen])
    a_lo, a_hi = float(s[-1]), float(s[0])
    rand_ok = bool(trials == 0 or (lo >= 1 - delta and hi <= 1 + delta))
    adv_ok = a_lo >= 1 - delta and a_hi <= 1 + delta
    return RIPReport(
        k=k, delta=float(delta), trials=int(trials),
        sigma_min=float(lo) if trials else float("nan"),
        sigma_max=float(hi) if trials else float("nan"),
        adversarial_sigma_min=a_lo, adversarial_sigma_max=a_hi,
        adversarial_subset=sorted(chosen), passed=bool(rand_ok and adv_ok),
        random_passed=rand_ok,
    )


@dataclass
class SweepReport:
    degree: int
    tau: float
    center: float
    scale: float
    max_statistic: float
    max_normalized_excess: float
    statistics: np.ndarray = field(repr=False)

    def to_dict(self):
        out = asdict(self)
        out["statistics"] = [float(v) for v in self.statistics]
        return out


def _sweep_stat(A, x, tau, degree):
    alpha = A.T @ x if A.shape[1] else np.zeros(0)
    keep = np.abs(alpha) <= tau
    if degree == 4:
        return float(np.sum(alpha[keep] ** 4))
    if degree == 3:
        return float(np.linalg.norm(A[:, keep] @ alpha[keep] ** 3)) if keep.any() else 0.0
    if keep.any():
        B = A[:, keep] * np.abs(alpha[keep])
        return float(np.linalg.norm(B, 2) ** 2)
    return 0.0


def concentration_sweep(A, tau, samples, seed, degree=4, extra_points=None, noise=0.1):
    """Clipped polynomial statistics over uniform and adversarial points.

    Half of the ``samples`` points are uniform on the sphere; the other half
    are abar_i + noise * (tangent Gaussian), cycling through components.
    ``extra_points`` are appended as given. The normalized excess is
    (stat - center) / ((sqrt(nd) + d tau^4) log d) with center 3n for
    degrees 4 and 2 and 0 for degree 3.
    """
    if degree not in (2, 3, 4):
        raise ValueError("degree must be 2, 3 or 4")
    if samples < 1:
        raise ValueError("samples must be >= 1")
    A = np.asarray(A.A if hasattr(A, "A") else A, dtype=float)
    d, n = A.shape
    rng = make_rng(seed, "sweep", degree)
    pts = []
    n_adv = samples // 2 if n else 0
    for _ in range(samples - n_adv):
        v = rng.standard_normal(d)
        pts.append(v / np.linalg.norm(v))
    if n_adv:
        U = A / np.linalg.norm(A, axis=0)
        for s in range(n_adv):
            u = U[:, s % n]
            v = rng.standard_normal(d)
            v -= (u @ v) * u
            x = u + noise * v / np.linalg.norm(v)
            pts.append(x / np.linalg.norm(x))
    if extra_points is not None:
        for x in np.atleast_2d(extra_points):
            pts.append(np.asarray(x, dtype=float) / np.linalg.norm(x))
    stats = np.array([_sweep_stat(A, x, tau, degree) for x in pts])
    center = 0.0 if degree == 3 else 3.0 * n
    tau4 = tau ** 4 if np.isfinite(tau) else np.inf
    scale = (math.sqrt(n * d) + d * tau4) * _logd(d)
    excess = (stats - center) / scale
    return SweepReport(degree=degree, tau=float(tau), center=center, scale=float(scale),
                       max_statistic=float(stats.max()),
                       max_normalized_excess=float(excess.max()), statistics=stats)
