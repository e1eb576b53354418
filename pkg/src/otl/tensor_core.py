"""Implicit fourth-order tensor T = sum_i a_i^{(x)4} and its sphere calculus.

The tensor is stored only through its d x n component matrix ``A``; every
quantity is computed from the correlation vector ``alpha = A.T @ x``.

Two normalizations are exposed for the derivatives:

``"objective"``
    derivatives of f(x) = sum_i <a_i, x>^4 (the default).
``"quarter"``
    derivatives of f/4, which gives the tidier formulas
    grad = P_x sum alpha_i^3 a_i and
    Hess = 3 sum alpha_i^2 P_x a_i a_i^T P_x - (sum alpha_i^4) P_x.
"""
from dataclasses import dataclass, field

import numpy as np

from .rng import make_rng

__all__ = [
    "ComponentSet", "SpherePoint", "CorrelationProfile", "sample_components",
    "correlations", "eval_objective", "dense_tensor_eval",
    "riemannian_gradient", "riemannian_hessian", "hessian_matvec",
    "to_tangent", "ambient_gradient", "write_components", "read_components",
    "NORMALIZATIONS",
]

NORMALIZATIONS = ("objective", "quarter")
_SCALE = {"objective": 4.0, "quarter": 1.0}


class ComponentSet:
    """Immutable d x n matrix of tensor components (column i is a_i)."""

    __slots__ = ("_A",)

    def __init__(self, A):
        A = np.array(A, dtype=float, copy=True)
        if A.ndim != 2:
            raise ValueError("component matrix must be 2-d (d x n)")
        d, n = A.shape
        if d < 2:
            raise ValueError(f"need d >= 2, got d={d}")
        if n < 1:
            raise ValueError(f"need n >= 1, got n={n}")
        if not np.isfinite(A).all():
            raise ValueError("component matrix has non-finite entries")
        A.setflags(write=False)
        self._A = A

    @property
    def A(self):
        return self._A

    @property
    def d(self):
        return self._A.shape[0]

    @property
    def n(self):
        return self._A.shape[1]

    @property
    def norms(self):
        return np.linalg.norm(self._A, axis=0)

    @property
    def unit_columns(self):
        """Columns scaled to unit length (the abar_i)."""
        return self._A / self.norms

    def __eq__(self, other):
        return isinstance(other, ComponentSet) and np.array_equal(self._A, other._A)

    def __hash__(self):
        return hash(self._A.tobytes())

    def __repr__(self):
        return f"ComponentSet(d={self.d}, n={self.n})"


class SpherePoint:
    """A point on the unit sphere; the input is renormalized on construction."""

    __slots__ = ("_x",)

    def __init__(self, x):
        if isinstance(x, SpherePoint):
            x = x.x
        x = np.array(x, dtype=float, copy=True).ravel()
        nrm = np.linalg.norm(x)
        if not np.isfinite(nrm) or nrm == 0.0:
            raise ValueError("cannot place a zero or non-finite vector on the sphere")
        x /= nrm
        x.setflags(write=False)
        self._x = x

    @property
    def x(self):
        return self._x

    @property
    def d(self):
        return self._x.shape[0]

    def projector(self):
        """Dense tangent projector P_x = I - x x^T."""
        return np.eye(self.d) - np.outer(self._x, self._x)

    def __neg__(self):
        return SpherePoint(-self._x)

    def __repr__(self):
        return f"SpherePoint(d={self.d})"


@dataclass(frozen=True)
class CorrelationProfile:
    """Correlations alpha_i = <a_i, x> with cached p-norms."""

    alpha: np.ndarray
    l2sq: float = field(init=False)
    l4: float = field(init=False)   # ||alpha||_4^4
    l6: float = field(init=False)   # ||alpha||_6^6
    l8: float = field(init=False)   # ||alpha||_8^8
    linf: float = field(init=False)

    def __post_init__(self):
        a = np.array(self.alpha, dtype=float, copy=True).ravel()
        a.setflags(write=False)
        object.__setattr__(self, "alpha", a)
        a2 = a * a
        object.__setattr__(self, "l2sq", float(a2.sum()))
        object.__setattr__(self, "l4", float((a2 * a2).sum()))
        object.__setattr__(self, "l6", float((a2 * a2 * a2).sum()))
        object.__setattr__(self, "l8", float(((a2 * a2) ** 2).sum()))
        object.__setattr__(self, "linf", float(np.abs(a).max()) if a.size else 0.0)

    @property
    def n(self):
        return self.alpha.shape[0]


def _mat(A):
    if isinstance(A, ComponentSet):
        return A.A
    A = np.asarray(A, dtype=float)
    if A.ndim != 2:
        raise ValueError("component matrix must be 2-d (d x n)")
    return A


def _vec(x, d=None):
    if isinstance(x, SpherePoint):
        x = x.x
    else:
        x = np.asarray(x, dtype=float).ravel()
    if d is not None and x.shape[0] != d:
        raise ValueError(f"dimension mismatch: point has length {x.shape[0]}, components have d={d}")
    return x


def _check_norm(normalization):
    if normalization not in _SCALE:
        raise ValueError(f"normalization must be one of {NORMALIZATIONS}, got {normalization!r}")
    return _SCALE[normalization]


def sample_components(d, n, seed):
    """Draw a d x n matrix of i.i.d. standard normal entries.

    The draw uses the ``("components",)`` stream of ``seed`` so it is
    reproducible across platforms.
    """
    d, n = int(d), int(n)
    if d < 2 or n < 1:
        raise ValueError(f"need d >= 2 and n >= 1, got d={d}, n={n}")
    rng = make_rng(seed, "components")
    return ComponentSet(rng.standard_normal((d, n)))


def correlations(A, x):
    """Return the CorrelationProfile of ``x`` against the components."""
    A = _mat(A)
    x = _vec(x, A.shape[0])
    return CorrelationProfile(A.T @ x)


def eval_objective(A, x):
    """f(x) = sum_i <a_i, x>^4 (no 1/4 factor)."""
    A = _mat(A)
    a2 = (A.T @ _vec(x, A.shape[0])) ** 2
    return float(a2 @ a2)


def dense_tensor_eval(A, x):
    """Reference f(x) by materializing the full d^4 tensor (d <= 12 only)."""
    A = _mat(A)
    d = A.shape[0]
    if d > 12:
        raise ValueError(f"dense tensor limited to d <= 12 (got d={d})")
    x = _vec(x, d)
    T = np.einsum("ia,ja,ka,la->ijkl", A, A, A, A)
    return float(np.einsum("ijkl,i,j,k,l->", T, x, x, x, x))


def ambient_gradient(A, x):
    """Euclidean gradient 4 sum alpha_i^3 a_i of f in R^d."""
    A = _mat(A)
    return 4.0 * (A @ (A.T @ _vec(x, A.shape[0])) ** 3)


def to_tangent(x, v, tol=1e-8):
    """Project ``v`` onto the tangent space at ``x``.

    Raises if ``v`` has a normal component larger than ``tol`` relative to
    max(1, ||v||); small residue from round-off is projected away.
    """
    x = _vec(x)
    v = np.asarray(v, dtype=float).ravel()
    if v.shape != x.shape:
        raise ValueError("tangent vector and base point differ in length")
    r = float(x @ v)
    if abs(r) > tol * max(1.0, float(np.linalg.norm(v))):
        raise ValueError(f"vector is not tangent at x (normal component {r:.3g})")
    return v - r * x


def riemannian_gradient(A, x, normalization="objective"):
    """Sphere gradient P_x sum alpha_i^3 a_i, scaled by 4 for ``objective``."""
    s = _check_norm(normalization)
    A = _mat(A)
    x = _vec(x, A.shape[0])
    g = A @ (A.T @ x) ** 3
    g = g - (x @ g) * x
    return s * g


def riemannian_hessian(A, x, normalization="objective"):
    """Dense Riemannian Hessian (d x d), zero on the normal direction."""
    s = _check_norm(normalization)
    A = _mat(A)
    x = _vec(x, A.shape[0])
    d = A.shape[0]
    alpha = A.T @ x
    B = A - np.outer(x, alpha)          # columns P_x a_i
    P = np.eye(d) - np.outer(x, x)
    H = 3.0 * (B * alpha ** 2) @ B.T - float(np.sum(alpha ** 4)) * P
    H = 0.5 * (H + H.T)
    return s * H


def hessian_matvec(A, x, xi, normalization="objective"):
    """Hessian-vector product in O(nd) without forming the d x d matrix."""
    s = _check_norm(normalization)
    A = _mat(A)
    x = _vec(x, A.shape[0])
    xi = to_tangent(x, xi)
    alpha = A.T @ x
    v = A @ (alpha ** 2 * (A.T @ xi))
    v = v - (x @ v) * x
    return s * (3.0 * v - float(np.sum(alpha ** 4)) * xi)


def write_components(path, A):
    """Write components as CSV: header ``d,n`` then d rows of n floats."""
    A = _mat(A)
    d, n = A.shape
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(f"{d},{n}\n")
        for row in A:
            fh.write(",".join(format(float(v), ".17g") for v in row))
            fh.write("\n")


def read_components(path):
    """Read a component CSV written by :func:`write_components`."""
    with open(path, "r", encoding="ascii") as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines:
        raise ValueError(f"{path}: empty component file")
    try:
        d, n = (int(t) for t in lines[0].split(","))
    except ValueError as exc:
        raise ValueError(f"{path}:1: header must be 'd,n'") from exc
    if len(lines) - 1 != d:
        raise ValueError(f"{path}: expected {d} data rows, found {len(lines) - 1}")
    A = np.empty((d, n))
    for r, ln in enumerate(lines[1:]):
        parts = ln.split(",")
        if len(parts) != n:
            raise ValueError(f"{path}:{r + 2}: expected {n} values, found {len(parts)}")
        try:
            A[r] = [float(t) for t in parts]
        except ValueError as exc:
            raise ValueError(f"{path}:{r + 2}: {exc}") from exc
    return ComponentSet(A)
