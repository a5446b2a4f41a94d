"""One-class SVM (nu formulation) and a trimmed robust-covariance baseline.

Training solves the dual

    min 1/2 sum_ij a_i a_j k(x_i, x_j)   s.t.  0 <= a_i <= 1/(nu n),  sum a_i = 1

by pairwise coordinate updates with second-order working-set selection. A
point is accepted (+1) when sum_i a_i k(x_i, x) - rho >= 0.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from . import kernels

# Scores this close to zero are on the boundary: free support vectors sit at
# exactly zero in exact arithmetic, and rounding must not flip their label.
BOUNDARY_TOL = 1e-9


class ShapeError(ValueError):
    pass


@dataclass(frozen=True)
class Kernel:
    kind: str = "rbf"
    sigma: float = 1.0
    degree: int = 3

    def __post_init__(self):
        if self.kind == "rbf":
            if not self.sigma > 0:
                raise ValueError("RBF width must be > 0")
        elif self.kind == "poly":
            if int(self.degree) != self.degree or self.degree < 1:
                raise ValueError("polynomial degree must be an integer >= 1")
        else:
            raise ValueError(f"unknown kernel {self.kind!r}")

    @classmethod
    def rbf(cls, sigma: float) -> "Kernel":
        return cls("rbf", sigma=float(sigma))

    @classmethod
    def poly(cls, degree: int) -> "Kernel":
        return cls("poly", degree=int(degree))

    def gram(self, X, Y) -> np.ndarray:
        X = np.ascontiguousarray(X, dtype=float)
        Y = np.ascontiguousarray(Y, dtype=float)
        if X.ndim != 2 or Y.ndim != 2 or X.shape[1] != Y.shape[1]:
            raise ShapeError(f"incompatible shapes {X.shape} and {Y.shape}")
        if self.kind == "rbf":
            return kernels.rbf_gram(X, Y, float(self.sigma))
        return kernels.poly_gram(X, Y, float(self.degree))

    def spec(self) -> str:
        if self.kind == "rbf":
            return f"rbf sigma={self.sigma:.17g}"
        return f"poly p={self.degree}"

    @classmethod
    def parse(cls, text: str) -> "Kernel":
        kind, _, arg = text.strip().partition(" ")
        key, _, value = arg.partition("=")
        if kind == "rbf" and key == "sigma":
            return cls.rbf(float(value))
        if kind == "poly" and key == "p":
            return cls.poly(int(value))
        raise ValueError(f"bad kernel spec {text!r}")


def kernel_eval(k: Kernel, x, y) -> float:
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if x.shape != y.shape:
        raise ShapeError(f"dimension mismatch {x.shape} vs {y.shape}")
    return float(k.gram(x[None, :], y[None, :])[0, 0])


def median_heuristic(X) -> float:
    """Median pairwise squared distance, used as the RBF width."""
    X = np.asarray(X, dtype=float)
    diff = X[:, None, :] - X[None, :, :]
    sq = (diff * diff).sum(-1)[np.triu_indices(len(X), 1)]
    med = float(np.median(sq)) if sq.size else 0.0
    return med if med > 0 else 1.0


def dual_objective(alpha, K) -> float:
    alpha = np.asarray(alpha, dtype=float)
    return float(0.5 * alpha @ K @ alpha)


def initial_alpha(n: int, nu: float) -> np.ndarray:
    """Feasible start: the first floor(nu n) coefficients at the bound."""
    C = 1.0 / (nu * n)
    alpha = np.zeros(n)
    full = int(nu * n)
    alpha[:full] = C
    if full < n:
        alpha[full] = 1.0 - full * C
    return alpha


@dataclass(frozen=True)
class OcsvmModel:
    support_vectors: np.ndarray
    alphas: np.ndarray
    rho: float
    kernel: Kernel
    nu: float
    n_train: int = 0
    converged: bool = True
    iterations: int = 0

    @property
    def dim(self) -> int:
        return self.support_vectors.shape[1]

    @property
    def upper_bound(self) -> float:
        return 1.0 / (self.nu * self.n_train) if self.n_train else math.inf

    def scores(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.dim:
            raise ShapeError(f"model expects {self.dim} features, got {X.shape[1]}")
        return self.kernel.gram(X, self.support_vectors) @ self.alphas - self.rho

    def predict(self, X) -> np.ndarray:
        return np.where(self.scores(X) >= -BOUNDARY_TOL, 1, -1)

    def serialize(self) -> str:
        lines = [f"nu={self.nu:.17g}", f"kernel={self.kernel.spec()}", f"rho={self.rho:.17g}"]
        for a, sv in zip(self.alphas, self.support_vectors):
            lines.append(" ".join(format(v, ".17g") for v in (a, *sv)))
        return "\n".join(lines) + "\n"

    @classmethod
    def parse(cls, text: str) -> "OcsvmModel":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        try:
            nu = float(lines[0].split("=", 1)[1])
            kernel = Kernel.parse(lines[1].split("=", 1)[1])
            rho = float(lines[2].split("=", 1)[1])
            rows = np.array([[float(v) for v in ln.split()] for ln in lines[3:]], dtype=float)
        except (IndexError, ValueError) as exc:
            raise ValueError(f"malformed model text: {exc}") from None
        if rows.ndim != 2 or rows.shape[0] == 0 or rows.shape[1] < 2:
            raise ValueError("model text has no support vectors")
        return cls(rows[:, 1:].copy(), rows[:, 0].copy(), rho, kernel, nu)


def _recover_rho(G, alpha, C) -> float:
    eps = 1e-12 * C
    free = (alpha > eps) & (alpha < C - eps)
    if free.any():
        return float(G[free].mean())
    at_upper = alpha >= C - eps
    at_zero = alpha <= eps
    lb = G[at_upper].max() if at_upper.any() else G.min()
    ub = G[at_zero].min() if at_zero.any() else G.max()
    return float(0.5 * (lb + ub))


def _solve(data, nu, kernel, tol, max_passes):
    X = np.ascontiguousarray(data, dtype=float)
    if X.ndim != 2 or X.shape[0] < 2:
        raise ShapeError("need a 2-D array with at least 2 rows")
    if not 0 < nu <= 1:
        raise ValueError("nu must lie in (0, 1]")
    n = X.shape[0]
    kernel = kernel or Kernel.rbf(median_heuristic(X))
    K = kernel.gram(X, X)
    C = 1.0 / (nu * n)
    alpha = initial_alpha(n, nu)
    G, it, ok = kernels.smo_solve(K, C, alpha, tol, max_passes * n)
    rho = _recover_rho(G, alpha, C)
    sv = alpha > 0.0
    model = OcsvmModel(X[sv].copy(), alpha[sv].copy(), rho, kernel, nu, n, bool(ok), int(it))
    return model, alpha


def train(data, nu: float = 0.1, kernel: Kernel | None = None, tol: float = 1e-9,
          max_passes: int = 1000) -> OcsvmModel:
    """Fit a one-class SVM. ``kernel=None`` means RBF with the median heuristic.

    Stops once the maximal KKT violation drops below ``tol`` or after
    ``max_passes * n`` pair updates; in the latter case the returned model
    carries ``converged=False``.
    """
    return _solve(data, nu, kernel, tol, max_passes)[0]


def train_full(data, nu: float = 0.1, kernel: Kernel | None = None, tol: float = 1e-9,
               max_passes: int = 1000) -> tuple[OcsvmModel, np.ndarray]:
    """Like :func:`train` but also returns the coefficient of every training point."""
    return _solve(data, nu, kernel, tol, max_passes)


def decide(m: OcsvmModel, x) -> tuple[int, float]:
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.shape[0] != m.dim:
        raise ShapeError(f"model expects {m.dim} features, got shape {x.shape}")
    s = float(m.scores(x[None, :])[0])
    return (1 if s >= -BOUNDARY_TOL else -1), s


def qp_oracle(data, nu: float, k: Kernel, max_iter: int = 10**6):
    """Projected gradient descent on the same dual; ground truth for n <= 12."""
    X = np.ascontiguousarray(data, dtype=float)
    n = X.shape[0]
    if n > 12:
        raise ValueError("qp_oracle is limited to 12 points")
    K = k.gram(X, X)
    C = 1.0 / (nu * n)
    lmax = float(np.linalg.eigvalsh(K)[-1])
    step = 1.0 / lmax if lmax > 0 else 1.0
    alpha0 = np.full(n, 1.0 / n)
    alpha, _ = kernels.pgd_capped_simplex(K, C, alpha0, step, max_iter, 0.0)
    return alpha, dual_objective(alpha, K)


def _fit_gaussian(X):
    mean = X.mean(axis=0)
    cov = np.atleast_2d(np.cov(X, rowvar=False))
    if np.linalg.matrix_rank(cov) < cov.shape[0]:
        cov = cov + 1e-6 * np.eye(cov.shape[0])
    return mean, cov


def mahalanobis_sq(X, mean, cov) -> np.ndarray:
    diff = X - mean
    return np.einsum("ij,ij->i", diff, np.linalg.solve(cov, diff.T).T)


def robust_cov_outliers(data, contamination: float = 0.1, threshold: str = "chi2") -> np.ndarray:
    """Label points +1 / -1 with a once-trimmed Gaussian fit.

    Fit mean and covariance, drop the ``contamination`` share of points with
    the largest Mahalanobis distance, refit on the rest. ``threshold="chi2"``
    flags refit distances beyond the (1 - contamination) chi-square quantile;
    ``"quantile"`` instead flags exactly that share of points with the largest
    refit distance.
    """
    X = np.asarray(data, dtype=float)
    n, d = X.shape
    if n <= d + 1:
        raise ValueError(f"need more than {d + 1} points")
    if not 0 <= contamination < 1:
        raise ValueError("contamination must lie in [0, 1)")
    mean, cov = _fit_gaussian(X)
    k = int(round(contamination * n))
    if k > 0:
        d2 = mahalanobis_sq(X, mean, cov)
        keep = np.argsort(d2, kind="stable")[:n - k]
        mean, cov = _fit_gaussian(X[keep])
    d2 = mahalanobis_sq(X, mean, cov)
    labels = np.ones(n, dtype=int)
    if threshold == "chi2":
        if contamination > 0:
            labels[d2 > stats.chi2.ppf(1.0 - contamination, d)] = -1
    elif threshold == "quantile":
        if k > 0:
            labels[np.argsort(-d2, kind="stable")[:k]] = -1
    else:
        raise ValueError(f"unknown threshold rule {threshold!r}")
    return labels
