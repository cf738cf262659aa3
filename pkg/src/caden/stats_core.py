"""Statistical primitives used by the signature analysis and the trial engine.

Everything here is a pure function of its inputs. The logistic fitter works on
a batch of independent designs at once, which is how the per-covariate screens
stay cheap when there are thousands of covariates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

IRLS_MAX_ITER = 50
IRLS_TOL = 1e-8
SEPARATION_BOUND = 15.0
RIDGE = 1e-8
SINGULAR_RCOND = 1e-10
FISHER_REL_SLACK = 1e-7

DEFAULT_CONTRAST = (0.0, 0.0, 1.0, 1.0)


@dataclass(frozen=True)
class ContingencyTable2x2:
    """Counts laid out as ``[[a, b], [c, d]]``.

    Rows are arms (treatment first), columns are responder / non-responder.
    """

    a: int
    b: int
    c: int
    d: int

    def __post_init__(self):
        for name in ("a", "b", "c", "d"):
            value = getattr(self, name)
            if int(value) != value or value < 0:
                raise ValueError(f"table entry {name}={value!r} must be a non-negative integer")

    @classmethod
    def from_rows(cls, rows) -> "ContingencyTable2x2":
        (a, b), (c, d) = rows
        return cls(int(a), int(b), int(c), int(d))

    @property
    def total(self) -> int:
        return self.a + self.b + self.c + self.d

    @property
    def row_margins(self) -> tuple[int, int]:
        return self.a + self.b, self.c + self.d

    @property
    def col_margins(self) -> tuple[int, int]:
        return self.a + self.c, self.b + self.d


@dataclass
class LogisticFit:
    coefficients: np.ndarray
    covariance: np.ndarray
    converged: bool
    n_iterations: int
    separated: bool = False
    singular: bool = False


@dataclass(frozen=True)
class TestResult:
    statistic: float
    p_value: float
    method: str
    flagged: bool = False
    note: str = ""

    __test__ = False  # keep pytest from collecting this as a test class


@dataclass
class BatchLogisticFit:
    """Result of fitting ``B`` independent logistic models of equal width."""

    coefficients: np.ndarray  # (B, q)
    covariance: np.ndarray  # (B, q, q); NaN where the fit failed
    converged: np.ndarray  # (B,) bool
    n_iterations: np.ndarray  # (B,) int
    separated: np.ndarray = field(default=None)
    singular: np.ndarray = field(default=None)

    def __getitem__(self, i) -> LogisticFit:
        return LogisticFit(
            coefficients=self.coefficients[i].copy(),
            covariance=self.covariance[i].copy(),
            converged=bool(self.converged[i]),
            n_iterations=int(self.n_iterations[i]),
            separated=bool(self.separated[i]),
            singular=bool(self.singular[i]),
        )


def _expit(eta):
    return 1.0 / (1.0 + np.exp(-np.clip(eta, -700.0, 700.0)))


def _singular_mask(info):
    eig = np.linalg.eigvalsh(info)
    top = eig[..., -1]
    return ~(eig[..., 0] > SINGULAR_RCOND * np.maximum(top, 0.0)) | ~(top > 0)


def _solve_with_ridge(info, rhs):
    """Solve ``info @ x = rhs`` per batch element.

    A ridge of ``RIDGE * I`` is tried once on near-singular matrices. Returns the
    solution and a mask of elements that stayed singular (their rows are zero).
    """
    q = info.shape[-1]
    singular = _singular_mask(info)
    if singular.any():
        info = info.copy()
        info[singular] += RIDGE * np.eye(q)
        still = _singular_mask(info[singular])
        singular_final = np.zeros_like(singular)
        singular_final[np.flatnonzero(singular)[still]] = True
    else:
        singular_final = singular
    out = np.zeros_like(rhs)
    ok = ~singular_final
    if ok.any():
        out[ok] = np.linalg.solve(info[ok], rhs[ok][..., None])[..., 0]
    return out, singular_final


def _fisher_information(design, coefs):
    eta = np.einsum("bnq,bq->bn", design, coefs)
    p = _expit(eta)
    w = p * (1.0 - p)
    weighted = design * w[..., None]
    return np.matmul(weighted.transpose(0, 2, 1), design), p


def fit_logistic_batch(design, response, max_iter: int = IRLS_MAX_ITER, tol: float = IRLS_TOL) -> BatchLogisticFit:
    """Maximum-likelihood logistic regression by IRLS on a batch of designs.

    Args:
        design: array of shape ``(B, n, q)``; element ``b`` is one model matrix.
        response: 0/1 array of shape ``(n,)`` (shared) or ``(B, n)``.
        max_iter: iteration cap; hitting it leaves the element non-converged.
        tol: convergence threshold on the max absolute coefficient change.

    Elements whose coefficients leave ``[-15, 15]`` are treated as separated:
    they are clamped, frozen and reported non-converged. Singular information
    matrices get one ridge attempt before the element is given up on.
    """
    design = np.asarray(design, dtype=float)
    if design.ndim != 3:
        raise ValueError(f"design must be 3-D (B, n, q), got shape {design.shape}")
    B, n, q = design.shape
    y = np.asarray(response, dtype=float)
    if y.ndim == 1:
        y = np.broadcast_to(y, (B, n))
    if y.shape != (B, n):
        raise ValueError(f"response shape {y.shape} does not match design rows {n}")
    if n < q or q < 1:
        raise ValueError(f"need n >= q >= 1, got n={n}, q={q}")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("response entries must be 0 or 1")

    coefs = np.zeros((B, q))
    converged = np.zeros(B, dtype=bool)
    separated = np.zeros(B, dtype=bool)
    singular = np.zeros(B, dtype=bool)
    n_iter = np.zeros(B, dtype=int)
    active = np.arange(B)

    for _ in range(max_iter):
        if active.size == 0:
            break
        X = design[active]
        info, p = _fisher_information(X, coefs[active])
        grad = np.einsum("bnq,bn->bq", X, y[active] - p)
        step, sing = _solve_with_ridge(info, grad)
        n_iter[active] += 1

        new = coefs[active] + step
        blown = np.any(np.abs(new) > SEPARATION_BOUND, axis=1) & ~sing
        done = (np.max(np.abs(step), axis=1) < tol) & ~sing & ~blown
        coefs[active] = np.clip(new, -SEPARATION_BOUND, SEPARATION_BOUND)

        singular[active[sing]] = True
        separated[active[blown]] = True
        converged[active[done]] = True
        active = active[~(sing | blown | done)]

    covariance = np.full((B, q, q), np.nan)
    if converged.any():
        idx = np.flatnonzero(converged)
        info, _ = _fisher_information(design[idx], coefs[idx])
        bad = _singular_mask(info)
        good = idx[~bad]
        if good.size:
            cov = np.linalg.inv(info[~bad])
            covariance[good] = 0.5 * (cov + cov.transpose(0, 2, 1))
        converged[idx[bad]] = False
        singular[idx[bad]] = True

    return BatchLogisticFit(coefs, covariance, converged, n_iter, separated, singular)


def _sym2_singular(a, b, c):
    half = 0.5 * (a + c)
    rad = np.sqrt((0.5 * (a - c)) ** 2 + b * b)
    top, bottom = half + rad, half - rad
    return ~(bottom > SINGULAR_RCOND * np.maximum(top, 0.0)) | ~(top > 0)


def _solve2_with_ridge(a, b, c, g0, g1):
    """Vectorised ``[[a, b], [b, c]] @ x = g`` with the same ridge rule as above."""
    sing = _sym2_singular(a, b, c)
    if sing.any():
        a = np.where(sing, a + RIDGE, a)
        c = np.where(sing, c + RIDGE, c)
        sing = _sym2_singular(a, b, c)
    det = a * c - b * b
    det = np.where(sing, 1.0, det)
    x0 = np.where(sing, 0.0, (c * g0 - b * g1) / det)
    x1 = np.where(sing, 0.0, (a * g1 - b * g0) / det)
    return x0, x1, sing, (a, b, c, det)


def fit_arm_interactions(treatment, covariates, response, max_iter: int = IRLS_MAX_ITER,
                         tol: float = IRLS_TOL) -> BatchLogisticFit:
    """Batch of ``logit p = mu + lambda t + alpha x_j + beta t x_j``, one per column of X.

    With a binary arm indicator this model is saturated in the arm, so its
    likelihood factorises into an intercept-plus-slope logistic fit in each arm.
    Newton steps are affine invariant, so iterating the two arm fits follows the
    four-parameter IRLS path while only ever solving 2x2 systems. Each arm
    starts from its intercept-only solution rather than zero, which saves a
    couple of iterations.
    Coefficients come back ordered ``(mu, lambda, alpha, beta)``; the
    separation bound and stopping rule are applied to those four numbers.
    """
    t = np.asarray(treatment).astype(bool)
    X = np.asarray(covariates, dtype=float)
    y = np.asarray(response, dtype=float)
    if X.ndim != 2 or X.shape[0] != t.size or y.shape != t.shape:
        raise ValueError("treatment, covariates and response disagree in length")
    P = X.shape[1]
    # both arms in one zero-padded (2, P, m) block; padded rows carry no weight
    m = max(int(t.sum()), int((~t).sum()))
    Xs = np.zeros((2, P, m))
    ys = np.zeros((2, 1, m))
    mask = np.zeros((2, 1, m))
    theta = np.zeros((2, 2, P))  # arm, (intercept, slope), column
    for arm, sel in enumerate((~t, t)):
        k = int(sel.sum())
        Xs[arm, :, :k] = X[sel].T
        ys[arm, 0, :k] = y[sel]
        mask[arm, 0, :k] = 1.0
        rate = y[sel].mean() if k else 0.5
        if 0.0 < rate < 1.0:
            theta[arm, 0] = math.log(rate / (1.0 - rate))  # warm start: arm-only fit
    X2 = Xs * Xs

    converged = np.zeros(P, dtype=bool)
    separated = np.zeros(P, dtype=bool)
    singular = np.zeros(P, dtype=bool)
    n_iter = np.zeros(P, dtype=int)
    active = np.ones(P, dtype=bool)

    def four(th):
        return np.stack([th[0, 0], th[1, 0] - th[0, 0], th[0, 1], th[1, 1] - th[0, 1]])

    def moments(th):
        p = _expit(th[:, 0, :, None] + th[:, 1, :, None] * Xs)
        w = p * (1.0 - p) * mask
        return p, w.sum(-1), (w * Xs).sum(-1), (w * X2).sum(-1)

    for _ in range(max_iter):
        if not active.any():
            break
        p, s0, s1, s2 = moments(theta)
        r = (ys - p) * mask
        g0, g1 = r.sum(-1), (r * Xs).sum(-1)
        d0, d1, sg, _ = _solve2_with_ridge(s0, s1, s2, g0, g1)
        step = np.stack([d0, d1], axis=1)
        sing = sg.any(axis=0) & active
        step[:, :, ~active] = 0.0
        n_iter[active] += 1

        new = theta + step
        new4 = four(new)
        blown = np.any(np.abs(new4) > SEPARATION_BOUND, axis=0) & active & ~sing
        done = (np.max(np.abs(four(step)), axis=0) < tol) & active & ~sing & ~blown
        move = active & ~sing
        theta[:, :, move] = new[:, :, move]
        singular |= sing
        separated |= blown
        converged |= done
        active &= ~(sing | blown | done)

    coefs = np.clip(four(theta).T, -SEPARATION_BOUND, SEPARATION_BOUND)
    covariance = np.full((P, 4, 4), np.nan)
    if converged.any():
        _, a, b, c = moments(theta)
        bad = _sym2_singular(a, b, c).any(axis=0)
        det = a * c - b * b
        det = np.where(det == 0, 1.0, det)
        arm_cov = np.zeros((P, 4, 4))  # over (a0, a1, c0, c1)
        for arm in (0, 1):
            k = 2 * arm
            arm_cov[:, k, k] = c[arm] / det[arm]
            arm_cov[:, k + 1, k + 1] = a[arm] / det[arm]
            arm_cov[:, k, k + 1] = arm_cov[:, k + 1, k] = -b[arm] / det[arm]
        A = np.array([[1, 0, 0, 0], [-1, 0, 1, 0], [0, 1, 0, 0], [0, -1, 0, 1]], dtype=float)
        cov = A @ arm_cov @ A.T
        ok = converged & ~bad
        covariance[ok] = cov[ok]
        singular |= converged & bad
        converged &= ~bad

    return BatchLogisticFit(coefs, covariance, converged, n_iter, separated, singular)


def fit_logistic(design_matrix, response, max_iter: int = IRLS_MAX_ITER, tol: float = IRLS_TOL) -> LogisticFit:
    """Fit one logistic regression; see :func:`fit_logistic_batch`."""
    X = np.asarray(design_matrix, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(response, dtype=float).ravel()
    if X.shape[0] != y.shape[0]:
        raise ValueError(f"design has {X.shape[0]} rows but response has {y.shape[0]} entries")
    return fit_logistic_batch(X[None], y, max_iter=max_iter, tol=tol)[0]


def logistic_loglik(design_matrix, response, coefficients) -> float:
    X = np.asarray(design_matrix, dtype=float)
    y = np.asarray(response, dtype=float)
    eta = X @ np.asarray(coefficients, dtype=float)
    # log(1 + e^eta) evaluated stably
    return float(np.sum(y * eta - np.logaddexp(0.0, eta)))


def normal_cdf(z: float) -> float:
    return 0.5 * math.erfc(-z / math.sqrt(2.0))


def two_sided_normal_p(z: float) -> float:
    return min(1.0, math.erfc(abs(z) / math.sqrt(2.0)))


def chi2_1_sf(x: float) -> float:
    """Upper tail of a chi-square with one degree of freedom."""
    if x <= 0:
        return 1.0
    return math.erfc(math.sqrt(x / 2.0))


def log_comb(n: int, k: int) -> float:
    if k < 0 or k > n or n < 0:
        return -math.inf
    return math.lgamma(n + 1) - math.lgamma(k + 1) - math.lgamma(n - k + 1)


def hypergeom_log_pmf(k: int, K: int, n: int, N: int) -> float:
    """Log P(X = k) for k successes in n draws from N items, K of them successes."""
    if min(K, n, N) < 0 or K > N or n > N:
        return -math.inf
    if k < max(0, n + K - N) or k > min(n, K):
        return -math.inf
    return log_comb(K, k) + log_comb(N - K, n - k) - log_comb(N, n)


def two_proportion_test(successes_1: int, n_1: int, successes_2: int, n_2: int,
                        continuity_correction: bool = True) -> TestResult:
    """Two-sided test for a difference of two binomial proportions.

    Pooled-variance chi-square with one degree of freedom. With the continuity
    correction the absolute difference is shrunk by ``0.5 * (1/n_1 + 1/n_2)``,
    but never past zero.
    """
    if n_1 < 1 or n_2 < 1:
        raise ValueError(f"both arms need at least one trial, got n_1={n_1}, n_2={n_2}")
    if not (0 <= successes_1 <= n_1 and 0 <= successes_2 <= n_2):
        raise ValueError("successes must lie between 0 and the number of trials")

    p1, p2 = successes_1 / n_1, successes_2 / n_2
    pooled = (successes_1 + successes_2) / (n_1 + n_2)
    inv_n = 1.0 / n_1 + 1.0 / n_2
    if pooled in (0.0, 1.0):
        return TestResult(0.0, 1.0, "two_proportion_chisq", flagged=True, note="all outcomes identical")
    diff = abs(p1 - p2)
    if continuity_correction:
        diff = max(0.0, diff - min(0.5 * inv_n, diff))
    stat = diff * diff / (pooled * (1.0 - pooled) * inv_n)
    return TestResult(stat, chi2_1_sf(stat), "two_proportion_chisq")


def _log_factorials(n: int) -> np.ndarray:
    out = np.zeros(n + 1)
    if n:
        out[1:] = np.cumsum(np.log(np.arange(1, n + 1)))
    return out


def fisher_exact_test(table) -> TestResult:
    """Two-sided Fisher exact test on a 2x2 table.

    Sums the conditional (hypergeometric) probabilities of every table with the
    observed margins whose probability does not exceed the observed one, with
    a relative slack of 1e-7 so floating-point ties count as ties.
    """
    if not isinstance(table, ContingencyTable2x2):
        table = ContingencyTable2x2.from_rows(table)
    a, b, c, d = table.a, table.b, table.c, table.d
    N = table.total
    r1, _ = table.row_margins
    c1, _ = table.col_margins
    odds = _odds_ratio(a, b, c, d)
    if N == 0:
        return TestResult(odds, 1.0, "fisher_exact", flagged=True, note="empty table")

    lo, hi = max(0, r1 + c1 - N), min(r1, c1)
    if lo == hi:
        return TestResult(odds, 1.0, "fisher_exact", flagged=True, note="a margin is zero")
    lf = _log_factorials(N)
    x = np.arange(lo, hi + 1)
    # log C(r1, x) + log C(N - r1, c1 - x); the common denominator cancels below
    logp = -lf[x] - lf[r1 - x] - lf[c1 - x] - lf[N - r1 - c1 + x]
    obs = logp[a - lo]
    top = logp.max()
    weights = np.exp(logp - top)
    keep = logp <= obs + math.log1p(FISHER_REL_SLACK)
    p = float(weights[keep].sum() / weights.sum())
    return TestResult(odds, min(1.0, p), "fisher_exact")


def _odds_ratio(a, b, c, d) -> float:
    num, den = a * d, b * c
    if den == 0:
        return math.nan if num == 0 else math.inf
    return num / den


def sensitive_group_effect(treatment, sensitive, response, contrast=DEFAULT_CONTRAST) -> TestResult:
    """Wald test of a linear contrast in the treatment-by-subgroup logistic model.

    The model is ``logit p = mu + lambda*t + kappa*s + gamma*t*s`` with
    coefficients ordered ``(mu, lambda, kappa, gamma)``. The statistic is
    ``g.theta / sqrt(g' Sigma g)`` and the p-value is two-sided standard normal.

    Any empty treatment-by-subgroup cell or a non-converged fit yields
    ``p = 1`` with ``flagged=True``; a degenerate fit never signals promise.
    """
    t = np.asarray(treatment, dtype=float).ravel()
    s = np.asarray(sensitive, dtype=float).ravel()
    y = np.asarray(response, dtype=float).ravel()
    g = np.asarray(contrast, dtype=float).ravel()
    if g.shape != (4,):
        raise ValueError("contrast must have length 4 (mu, lambda, kappa, gamma)")
    if not (t.shape == s.shape == y.shape):
        raise ValueError("treatment, sensitive and response must have equal length")

    counts = np.bincount((2 * t + s).astype(int), minlength=4)
    if t.size == 0 or np.any(counts == 0):
        return TestResult(0.0, 1.0, "sensitive_group_wald", flagged=True, note="empty treatment-by-subgroup cell")

    design = np.column_stack([np.ones_like(t), t, s, t * s])
    fit = fit_logistic(design, y)
    if not fit.converged:
        return TestResult(0.0, 1.0, "sensitive_group_wald", flagged=True, note="logistic fit did not converge")
    var = float(g @ fit.covariance @ g)
    if not var > 0:
        return TestResult(0.0, 1.0, "sensitive_group_wald", flagged=True, note="non-positive contrast variance")
    z = float(g @ fit.coefficients) / math.sqrt(var)
    return TestResult(z, two_sided_normal_p(z), "sensitive_group_wald")
