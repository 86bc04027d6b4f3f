"""Gaussian-process surrogates with an ARD categorical (Hamming) kernel.

One independent GP is fit per stress objective on standardized outputs. The
kernel is eta * exp(-(1/A) * sum_j theta_j * 1{x1_j != x2_j}); the per-bit
weights theta_j double as an adopter-relevance measure.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular
from scipy.optimize import minimize

JITTER_START = 1e-8
JITTER_MAX = 1e-4
THETA_SCALE_CAP = 1e3  # theta upper bound is THETA_SCALE_CAP * A


class NumericalError(RuntimeError):
    """Raised when a covariance cannot be factorized even after max jitter."""


@dataclass(frozen=True)
class KernelParams:
    """Output scale, per-bit ARD weights and noise variance (nugget)."""

    eta: float
    theta: np.ndarray
    noise: float

    def __post_init__(self):
        if self.eta <= 0 or self.noise <= 0:
            raise ValueError("eta and noise must be positive")
        theta = np.asarray(self.theta, dtype=float)
        if np.any(theta < 0) or not np.all(np.isfinite(theta)):
            raise ValueError("theta must be finite and non-negative")
        object.__setattr__(self, "theta", theta)


@dataclass(frozen=True)
class JointPosterior:
    """Joint predictive normal over a candidate set, with a cached factor."""

    mean: np.ndarray
    covariance: np.ndarray
    chol: np.ndarray


def kernel_eval(params: KernelParams, x1, x2) -> float:
    """Kernel value between two binary scenarios."""
    a1 = np.asarray(x1, dtype=float)
    a2 = np.asarray(x2, dtype=float)
    if a1.shape != a2.shape or a1.shape != params.theta.shape:
        raise ValueError("scenario lengths do not match")
    mismatch = a1 != a2
    return float(params.eta * np.exp(-params.theta[mismatch].sum() / len(a1)))


def gram_matrix(params: KernelParams, x1: np.ndarray, x2: np.ndarray | None = None) -> np.ndarray:
    """Kernel matrix between two scenario sets (rows are scenarios)."""
    x1 = np.asarray(x1, dtype=float)
    x2 = x1 if x2 is None else np.asarray(x2, dtype=float)
    a = x1.shape[1]
    # Weighted mismatch: m_j = u + v - 2uv for binary coordinates.
    t = params.theta
    w = (x1 @ t)[:, None] + (x2 @ t)[None, :] - 2.0 * (x1 * t) @ x2.T
    return params.eta * np.exp(-w / a)


def _chol_with_jitter(mat: np.ndarray) -> tuple[np.ndarray, float]:
    """Lower Cholesky factor with escalating diagonal jitter."""
    jitter = 0.0
    eye = np.eye(mat.shape[0])
    while True:
        try:
            return cholesky(mat + jitter * eye, lower=True), jitter
        except np.linalg.LinAlgError:
            pass
        except ValueError:
            pass
        jitter = JITTER_START if jitter == 0.0 else jitter * 10.0
        if jitter > JITTER_MAX:
            raise NumericalError(
                f"covariance not factorizable after jitter {JITTER_MAX:g}"
            )


def _log_marginal_likelihood_and_grad(
    phi: np.ndarray, x: np.ndarray, y: np.ndarray
) -> tuple[float, np.ndarray]:
    """Negative LML and its gradient in (log eta, rho, log noise) coordinates.

    theta = softplus(rho) keeps the ARD weights non-negative while leaving the
    optimizer unconstrained in sign.
    """
    n, a = x.shape
    log_eta, rho, log_noise = phi[0], phi[1:-1], phi[-1]
    theta = np.logaddexp(0.0, rho)  # softplus
    eta = np.exp(log_eta)
    noise = np.exp(log_noise)
    params = KernelParams(eta=eta, theta=theta, noise=noise)
    k = gram_matrix(params, x)
    ky = k + noise * np.eye(n)
    try:
        low = cholesky(ky, lower=True)
    except np.linalg.LinAlgError:
        return 1e12, np.zeros_like(phi)
    alpha = cho_solve((low, True), y)
    lml = (
        -0.5 * float(y @ alpha)
        - float(np.log(np.diag(low)).sum())
        - 0.5 * n * np.log(2.0 * np.pi)
    )
    ky_inv = cho_solve((low, True), np.eye(n))
    g = np.outer(alpha, alpha) - ky_inv
    h = g * k
    grad = np.empty_like(phi)
    grad[0] = 0.5 * h.sum()  # d/d log eta: dK = K
    # d/d theta_j: dK = -(1/A) K o M_j with M_j from binary mismatch identity.
    row = h.sum(axis=1)
    quad = np.sum(x * (h @ x), axis=0)
    t_j = 2.0 * (x.T @ row) - 2.0 * quad
    sig = 1.0 / (1.0 + np.exp(-rho))  # softplus derivative
    grad[1:-1] = 0.5 * (-1.0 / a) * t_j * sig
    grad[-1] = 0.5 * noise * np.trace(g)
    return -lml, -grad


def _inv_softplus(x) -> np.ndarray:
    """Stable inverse of softplus; identity in the linear regime."""
    x = np.asarray(x, dtype=float)
    return np.where(x > 30.0, x, np.log(np.expm1(np.clip(x, 1e-12, 30.0))))


def log_marginal_likelihood(
    params: KernelParams, x: np.ndarray, y: np.ndarray
) -> float:
    """LML of standardized outputs under the given hyperparameters."""
    rho = _inv_softplus(params.theta)
    phi = np.concatenate(
        [[np.log(params.eta)], rho, [np.log(params.noise)]]
    )
    neg, _ = _log_marginal_likelihood_and_grad(phi, x, y)
    return -neg


def fit_hyperparameters(
    train_inputs,
    train_outputs,
    init: KernelParams,
    num_restarts: int = 5,
    seed: int = 0,
) -> KernelParams:
    """Maximize the log marginal likelihood by multi-start L-BFGS.

    Outputs are standardized internally, so the returned hyperparameters live
    on the standardized scale (the scale :class:`GPSurrogate` fits on).
    Degenerate (constant) outputs short-circuit to the init with a variance
    floor on eta. Deterministic for a fixed seed.
    """
    x = np.asarray(train_inputs, dtype=float)
    y = np.asarray(train_outputs, dtype=float)
    if x.ndim != 2 or len(y) != x.shape[0] or x.shape[0] < 2:
        raise ValueError("need >= 2 training points with matching shapes")
    n, a = x.shape
    y_std = float(np.std(y))
    if y_std < 1e-12:
        return KernelParams(eta=max(float(np.var(y)), 1e-6), theta=init.theta, noise=init.noise)
    y = (y - float(np.mean(y))) / y_std

    rho_cap = float(_inv_softplus(THETA_SCALE_CAP * a))
    bounds = (
        [(np.log(1e-4), np.log(1e4))]
        + [(-20.0, rho_cap)] * a
        + [(np.log(1e-7), np.log(10.0))]
    )

    rng = np.random.default_rng(seed)
    init_rho = _inv_softplus(init.theta)
    starts = [
        np.concatenate([[np.log(init.eta)], init_rho, [np.log(init.noise)]])
    ]
    for _ in range(num_restarts - 1):
        starts.append(
            np.concatenate(
                [
                    [rng.normal(0.0, 1.0)],
                    rng.normal(0.0, 1.0, size=a),
                    [rng.uniform(np.log(1e-6), np.log(1e-1))],
                ]
            )
        )

    best_phi, best_val = starts[0], np.inf
    for phi0 in starts:
        phi0 = np.clip(phi0, [b[0] for b in bounds], [b[1] for b in bounds])
        res = minimize(
            _log_marginal_likelihood_and_grad,
            phi0,
            args=(x, y),
            jac=True,
            method="L-BFGS-B",
            bounds=bounds,
        )
        if res.fun < best_val:
            best_val, best_phi = res.fun, res.x
    return KernelParams(
        eta=float(np.exp(best_phi[0])),
        theta=np.logaddexp(0.0, best_phi[1:-1]),
        noise=float(np.exp(best_phi[-1])),
    )


@dataclass(frozen=True)
class GPSurrogate:
    """A fitted zero-mean GP over standardized outputs (immutable)."""

    params: KernelParams
    train_inputs: np.ndarray
    train_outputs: np.ndarray   # standardized
    factor: np.ndarray          # lower Cholesky of K + noise*I (+ jitter)
    alpha: np.ndarray           # (K + noise*I)^-1 train_outputs
    output_mean: float
    output_scale: float

    @classmethod
    def build(cls, train_inputs, train_outputs, params: KernelParams) -> "GPSurrogate":
        """Factorize the training covariance for the given hyperparameters."""
        x = np.asarray(train_inputs, dtype=float)
        y_raw = np.asarray(train_outputs, dtype=float)
        mean = float(np.mean(y_raw))
        scale = float(np.std(y_raw))
        if scale < 1e-12:
            scale = 1.0
        y = (y_raw - mean) / scale
        ky = gram_matrix(params, x) + params.noise * np.eye(len(x))
        low, _ = _chol_with_jitter(ky)
        alpha = cho_solve((low, True), y)
        return cls(
            params=params,
            train_inputs=x,
            train_outputs=y,
            factor=low,
            alpha=alpha,
            output_mean=mean,
            output_scale=scale,
        )


def posterior(gp: GPSurrogate, candidates) -> JointPosterior:
    """Joint predictive distribution over candidates, on the original scale."""
    xc = np.asarray([np.asarray(c, dtype=float) for c in candidates])
    if xc.ndim != 2 or xc.shape[0] < 1:
        raise ValueError("need at least one candidate")
    k_star = gram_matrix(gp.params, xc, gp.train_inputs)
    mean = k_star @ gp.alpha
    v = solve_triangular(gp.factor, k_star.T, lower=True)
    cov = gram_matrix(gp.params, xc) - v.T @ v
    cov = 0.5 * (cov + cov.T)
    # Factorize on the standardized scale so the stabilizing jitter stays
    # small relative to the data spread after de-standardization.
    low, _ = _chol_with_jitter(cov)
    mean = gp.output_mean + gp.output_scale * mean
    cov = gp.output_scale**2 * cov
    return JointPosterior(mean=mean, covariance=cov, chol=gp.output_scale * low)


def sample_joint(post: JointPosterior, num_samples: int, seed) -> np.ndarray:
    """Draw num_samples x M joint samples; deterministic per seed."""
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((num_samples, len(post.mean)))
    return post.mean[None, :] + z @ post.chol.T


def adopter_relevance(params: KernelParams) -> np.ndarray:
    """Per-adopter relevance 1 - exp(-theta_j / A), in [0, 1)."""
    a = len(params.theta)
    return 1.0 - np.exp(-params.theta / a)
