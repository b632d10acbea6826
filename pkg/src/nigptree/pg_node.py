"""Binary sparse GP classifier with Polya-Gamma augmented variational inference.

Model, for labels ``y in {0, 1}`` and ``kappa = y - 1/2``::

    p(u) = N(0, Kmm),  f | u ~ N(Knm Kmm^-1 u, diag(Knn - Qnn)),
    p(y_i | f_i) = exp(kappa_i f_i) / (2 cosh(f_i / 2))

with ``q(u) = N(q_mean, q_cov)`` and ``q(w_i) = PG(1, c_i)``. Coordinate
ascent alternates the closed-form optimum for ``c`` and for ``q(u)``; each
step maximizes the bound exactly, so the ELBO never decreases.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular

from ._cluster import kmeans
from .kernels import DimensionError, kernel_from_dict

LOG2 = np.log(2.0)
JITTER_REL = 1e-6
JITTER_MAX_REL = 1e-2


class IllConditionedError(np.linalg.LinAlgError):
    pass


class DegenerateNodeError(ValueError):
    pass


@dataclass(frozen=True)
class LatentPrediction:
    mean: float
    variance: float


@dataclass(frozen=True)
class NoiseModel:
    """Diagonal input-noise variances, one per feature."""

    sigma_x: np.ndarray

    def __post_init__(self):
        s = np.atleast_1d(np.asarray(self.sigma_x, dtype=float))
        if s.ndim != 1 or not np.all(np.isfinite(s)) or np.any(s < 0):
            raise ValueError("sigma_x must be a finite nonnegative vector")
        object.__setattr__(self, "sigma_x", s)

    @classmethod
    def zeros(cls, d):
        return cls(np.zeros(d))


def pg_mean(c):
    """E[w] for w ~ PG(1, c), i.e. tanh(c/2) / (2c), continuous at c = 0."""
    c = np.abs(np.asarray(c, dtype=float))
    small = c < 1e-4
    safe = np.where(small, 1.0, c)
    return np.where(small, 0.25 - c ** 2 / 48.0, np.tanh(safe / 2.0) / (2.0 * safe))


def log_cosh_half(c):
    c = np.asarray(c, dtype=float)
    return np.logaddexp(c / 2.0, -c / 2.0) - LOG2


def jittered_cholesky(K, jitter, scale):
    """Lower Cholesky factor of ``K + jitter I``, doubling jitter on failure.

    Returns ``(L, jitter_used)``.
    """
    cap = JITTER_MAX_REL * scale
    eye = np.eye(K.shape[0])
    while True:
        try:
            return cholesky(K + jitter * eye, lower=True), jitter
        except np.linalg.LinAlgError:
            if jitter * 2.0 > cap:
                raise IllConditionedError("ill-conditioned kernel matrix") from None
            jitter *= 2.0


def _binary_labels(y, n):
    y = np.asarray(y)
    if y.shape != (n,):
        raise DimensionError(f"labels have shape {y.shape}, expected ({n},)")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("binary labels must be 0 or 1")
    return y.astype(float) - 0.5


class PGNode:
    """State of one binary node.

    ``inducing`` are the m pseudo-input locations, ``(q_mean, q_cov)`` the
    Gaussian over the inducing values and ``pg_c`` the per-instance PG tilts.
    """

    def __init__(self, kernel, inducing, q_mean, q_cov, pg_c, jitter):
        self.kernel = kernel
        self.inducing = np.asarray(inducing, dtype=float)
        self.q_mean = np.asarray(q_mean, dtype=float)
        self.q_cov = np.asarray(q_cov, dtype=float)
        self.pg_c = None if pg_c is None else np.asarray(pg_c, dtype=float)
        self.jitter = float(jitter)
        if self.inducing.ndim != 2 or self.inducing.shape[1] != kernel.input_dim:
            raise DimensionError(
                f"inducing locations have dimension {self.inducing.shape[-1]}, "
                f"kernel has dimension {kernel.input_dim}")

    @property
    def m(self):
        return self.inducing.shape[0]

    @classmethod
    def init(cls, X, y, kernel, m, rng=None, inducing=None, kmeans_iter=50):
        """Place inducing points by k-means and set q(u) to the prior."""
        X = np.asarray(X, dtype=float)
        n = X.shape[0]
        if X.ndim != 2 or X.shape[1] != kernel.input_dim:
            raise DimensionError(
                f"data has dimension {X.shape[-1]}, kernel has dimension {kernel.input_dim}")
        y = np.asarray(y)
        if n < 2 or np.unique(y).size < 2:
            raise DegenerateNodeError("degenerate node: both labels are required")
        _binary_labels(y, n)
        if inducing is None:
            if not 1 <= m <= n:
                raise ValueError(f"need 1 <= m <= n, got m={m}, n={n}")
            rng = np.random.default_rng(rng)
            inducing = kmeans(X, m, rng, n_iter=kmeans_iter)
        inducing = np.asarray(inducing, dtype=float)
        Kmm = kernel.gram(inducing, inducing)
        _, jitter = jittered_cholesky(Kmm, JITTER_REL * kernel.output_scale,
                                      kernel.output_scale)
        q_cov = Kmm + jitter * np.eye(inducing.shape[0])
        return cls(kernel, inducing, np.zeros(inducing.shape[0]), q_cov, np.ones(n), jitter)

    # -- shared pieces ---------------------------------------------------
    def _prior_factor(self):
        Kmm = self.kernel.gram(self.inducing, self.inducing)
        L, self.jitter = jittered_cholesky(Kmm, self.jitter, self.kernel.output_scale)
        return Kmm + self.jitter * np.eye(self.m), L

    def _latent_moments(self, L, X):
        """Mean and variance of q(f) at the rows of X, plus ``A = Kmm^-1 Kmx``."""
        Kmx = self.kernel.gram(self.inducing, X)
        A = cho_solve((L, True), Kmx)
        mean = A.T @ self.q_mean
        var = (self.kernel.diag(X) - np.sum(Kmx * A, axis=0)
               + np.sum(A * (self.q_cov @ A), axis=0))
        return mean, var, A, Kmx

    def _check_data(self, X, y):
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.kernel.input_dim:
            raise DimensionError(
                f"data has dimension {X.shape[-1]}, node has dimension {self.kernel.input_dim}")
        kappa = _binary_labels(y, X.shape[0])
        if self.pg_c is None or self.pg_c.shape[0] != X.shape[0]:
            self.pg_c = np.ones(X.shape[0])
        return X, kappa

    # -- inference -------------------------------------------------------
    def update_variational(self, X, y):
        """One coordinate-ascent sweep: PG tilts, then q(u)."""
        X, kappa = self._check_data(X, y)
        Kj, L = self._prior_factor()
        mean, var, _, Kmn = self._latent_moments(L, X)
        self.pg_c = np.sqrt(np.maximum(mean ** 2 + var, 1e-300))
        theta = pg_mean(self.pg_c)
        # q_cov = (Kmm^-1 + A diag(theta) A^T)^-1 = Kmm B^-1 Kmm,
        # B = Kmm + Kmn diag(theta) Knm
        B = Kj + (Kmn * theta) @ Kmn.T
        try:
            LB = cholesky(B, lower=True)
        except np.linalg.LinAlgError:
            raise IllConditionedError("ill-conditioned kernel matrix") from None
        R = solve_triangular(LB, Kj, lower=True)
        self.q_cov = R.T @ R
        self.q_mean = Kj @ cho_solve((LB, True), Kmn @ kappa)
        return self

    def elbo(self, X, y):
        X, kappa = self._check_data(X, y)
        Kj, L = self._prior_factor()
        return self._elbo(L, X, kappa)

    def _elbo(self, L, X, kappa):
        mean, var, _, _ = self._latent_moments(L, X)
        c = self.pg_c
        theta = pg_mean(c)
        fit = np.sum(-LOG2 + kappa * mean - 0.5 * theta * (mean ** 2 + var)
                     - log_cosh_half(c) + 0.5 * c ** 2 * theta)
        value = fit - self.kl_divergence(L)
        if not np.isfinite(value):
            raise FloatingPointError("non-finite ELBO")
        return float(value)

    def kl_divergence(self, L=None):
        """KL(q(u) || p(u))."""
        if L is None:
            _, L = self._prior_factor()
        try:
            Lq = cholesky(self.q_cov, lower=True)
        except np.linalg.LinAlgError:
            raise IllConditionedError("variational covariance is not positive definite") from None
        M = solve_triangular(L, Lq, lower=True)
        a = solve_triangular(L, self.q_mean, lower=True)
        logdet_p = 2.0 * np.sum(np.log(np.diag(L)))
        logdet_q = 2.0 * np.sum(np.log(np.diag(Lq)))
        return 0.5 * (np.sum(M ** 2) + a @ a - self.m + logdet_p - logdet_q)

    def elbo_grad(self, X, y):
        """ELBO and its gradient in (kernel params, inducing locations) at fixed q and c."""
        X, kappa = self._check_data(X, y)
        Kj, L = self._prior_factor()
        value = self._elbo(L, X, kappa)
        Kmn = self.kernel.gram(self.inducing, X)
        Kinv = cho_solve((L, True), np.eye(self.m))
        A = Kinv @ Kmn
        mu, S = self.q_mean, self.q_cov
        theta = pg_mean(self.pg_c)
        v = Kinv @ mu
        b = A.T @ mu
        G_A = np.outer(mu, kappa - theta * b) - (S @ A) * theta
        G_Kmn = Kinv @ G_A + A * theta
        G_K = (-Kinv @ G_A @ A.T - 0.5 * (A * theta) @ A.T
               + 0.5 * (Kinv @ S @ Kinv + np.outer(v, v) - Kinv))
        dp1, dZa, dZb = self.kernel.gram_vjp(self.inducing, self.inducing, G_K)
        dp2, dZc, _ = self.kernel.gram_vjp(self.inducing, X, G_Kmn)
        dp3 = self.kernel.diag_vjp(-0.5 * theta)
        return value, dp1 + dp2 + dp3, dZa + dZb + dZc

    def step_hyperparameters(self, X, y, optimizer, ard=False, max_halvings=6):
        """One ascent step on kernel params and inducing locations.

        Without ``ard`` the lengthscales of each kernel term move together
        (gradient of a shared lengthscale). The step is halved until the
        ELBO (at fixed q and c) does not drop; if it never succeeds the
        parameters are left alone. Returns the ELBO after the step.
        """
        value, g_params, g_Z = self.elbo_grad(X, y)
        _, kappa = self._check_data(X, y)
        if not ard:
            q, d = self.kernel.n_components, self.kernel.input_dim
            g_ls = g_params[: q * d].reshape(q, d)
            g_params = np.concatenate([np.repeat(g_ls.sum(axis=1), d), g_params[q * d:]])
        grad = np.concatenate([g_params, g_Z.ravel()])
        if not np.all(np.isfinite(grad)):
            raise FloatingPointError("non-finite ELBO gradient")
        direction = optimizer.direction(grad)
        start_kernel, start_Z, start_jitter = self.kernel, self.inducing, self.jitter
        x0 = np.concatenate([start_kernel.params, start_Z.ravel()])
        n_k = start_kernel.n_params
        scale = 1.0
        for _ in range(max_halvings + 1):
            x1 = x0 + scale * direction
            try:
                self.kernel = start_kernel.with_params(x1[:n_k])
                self.inducing = x1[n_k:].reshape(start_Z.shape)
                _, L = self._prior_factor()
                new_value = self._elbo(L, X, kappa)
            except (np.linalg.LinAlgError, FloatingPointError, ValueError):
                new_value = -np.inf
            if new_value >= value:
                return new_value
            self.kernel, self.inducing, self.jitter = start_kernel, start_Z, start_jitter
            scale *= 0.5
        return value

    # -- prediction ------------------------------------------------------
    def _check_points(self, Xs):
        Xs = np.asarray(Xs, dtype=float)
        single = Xs.ndim == 1
        Xs = np.atleast_2d(Xs)
        if Xs.shape[1] != self.kernel.input_dim:
            raise DimensionError(
                f"input has dimension {Xs.shape[1]}, node has dimension {self.kernel.input_dim}")
        return Xs, single

    def predict_f(self, Xs, noise=None):
        """Latent mean and variance at each row; adds the input-noise term when given."""
        Xs, _ = self._check_points(Xs)
        _, L = self._prior_factor()
        mean, var, _, _ = self._latent_moments(L, Xs)
        var = np.maximum(var, 1e-12 * self.kernel.output_scale)
        if noise is not None:
            sigma_x = _noise_vector(noise, Xs.shape[1])
            g = self._mean_grad(L, Xs)
            var = var + (g ** 2) @ sigma_x
        return mean, var

    def predict_latent(self, x_star):
        mean, var = self.predict_f(np.atleast_2d(x_star))
        return LatentPrediction(float(mean[0]), float(var[0]))

    def predict_latent_noisy(self, x_star, noise):
        mean, var = self.predict_f(np.atleast_2d(x_star), noise=noise)
        return LatentPrediction(float(mean[0]), float(var[0]))

    def _mean_grad(self, L, Xs):
        w = cho_solve((L, True), self.q_mean)
        G = np.broadcast_to(w, (Xs.shape[0], self.m))
        _, dX, _ = self.kernel.gram_vjp(Xs, self.inducing, G)
        return dX

    def mean_grad(self, x_star):
        """Gradient of the predictive mean with respect to the test input."""
        Xs, single = self._check_points(x_star)
        _, L = self._prior_factor()
        g = self._mean_grad(L, Xs)
        return g[0] if single else g

    # -- serialization ---------------------------------------------------
    def to_dict(self):
        return {
            "kernel": self.kernel.to_dict(),
            "inducing": self.inducing.tolist(),
            "q_mean": self.q_mean.tolist(),
            "q_cov": self.q_cov.tolist(),
            "pg_c": None if self.pg_c is None else self.pg_c.tolist(),
            "jitter": self.jitter,
        }

    @classmethod
    def from_dict(cls, state):
        return cls(kernel_from_dict(state["kernel"]), state["inducing"], state["q_mean"],
                   state["q_cov"], state.get("pg_c"), state["jitter"])


def _noise_vector(noise, d):
    sigma_x = noise.sigma_x if isinstance(noise, NoiseModel) else NoiseModel(noise).sigma_x
    if sigma_x.shape[0] != d:
        raise DimensionError(f"noise model has dimension {sigma_x.shape[0]}, input has {d}")
    return sigma_x


class Adam:
    """Adam ascent directions for one parameter vector."""

    def __init__(self, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = None
        self.v = None

    def direction(self, grad):
        if self.m is None or self.m.shape != grad.shape:
            self.m = np.zeros_like(grad)
            self.v = np.zeros_like(grad)
            self.t = 0
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad ** 2
        m_hat = self.m / (1 - self.beta1 ** self.t)
        v_hat = self.v / (1 - self.beta2 ** self.t)
        return self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


# function-style aliases
def init_node(X, y, kernel, m, rng=None, **kwargs):
    return PGNode.init(X, y, kernel, m, rng=rng, **kwargs)


def update_variational(node, X, y):
    return node.update_variational(X, y)


def elbo(node, X, y):
    return node.elbo(X, y)


def predict_latent(node, x_star):
    return node.predict_latent(x_star)


def predict_latent_noisy(node, x_star, noise):
    return node.predict_latent_noisy(x_star, noise)


def mean_grad(node, x_star):
    return node.mean_grad(x_star)
