"""RBF-family covariance functions.

All three families share one representation: a sum of scaled squared
exponentials ``s_q * exp(-alpha/2 * sum_d ((a_d - b_d) / l_qd)**2)``.

* :class:`RBF` is a single term with ``alpha = 1``.
* :class:`SumRBF` is 30 independent terms with ``alpha = 1``.
* :class:`PoweredRBF` is a single term raised to ``alpha``. The power is
  applied to the correlation part only, ``s * (k_rbf / s)**alpha``, so the
  output scale means the same thing for every family.

Hyperparameters are stored as logs; kernels are immutable and
:meth:`with_params` returns a new instance.
"""
from __future__ import annotations

import numpy as np

N_SUM_COMPONENTS = 30
ALPHA_RANGE = (0.9, 2.0)


class DimensionError(ValueError):
    pass


class _RbfSum:
    family = ""

    def __init__(self, log_lengthscales, log_output_scales, alpha=1.0):
        log_ls = np.atleast_2d(np.asarray(log_lengthscales, dtype=float))
        log_os = np.atleast_1d(np.asarray(log_output_scales, dtype=float))
        if log_ls.shape[0] != log_os.shape[0]:
            raise ValueError("one output scale per component is required")
        if not (np.all(np.isfinite(log_ls)) and np.all(np.isfinite(log_os))):
            raise ValueError("kernel hyperparameters must be finite and positive")
        self._log_ls = log_ls
        self._log_os = log_os
        self._log_ls.setflags(write=False)
        self._log_os.setflags(write=False)
        self.alpha = float(alpha)

    # -- descriptors -----------------------------------------------------
    @property
    def input_dim(self) -> int:
        return self._log_ls.shape[1]

    @property
    def n_components(self) -> int:
        return self._log_ls.shape[0]

    @property
    def lengthscales(self) -> np.ndarray:
        return np.exp(self._log_ls)

    @property
    def output_scales(self) -> np.ndarray:
        return np.exp(self._log_os)

    @property
    def output_scale(self) -> float:
        """Prior variance k(x, x)."""
        return float(np.sum(np.exp(self._log_os)))

    @property
    def params(self) -> np.ndarray:
        """Flat trainable vector: log-lengthscales (row-major), then log-output-scales."""
        return np.concatenate([self._log_ls.ravel(), self._log_os])

    @property
    def n_params(self) -> int:
        return self._log_ls.size + self._log_os.size

    def with_params(self, params):
        params = np.asarray(params, dtype=float)
        if params.shape != (self.n_params,):
            raise ValueError(f"expected {self.n_params} parameters, got {params.shape}")
        q, d = self._log_ls.shape
        return self._rebuild(params[: q * d].reshape(q, d), params[q * d:])

    def _rebuild(self, log_ls, log_os):
        return type(self)._from_logs(log_ls, log_os, self.alpha)

    @classmethod
    def _from_logs(cls, log_ls, log_os, alpha):
        obj = cls.__new__(cls)
        _RbfSum.__init__(obj, log_ls, log_os, alpha)
        return obj

    def __repr__(self):
        ls = np.array2string(self.lengthscales.mean(axis=1), precision=3)
        return (f"{type(self).__name__}(input_dim={self.input_dim}, "
                f"lengthscale~{ls}, output_scale={self.output_scale:.4g}, alpha={self.alpha})")

    def __eq__(self, other):
        return (type(self) is type(other) and self.alpha == other.alpha
                and np.array_equal(self._log_ls, other._log_ls)
                and np.array_equal(self._log_os, other._log_os))

    __hash__ = None

    # -- evaluation ------------------------------------------------------
    def _check_vec(self, x, name):
        x = np.asarray(x, dtype=float)
        if x.ndim != 1 or x.shape[0] != self.input_dim:
            got = x.shape[-1] if x.ndim else 0
            raise DimensionError(
                f"{name} has dimension {got}, kernel has dimension {self.input_dim}")
        return x

    def _check_mat(self, A, name):
        A = np.asarray(A, dtype=float)
        if A.ndim == 1:
            A = A[None, :]
        if A.ndim != 2 or A.shape[1] != self.input_dim:
            raise DimensionError(
                f"{name} has dimension {A.shape[-1]}, kernel has dimension {self.input_dim}")
        return A

    def eval(self, x1, x2) -> float:
        x1 = self._check_vec(x1, "x1")
        x2 = self._check_vec(x2, "x2")
        diff = x1 - x2
        total = 0.0
        for q in range(self.n_components):
            r2 = np.sum((diff / np.exp(self._log_ls[q])) ** 2)
            total += np.exp(self._log_os[q]) * np.exp(-0.5 * self.alpha * r2)
        return float(total)

    def __call__(self, A, B=None):
        return self.gram(A, A if B is None else B)

    def gram(self, A, B) -> np.ndarray:
        A = self._check_mat(A, "A")
        B = self._check_mat(B, "B")
        diff = A[:, None, :] - B[None, :, :]
        K = np.zeros((A.shape[0], B.shape[0]))
        for q in range(self.n_components):
            r2 = np.sum((diff / np.exp(self._log_ls[q])) ** 2, axis=-1)
            K += np.exp(self._log_os[q]) * np.exp(-0.5 * self.alpha * r2)
        return K

    def diag(self, A) -> np.ndarray:
        A = self._check_mat(A, "A")
        return np.full(A.shape[0], self.output_scale)

    def grad_x1(self, x1, x2) -> np.ndarray:
        x1 = self._check_vec(x1, "x1")
        x2 = self._check_vec(x2, "x2")
        diff = x1 - x2
        g = np.zeros(self.input_dim)
        for q in range(self.n_components):
            inv_l2 = np.exp(-2.0 * self._log_ls[q])
            k = np.exp(self._log_os[q]) * np.exp(-0.5 * self.alpha * np.sum(diff ** 2 * inv_l2))
            g -= self.alpha * k * diff * inv_l2
        return g

    # -- reverse-mode products for training --------------------------------
    def gram_vjp(self, A, B, G):
        """Pull ``G`` (n x m, the adjoint of ``gram(A, B)``) back to the inputs.

        Returns ``(d_params, d_A, d_B)``.
        """
        A = self._check_mat(A, "A")
        B = self._check_mat(B, "B")
        diff = A[:, None, :] - B[None, :, :]
        q_, d = self._log_ls.shape
        d_ls = np.zeros((q_, d))
        d_os = np.zeros(q_)
        d_A = np.zeros_like(A)
        d_B = np.zeros_like(B)
        for q in range(q_):
            inv_l2 = np.exp(-2.0 * self._log_ls[q])
            sq = diff ** 2 * inv_l2
            K = np.exp(self._log_os[q]) * np.exp(-0.5 * self.alpha * sq.sum(axis=-1))
            W = G * K
            d_os[q] = W.sum()
            d_ls[q] = self.alpha * np.einsum("ij,ijd->d", W, sq)
            # dK/da = -alpha K (a - b) / l^2, dK/db = -dK/da
            t = self.alpha * np.einsum("ij,ijd->id", W, diff) * inv_l2
            d_A -= t
            d_B += self.alpha * np.einsum("ij,ijd->jd", W, diff) * inv_l2
        return np.concatenate([d_ls.ravel(), d_os]), d_A, d_B

    def diag_vjp(self, g) -> np.ndarray:
        """Pull back the adjoint of ``diag(A)`` to the parameters."""
        d_ls = np.zeros(self._log_ls.size)
        d_os = np.exp(self._log_os) * float(np.sum(g))
        return np.concatenate([d_ls, d_os])

    # -- serialization ---------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "family": self.family,
            "alpha": self.alpha,
            "log_lengthscales": self._log_ls.tolist(),
            "log_output_scales": self._log_os.tolist(),
        }


class RBF(_RbfSum):
    """Squared exponential with per-dimension lengthscales."""

    family = "rbf"

    def __init__(self, lengthscale=1.0, output_scale=1.0, input_dim=None):
        ls = _lengthscale_vector(lengthscale, input_dim)
        _check_positive(output_scale, "output_scale")
        super().__init__(np.log(ls)[None, :], [np.log(output_scale)], 1.0)

    @classmethod
    def _from_logs(cls, log_ls, log_os, alpha):
        return super()._from_logs(log_ls, log_os, 1.0)


class SumRBF(_RbfSum):
    """Sum of 30 independent RBF terms.

    Lengthscales start log-uniformly spread over ``[0.1, 10] * lengthscale``
    and each term gets ``output_scale / 30`` so the prior variance equals
    ``output_scale``.
    """

    family = "rbf30"

    def __init__(self, lengthscale=1.0, output_scale=1.0, input_dim=None):
        ls = _lengthscale_vector(lengthscale, input_dim)
        _check_positive(output_scale, "output_scale")
        spread = np.geomspace(0.1, 10.0, N_SUM_COMPONENTS)
        log_ls = np.log(spread)[:, None] + np.log(ls)[None, :]
        log_os = np.full(N_SUM_COMPONENTS, np.log(output_scale / N_SUM_COMPONENTS))
        super().__init__(log_ls, log_os, 1.0)

    @classmethod
    def _from_logs(cls, log_ls, log_os, alpha):
        if np.shape(log_ls)[0] != N_SUM_COMPONENTS:
            raise ValueError(f"rbf30 needs exactly {N_SUM_COMPONENTS} components")
        return super()._from_logs(log_ls, log_os, 1.0)


class PoweredRBF(_RbfSum):
    """``output_scale * (rbf correlation) ** alpha`` with a fixed exponent."""

    family = "powrbf"

    def __init__(self, lengthscale=1.0, output_scale=1.0, alpha=1.5, input_dim=None):
        _check_alpha(alpha)
        ls = _lengthscale_vector(lengthscale, input_dim)
        _check_positive(output_scale, "output_scale")
        super().__init__(np.log(ls)[None, :], [np.log(output_scale)], alpha)

    @classmethod
    def _from_logs(cls, log_ls, log_os, alpha):
        _check_alpha(alpha)
        return super()._from_logs(log_ls, log_os, alpha)


def _check_alpha(alpha):
    lo, hi = ALPHA_RANGE
    # the published grid uses alpha = 0.9, so the lower end is closed
    if not (lo <= alpha < hi):
        raise ValueError(f"alpha must lie in [{lo}, {hi}), got {alpha}")


def _check_positive(value, name):
    if not np.all(np.asarray(value) > 0):
        raise ValueError(f"{name} must be positive, got {value}")


def _lengthscale_vector(lengthscale, input_dim):
    ls = np.atleast_1d(np.asarray(lengthscale, dtype=float))
    _check_positive(ls, "lengthscale")
    if input_dim is not None:
        if ls.size == 1:
            ls = np.full(int(input_dim), ls[0])
        elif ls.size != input_dim:
            raise DimensionError(
                f"lengthscale has dimension {ls.size}, input_dim is {input_dim}")
    return ls


FAMILIES = {"rbf": RBF, "rbf30": SumRBF, "powrbf": PoweredRBF}


def make_kernel(family, input_dim, lengthscale=1.0, output_scale=1.0, alpha=1.5):
    """Build a kernel from a config-style description."""
    if family not in FAMILIES:
        raise ValueError(f"unknown kernel family {family!r}; choose from {sorted(FAMILIES)}")
    if family == "powrbf":
        return PoweredRBF(lengthscale, output_scale, alpha=alpha, input_dim=input_dim)
    return FAMILIES[family](lengthscale, output_scale, input_dim=input_dim)


def kernel_from_dict(state: dict):
    cls = FAMILIES[state["family"]]
    return cls._from_logs(np.asarray(state["log_lengthscales"], dtype=float),
                          np.asarray(state["log_output_scales"], dtype=float),
                          float(state["alpha"]))
