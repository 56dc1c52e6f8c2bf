"""Finite-sum objectives with hand-written gradients.

Every objective has the form ``F(w) = (1/N) sum_n f_n(w)`` and evaluates
gradients for a stack of models at once: ``batch_gradients(models, batches)``
takes a ``(P, dim)`` model stack and a ``(P, B)`` index array and returns the
``(P, dim)`` mini-batch gradients. Single-model calls go through the same
code path, so a full-batch stochastic gradient is bit-identical to the full
gradient.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .vecmath import DimensionError, RngStream, sq_norm

DEFAULT_LOGREG_LAMBDA = 1e-4
LIPSCHITZ_INFLATION = 1.2


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    targets: np.ndarray
    classification: bool = False

    def __post_init__(self):
        X = np.asarray(self.features, dtype=np.float64)
        y = np.asarray(self.targets, dtype=np.float64)
        if X.ndim != 2 or y.ndim != 1 or X.shape[0] != y.shape[0]:
            raise DimensionError(f"features {X.shape} and targets {y.shape} do not line up")
        if X.shape[0] < 1:
            raise ValueError("dataset needs at least one sample")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise ValueError("dataset contains non-finite entries")
        if self.classification and not np.all((y == 0.0) | (y == 1.0)):
            raise ValueError("classification labels must be 0 or 1")
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "targets", y)

    @property
    def N(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]


@dataclass(frozen=True)
class ProblemConstants:
    L: float
    c: float
    G: float
    sigma2: float
    f_star: Optional[float] = None
    omega_star: Optional[np.ndarray] = None

    def __post_init__(self):
        if not self.L > 0:
            raise ValueError(f"L must be positive, got {self.L}")
        if self.c < 0 or self.c > self.L * (1 + 1e-12):
            raise ValueError(f"need 0 <= c <= L, got c={self.c}, L={self.L}")
        if self.G < 0 or self.sigma2 < 0:
            raise ValueError("G and sigma2 must be non-negative")


class Objective:
    """Base class; subclasses supply ``_grads`` and ``_losses``."""

    kind: str = ""

    def __init__(self, dataset: Dataset, lam: float = 0.0):
        if lam < 0:
            raise ValueError("regularization must be non-negative")
        self.dataset = dataset
        self.lam = float(lam)
        self._all = np.arange(dataset.N)[None, :]

    @property
    def dim(self) -> int:
        raise NotImplementedError

    @property
    def N(self) -> int:
        return self.dataset.N

    # -- subclass hooks -------------------------------------------------
    def _grads(self, models, X, y):  # pragma: no cover - abstract
        raise NotImplementedError

    def _losses(self, models, X, y):  # pragma: no cover - abstract
        raise NotImplementedError

    # -- public surface -------------------------------------------------
    def batch_gradients(self, models: np.ndarray, batches: np.ndarray, check: bool = True) -> np.ndarray:
        """Row ``i`` is the mini-batch gradient of model ``i`` on batch ``i``.

        ``check=False`` skips shape and index validation for callers that
        generated the batches themselves.
        """
        if not check:
            return self._grads(models, self.dataset.features[batches], self.dataset.targets[batches])
        models = np.asarray(models, dtype=np.float64)
        batches = np.asarray(batches)
        if models.ndim != 2 or models.shape[1] != self.dim:
            raise DimensionError(f"expected models of shape (P, {self.dim}), got {models.shape}")
        if batches.ndim != 2 or batches.shape[0] != models.shape[0] or batches.shape[1] == 0:
            raise DimensionError(f"batches must be (P, B) with B >= 1, got {batches.shape}")
        lo, hi = int(batches.min()), int(batches.max())
        if lo < 0 or hi >= self.N:
            raise IndexError(f"batch index out of range [0, {self.N})")
        X = self.dataset.features[batches]
        y = self.dataset.targets[batches]
        return self._grads(models, X, y)

    def stochastic_gradient(self, omega: np.ndarray, batch: Sequence[int]) -> np.ndarray:
        return self.batch_gradients(np.asarray(omega)[None, :], np.asarray(batch)[None, :])[0]

    def full_gradient(self, omega: np.ndarray) -> np.ndarray:
        return self.batch_gradients(np.asarray(omega)[None, :], self._all)[0]

    def loss(self, omega: np.ndarray) -> float:
        omega = np.asarray(omega, dtype=np.float64)
        if omega.shape != (self.dim,):
            raise DimensionError(f"expected a vector of length {self.dim}, got {omega.shape}")
        X = self.dataset.features[self._all]
        y = self.dataset.targets[self._all]
        return float(self._losses(omega[None, :], X, y)[0])

    def initial_point(self, stream: Optional[RngStream] = None) -> np.ndarray:
        return np.zeros(self.dim)


class Quadratic(Objective):
    """Least squares ``(1/2N) sum (a_n . w - b_n)^2``."""

    kind = "quadratic"

    @property
    def dim(self) -> int:
        return self.dataset.n_features

    def _grads(self, models, X, y):
        resid = np.einsum("pbd,pd->pb", X, models) - y
        return np.einsum("pbd,pb->pd", X, resid) / X.shape[1]

    def _losses(self, models, X, y):
        resid = np.einsum("pbd,pd->pb", X, models) - y
        return 0.5 * np.einsum("pb,pb->p", resid, resid) / X.shape[1]

    def hessian(self) -> np.ndarray:
        A = self.dataset.features
        return A.T @ A / self.N

    def exact_constants(self) -> tuple[float, float, np.ndarray, float]:
        """Return ``(L, c, omega_star, f_star)`` from the normal equations."""
        H = self.hessian()
        eig = np.linalg.eigvalsh(H)
        rhs = self.dataset.features.T @ self.dataset.targets / self.N
        omega_star = np.linalg.solve(H, rhs)
        return float(eig[-1]), float(max(eig[0], 0.0)), omega_star, self.loss(omega_star)


def _log1pexp(z):
    return np.logaddexp(0.0, z)


def _sigmoid(z):
    # Branch-free stable form.
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


class Logistic(Objective):
    """L2-regularised logistic loss with labels in {0, 1}."""

    kind = "logistic"

    def __init__(self, dataset: Dataset, lam: float = DEFAULT_LOGREG_LAMBDA):
        if not dataset.classification:
            raise ValueError("logistic objective needs a classification dataset")
        super().__init__(dataset, lam)

    @property
    def dim(self) -> int:
        return self.dataset.n_features

    def _grads(self, models, X, y):
        z = np.einsum("pbd,pd->pb", X, models)
        s = _sigmoid(z) - y
        return np.einsum("pbd,pb->pd", X, s) / X.shape[1] + self.lam * models

    def _losses(self, models, X, y):
        z = np.einsum("pbd,pd->pb", X, models)
        data = np.sum(_log1pexp(z) - y * z, axis=1) / X.shape[1]
        return data + 0.5 * self.lam * np.einsum("pd,pd->p", models, models)

    def accuracy(self, omega: np.ndarray) -> float:
        pred = (self.dataset.features @ omega) > 0
        return float(np.mean(pred == (self.dataset.targets == 1.0)))


class MLP1(Objective):
    """One hidden tanh layer, scalar output, squared loss.

    Parameter layout: ``W1`` (h x d, row-major), ``b1`` (h), ``w2`` (h), ``b2``.
    """

    kind = "mlp1"

    def __init__(self, dataset: Dataset, hidden: int, lam: float = 0.0):
        if hidden < 1:
            raise ValueError("hidden width must be >= 1")
        super().__init__(dataset, lam)
        self.hidden = int(hidden)

    @property
    def dim(self) -> int:
        return self.hidden * (self.dataset.n_features + 2) + 1

    def _unpack(self, models):
        h, d = self.hidden, self.dataset.n_features
        P = models.shape[0]
        W1 = models[:, : h * d].reshape(P, h, d)
        b1 = models[:, h * d : h * d + h]
        w2 = models[:, h * d + h : h * d + 2 * h]
        b2 = models[:, -1]
        return W1, b1, w2, b2

    def _forward(self, models, X):
        W1, b1, w2, b2 = self._unpack(models)
        act = np.tanh(np.einsum("pbd,phd->pbh", X, W1) + b1[:, None, :])
        pred = np.einsum("pbh,ph->pb", act, w2) + b2[:, None]
        return act, pred

    def _grads(self, models, X, y):
        B = X.shape[1]
        W1, b1, w2, b2 = self._unpack(models)
        act, pred = self._forward(models, X)
        err = pred - y
        d_pre = err[:, :, None] * w2[:, None, :] * (1.0 - act * act)
        g_W1 = np.einsum("pbh,pbd->phd", d_pre, X) / B
        g_b1 = np.sum(d_pre, axis=1) / B
        g_w2 = np.einsum("pbh,pb->ph", act, err) / B
        g_b2 = np.sum(err, axis=1) / B
        P = models.shape[0]
        out = np.concatenate([g_W1.reshape(P, -1), g_b1, g_w2, g_b2[:, None]], axis=1)
        return out + self.lam * models

    def _losses(self, models, X, y):
        _, pred = self._forward(models, X)
        err = pred - y
        data = 0.5 * np.sum(err * err, axis=1) / X.shape[1]
        return data + 0.5 * self.lam * np.einsum("pd,pd->p", models, models)

    def initial_point(self, stream: Optional[RngStream] = None) -> np.ndarray:
        if stream is None:
            raise ValueError("mlp1 needs a random stream for its initial point")
        h, d = self.hidden, self.dataset.n_features
        g = stream.generator
        W1 = g.standard_normal((h, d)) / math.sqrt(d)
        w2 = g.standard_normal(h) / math.sqrt(h)
        return np.concatenate([W1.ravel(), np.zeros(h), w2, [0.0]])


# ---------------------------------------------------------------------------
# Builders


def make_quadratic(d: int, N: int, condition_number: float, stream: RngStream,
                   noise: float = 0.5) -> tuple[Quadratic, ProblemConstants]:
    """Synthetic least squares whose Hessian has the requested condition number.

    The Hessian spectrum is geometric between ``1/condition_number`` and 1, so
    ``L == 1`` up to round-off. ``G`` and ``sigma2`` are left at zero; they are
    trajectory quantities filled in later by :func:`estimate_constants`.
    """
    if d < 1:
        raise ValueError("d must be >= 1")
    if N < d:
        raise ValueError(f"need N >= d for a strongly convex problem, got N={N}, d={d}")
    if not condition_number >= 1:
        raise ValueError("condition_number must be >= 1")
    if d == 1 and condition_number != 1:
        raise ValueError("a one-dimensional quadratic has condition number 1")
    g = stream.generator
    U, _ = np.linalg.qr(g.standard_normal((N, d)))
    V, _ = np.linalg.qr(g.standard_normal((d, d)))
    eig = np.geomspace(1.0, 1.0 / condition_number, d)
    A = (U * np.sqrt(N * eig)) @ V.T
    w_true = g.standard_normal(d)
    b = A @ w_true + noise * g.standard_normal(N)
    obj = Quadratic(Dataset(A, b))
    L, c, omega_star, f_star = obj.exact_constants()
    return obj, ProblemConstants(L=L, c=c, G=0.0, sigma2=0.0, f_star=f_star, omega_star=omega_star)


def make_logreg(d: int, N: int, separation: float, stream: RngStream,
                lam: float = DEFAULT_LOGREG_LAMBDA) -> Logistic:
    """Two unit-variance Gaussian blobs whose means are ``separation`` apart."""
    if d < 1 or N < 2:
        raise ValueError("need d >= 1 and N >= 2")
    if separation < 0:
        raise ValueError("separation must be non-negative")
    g = stream.generator
    u = g.standard_normal(d)
    u /= np.linalg.norm(u)
    y = g.permutation(np.arange(N) % 2).astype(np.float64)
    X = g.standard_normal((N, d)) + np.outer(y - 0.5, separation * u)
    return Logistic(Dataset(X, y, classification=True), lam=lam)


def make_mlp1(d: int, h: int, N: int, stream: RngStream, noise: float = 0.1,
              lam: float = 0.0) -> MLP1:
    """Regression targets from a random teacher network of the same shape."""
    if d < 1 or h < 1 or N < 1:
        raise ValueError("need d, h, N >= 1")
    g = stream.generator
    X = g.standard_normal((N, d))
    teacher_W = g.standard_normal((h, d)) / math.sqrt(d)
    teacher_v = g.standard_normal(h) / math.sqrt(h)
    y = np.tanh(X @ teacher_W.T) @ teacher_v + noise * g.standard_normal(N)
    return MLP1(Dataset(X, y), hidden=h, lam=lam)


# ---------------------------------------------------------------------------
# Sampling and constants


def sample_batch(stream: RngStream, N: int, B: int) -> np.ndarray:
    """B indices drawn uniformly with replacement from ``range(N)``.

    ``B == N`` means the full dataset: every index once, no draw consumed.
    """
    if B < 1:
        raise ValueError(f"batch size must be >= 1, got {B}")
    if B > N:
        raise ValueError(f"batch size {B} exceeds dataset size {N}")
    if B == N:
        return np.arange(N)
    return stream.generator.integers(0, N, size=B)


def sample_batch_block(streams: Sequence[RngStream], N: int, B: int, k: int) -> np.ndarray:
    """The next ``k`` batches of every stream, shape ``(len(streams), k, B)``.

    Row ``[i, j]`` equals the ``j``-th successive :func:`sample_batch` call on
    ``streams[i]``; drawing a block at once only saves call overhead.
    """
    if B == N:
        return np.broadcast_to(np.arange(N), (len(streams), k, N))
    return np.stack([sample_batch(s, N, B) if k == 1 else s.generator.integers(0, N, size=(k, B))
                     for s in streams])


def estimate_lipschitz(obj: Objective, points: Sequence[np.ndarray], stream: RngStream,
                       n_pairs: int = 100, radius: float = 0.1) -> float:
    """Largest observed ``|grad F(x) - grad F(y)| / |x - y|`` over nearby pairs.

    Pairs cycle over the given points: ``x`` is a Gaussian perturbation of the
    point and ``y - x`` has length ``radius * (1 + |p|)``. The first pair at a
    point uses a random direction; later ones reuse the previous gradient
    difference there (a finite-difference power iteration), so the ratio
    approaches the local top curvature instead of a random-direction average.
    """
    g = stream.generator
    dirs: dict = {}
    best = 0.0
    for k in range(n_pairs):
        j = k % len(points)
        p = np.asarray(points[j], dtype=np.float64)
        length = radius * (1.0 + math.sqrt(sq_norm(p)))
        x = p + (length / math.sqrt(obj.dim)) * g.standard_normal(obj.dim)
        d = dirs.get(j)
        if d is None:
            d = g.standard_normal(obj.dim)
            d /= math.sqrt(sq_norm(d))
        step = length * d
        diff = obj.full_gradient(x) - obj.full_gradient(x + step)
        dist = math.sqrt(sq_norm(step))
        if dist == 0.0:
            continue
        nd = math.sqrt(sq_norm(diff))
        best = max(best, nd / dist)
        dirs[j] = diff / nd if nd > 0 else None
    return best


def gradient_noise(obj: Objective, omega: np.ndarray, B: int, stream: RngStream,
                   draws: int) -> tuple[float, float]:
    """Max stochastic-gradient norm and mean ``|g - grad F|^2`` over draws."""
    full = obj.full_gradient(omega)
    batches = np.stack([sample_batch(stream, obj.N, B) for _ in range(draws)])
    grads = obj.batch_gradients(np.broadcast_to(omega, (draws, obj.dim)), batches)
    dev = grads - full
    norms = np.sqrt(np.einsum("pd,pd->p", grads, grads))
    return float(norms.max()), float(np.mean(np.einsum("pd,pd->p", dev, dev)))


def estimate_constants(obj: Objective, omega_samples: Sequence[np.ndarray], B: int,
                       stream: RngStream, g_draws: int = 100, var_draws: int = 200,
                       lipschitz_pairs: int = 100) -> ProblemConstants:
    """Trajectory-local estimates of the smoothness and gradient-noise constants.

    ``G`` is the largest mini-batch gradient norm seen over ``g_draws`` batches
    at each sample point; ``sigma2`` is the largest per-point empirical
    variance over ``var_draws`` batches. Quadratics report their exact ``L``,
    ``c``, minimiser and optimum; other objectives get a sampled ``L``
    inflated by 1.2 and ``c = 0``.
    """
    if len(omega_samples) == 0:
        raise ValueError("need at least one sample point")
    G = 0.0
    sigma2 = 0.0
    for omega in omega_samples:
        g_max, _ = gradient_noise(obj, omega, B, stream, g_draws)
        _, var = gradient_noise(obj, omega, B, stream, var_draws)
        G = max(G, g_max)
        sigma2 = max(sigma2, var)
    if isinstance(obj, Quadratic):
        L, c, omega_star, f_star = obj.exact_constants()
        return ProblemConstants(L=L, c=c, G=G, sigma2=sigma2, f_star=f_star,
                                omega_star=omega_star)
    L = LIPSCHITZ_INFLATION * estimate_lipschitz(obj, omega_samples, stream, lipschitz_pairs)
    if L <= 0:
        L = obj.lam if obj.lam > 0 else 1e-12
    return ProblemConstants(L=L, c=0.0, G=G, sigma2=sigma2)


# ---------------------------------------------------------------------------
# CSV ingestion


def load_dataset_csv(path, header: bool = False, classification: bool = False,
                     standardize: bool = True) -> Dataset:
    """Read a comma-separated file whose last column is the target."""
    path = Path(path)
    data = np.loadtxt(path, delimiter=",", skiprows=1 if header else 0, ndmin=2,
                      dtype=np.float64)
    X, y = data[:, :-1], data[:, -1]
    if standardize:
        std = X.std(axis=0)
        std[std == 0] = 1.0
        X = (X - X.mean(axis=0)) / std
    return Dataset(X, y, classification=classification)


def save_dataset_csv(dataset: Dataset, path, header: bool = False) -> None:
    data = np.column_stack([dataset.features, dataset.targets])
    head = ",".join([f"x{j}" for j in range(dataset.n_features)] + ["y"]) if header else ""
    np.savetxt(path, data, delimiter=",", fmt="%.17g", header=head, comments="")
