"""Synthetic stochastic convex problems with exact gradient oracles.

A problem draws opaque sample tokens from a caller-owned generator; the same
token can be evaluated at any number of points, which is what the corrected
momentum update needs (one sample, two query points).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import InvalidInputError

KINDS = ("additive-noise-quadratic", "random-curvature-quadratic", "synthetic-logistic")

# Relative slack when checking that a query point lies in the ball.
_DOMAIN_SLACK = 1e-9


@dataclass(frozen=True)
class ProblemSpec:
    kind: str = "additive-noise-quadratic"
    dim: int = 20
    L: float = 1.0
    mu_min: float = 0.1
    sigma: float = 1.0
    sigma_L: float = 0.0
    radius: float = 10.0
    seed: int = 0
    n_samples: int = 2000
    reg: float = 0.01

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidInputError(f"unknown problem kind {self.kind!r}; expected one of {KINDS}")
        if self.dim < 1:
            raise InvalidInputError("dim must be >= 1")
        if not self.radius > 0:
            raise InvalidInputError("radius must be > 0")
        if self.sigma < 0:
            raise InvalidInputError("sigma must be >= 0")
        if not 0 <= self.sigma_L <= self.L:
            raise InvalidInputError("sigma_L must satisfy 0 <= sigma_L <= L")
        if self.kind != "synthetic-logistic" and not 0 < self.mu_min <= self.L:
            raise InvalidInputError("mu_min must satisfy 0 < mu_min <= L")
        if self.kind == "random-curvature-quadratic" and not self.sigma_L <= self.L - self.mu_min:
            raise InvalidInputError("random-curvature-quadratic needs sigma_L <= L - mu_min")


@dataclass(frozen=True)
class Sample:
    """One draw ``z``. Evaluating it at the same point is bit-reproducible."""

    noise: np.ndarray | None = None
    direction: np.ndarray | None = None
    scale: float = 0.0
    index: int = -1


def build_problem(spec: ProblemSpec) -> Problem:
    if spec.kind == "synthetic-logistic":
        return LogisticProblem(spec)
    return QuadraticProblem(spec)


def _in_ball(x, radius):
    if not np.linalg.norm(x) <= radius * (1 + _DOMAIN_SLACK):
        raise InvalidInputError(f"query point with norm {np.linalg.norm(x):.6g} is outside the ball of radius {radius}")


class Problem:
    """Common interface: ``draw_sample``, ``stochastic_gradient``, ``gradient``, ``excess_loss``."""

    spec: ProblemSpec
    x_star: np.ndarray

    @property
    def dim(self):
        return self.spec.dim

    @property
    def radius(self):
        return self.spec.radius

    @property
    def diameter(self):
        return 2 * self.spec.radius

    @property
    def lipschitz(self):
        return self.spec.L

    @property
    def g_star(self):
        return float(np.linalg.norm(self.gradient(self.x_star)))


class QuadraticProblem(Problem):
    """``f(x) = 1/2 (x - x*)^T A (x - x*)`` with a fixed SPD ``A``.

    additive-noise: ``grad f(x; z) = A (x - x*) + z``, ``z ~ N(0, sigma^2/d I)``.
    random-curvature: additionally ``+ r * sigma_L * u u^T (x - x*)`` with
    ``u`` a uniform unit vector and ``r ~ U[-1, 1]``; ``A`` then has spectrum in
    ``[mu_min, L - sigma_L]`` so every per-sample gradient is L-Lipschitz.
    """

    def __init__(self, spec: ProblemSpec, x_star=None, A=None):
        self.spec = spec
        rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 0x9A0B]))
        d = spec.dim
        if A is None:
            top = spec.L - (spec.sigma_L if spec.kind == "random-curvature-quadratic" else 0.0)
            eigs = np.linspace(spec.mu_min, top, d) if d > 1 else np.array([top])
            q, r = np.linalg.qr(rng.standard_normal((d, d)))
            q = q * np.sign(np.diag(r))
            A = (q * eigs) @ q.T
            A = (A + A.T) / 2
        self.A = A
        if x_star is None:
            u = rng.standard_normal(d)
            u /= np.linalg.norm(u)
            x_star = u * (spec.radius / 2) * rng.uniform() ** (1 / d)
        self.x_star = np.asarray(x_star, dtype=float)
        if not np.linalg.norm(self.x_star) < spec.radius:
            raise InvalidInputError("optimum must lie strictly inside the domain")
        self._curv = spec.kind == "random-curvature-quadratic" and spec.sigma_L > 0

    @property
    def variance_bound(self):
        # E||grad f(x;z) - grad f(x)||^2 over the whole ball.
        v = self.spec.sigma ** 2
        if self._curv:
            reach = self.spec.radius + np.linalg.norm(self.x_star)
            v += self.spec.sigma_L ** 2 * reach ** 2 / 3
        return v

    def draw_sample(self, rng: np.random.Generator) -> Sample:
        d = self.spec.dim
        noise = rng.standard_normal(d) * (self.spec.sigma / np.sqrt(d))
        if not self._curv:
            return Sample(noise=noise)
        u = rng.standard_normal(d)
        u /= np.linalg.norm(u)
        return Sample(noise=noise, direction=u, scale=self.spec.sigma_L * rng.uniform(-1.0, 1.0))

    def gradient(self, x):
        return self.A @ (np.asarray(x, dtype=float) - self.x_star)

    def stochastic_gradient(self, x, sample: Sample):
        x = np.asarray(x, dtype=float)
        _in_ball(x, self.spec.radius)
        r = x - self.x_star
        g = self.A @ r + sample.noise
        if sample.direction is not None:
            g = g + sample.scale * (sample.direction @ r) * sample.direction
        return g

    def loss(self, x):
        r = np.asarray(x, dtype=float) - self.x_star
        return 0.5 * float(r @ self.A @ r)

    def excess_loss(self, x):
        _in_ball(np.asarray(x, dtype=float), self.spec.radius)
        return self.loss(x)

    def label_flipped(self) -> QuadraticProblem:
        """Same curvature and noise, optimum negated."""
        return QuadraticProblem(self.spec, x_star=-self.x_star, A=self.A)


def _sigmoid(t):
    return 0.5 * (1 + np.tanh(0.5 * t))


def _softplus(t):
    return np.logaddexp(0.0, t)


@dataclass
class _LogisticData:
    features: np.ndarray
    labels: np.ndarray
    theta: np.ndarray = field(repr=False)


class LogisticProblem(Problem):
    """Ridge-regularized logistic regression over a fixed synthetic dataset.

    A sample is a uniformly drawn row; the expected loss is the full-batch
    average, so its optimum is computed once, by Newton's method, to a
    gradient norm of 1e-10.
    """

    def __init__(self, spec: ProblemSpec, data: _LogisticData | None = None):
        self.spec = spec
        if data is None:
            rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 0x1061]))
            n, d = spec.n_samples, spec.dim
            features = rng.standard_normal((n, d)) * np.sqrt(spec.L / d)
            theta = rng.standard_normal(d)
            theta *= (spec.radius / 4) / np.linalg.norm(theta)
            labels = (rng.uniform(size=n) < _sigmoid(features @ theta)).astype(float)
            data = _LogisticData(features, labels, theta)
        self.data = data
        a = data.features
        # Per-sample Hessian is at most ||a||^2/4 + reg.
        self.smoothness = float(np.max(np.sum(a * a, axis=1)) / 4 + spec.reg)
        self.sigma_L = self.smoothness
        self.variance_bound = float(2 * np.max(np.linalg.norm(a, axis=1))) ** 2
        self.x_star = self._solve()
        if not np.linalg.norm(self.x_star) < spec.radius:
            raise InvalidInputError("logistic optimum falls outside the domain; increase radius or reg")
        self.f_star = self.loss(self.x_star)

    def _solve(self, tol=1e-10, max_iters=100):
        a, y, reg = self.data.features, self.data.labels, self.spec.reg
        n, d = a.shape
        x = np.zeros(d)
        for _ in range(max_iters):
            p = _sigmoid(a @ x)
            g = a.T @ (p - y) / n + reg * x
            if np.linalg.norm(g) <= tol:
                return x
            H = (a * (p * (1 - p))[:, None]).T @ a / n + reg * np.eye(d)
            x = x - np.linalg.solve(H, g)
        g = self.gradient(x)
        if np.linalg.norm(g) > tol:
            raise RuntimeError(f"Newton solve stalled at gradient norm {np.linalg.norm(g):.3g}")
        return x

    @property
    def lipschitz(self):
        return self.smoothness

    def draw_sample(self, rng: np.random.Generator) -> Sample:
        return Sample(index=int(rng.integers(self.data.labels.size)))

    def gradient(self, x):
        a, y = self.data.features, self.data.labels
        x = np.asarray(x, dtype=float)
        return a.T @ (_sigmoid(a @ x) - y) / y.size + self.spec.reg * x

    def stochastic_gradient(self, x, sample: Sample):
        x = np.asarray(x, dtype=float)
        _in_ball(x, self.spec.radius)
        a, y = self.data.features[sample.index], self.data.labels[sample.index]
        return a * (_sigmoid(a @ x) - y) + self.spec.reg * x

    def loss(self, x):
        a, y = self.data.features, self.data.labels
        t = a @ np.asarray(x, dtype=float)
        return float(np.mean(_softplus(t) - y * t) + 0.5 * self.spec.reg * x @ x)

    def excess_loss(self, x):
        x = np.asarray(x, dtype=float)
        _in_ball(x, self.spec.radius)
        return self.loss(x) - self.f_star

    def label_flipped(self) -> LogisticProblem:
        """Same features with labels ``y -> 1 - y``."""
        data = replace(self.data, labels=1.0 - self.data.labels)
        return LogisticProblem(self.spec, data=data)
