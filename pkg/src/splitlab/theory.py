"""Numerical checks of the border-distribution theorem and the sphere error estimates.

* Particle simulation: n repelling points in a bounded region, minimized by
  projected gradient descent on the Riesz energy; the fraction of points in
  the eps-shell near the boundary is then observable directly.
* Monte Carlo on the unit sphere for the hemisphere hypothesis class:
  generalization error of a tilted normal vector, and the sampling error of
  the normalized sample mean.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from splitlab import kernels
from splitlab.errors import ContractError


@dataclass(frozen=True)
class Region:
    kind: str = "ball"  # "ball" (radius = size) | "box" (side = size), centered at 0
    size: float = 1.0
    dim: int = 3

    def __post_init__(self):
        if self.kind not in ("ball", "box"):
            raise ContractError(f"unknown region {self.kind!r}")
        if self.size <= 0 or self.dim < 1:
            raise ContractError("region size and dim must be positive")

    def project(self, x):
        if self.kind == "ball":
            r = np.linalg.norm(x, axis=1, keepdims=True)
            return np.where(r > self.size, x * (self.size / np.maximum(r, 1e-300)), x)
        half = 0.5 * self.size
        return np.clip(x, -half, half)

    def boundary_distance(self, x):
        x = np.asarray(x, dtype=np.float64)
        if self.kind == "ball":
            return self.size - np.linalg.norm(x, axis=1)
        return (0.5 * self.size - np.abs(x)).min(axis=1)

    def contains(self, x, tol=1e-12):
        return bool(np.all(self.boundary_distance(x) >= -tol))

    def sample_uniform(self, n, rng):
        if self.kind == "ball":
            d = rng.standard_normal((n, self.dim))
            d /= np.linalg.norm(d, axis=1, keepdims=True)
            return d * (self.size * rng.random(n) ** (1.0 / self.dim))[:, None]
        return rng.uniform(-0.5 * self.size, 0.5 * self.size, size=(n, self.dim))


@dataclass(frozen=True)
class ParticleSystem:
    n: int
    region: Region = field(default_factory=Region)
    s: float = 1.0
    step: float = None  # None: 1% of the region size per unit of the initial max gradient
    iterations: int = 3000
    tol: float = 1e-13


@dataclass
class MinimizationResult:
    points: np.ndarray
    trace: np.ndarray
    converged: bool
    step: float
    iterations: int


def riesz_energy(points, s=1.0):
    """Sum over ordered pairs i != j of 1 / |x_i - x_j|^s."""
    return kernels.riesz_energy_grad(points, s)[0]


def minimize_potential_energy(system, seed=0, initial=None):
    """Projected gradient descent on the Riesz energy inside the region.

    A proposal that raises the energy is rejected and the step halved;
    accepted steps grow it by 10%.  Ten consecutive rejections, or a
    relative energy change below ``tol``, count as convergence.
    """
    if system.n < 1:
        raise ContractError("need at least one particle")
    region = system.region
    rng = np.random.default_rng(seed)
    x = region.sample_uniform(system.n, rng) if initial is None else region.project(np.array(initial, dtype=np.float64))
    energy, grad = kernels.riesz_energy_grad(x, system.s)
    trace = [energy]
    if system.n == 1:
        return MinimizationResult(x, np.array(trace), True, 0.0, 0)
    gmax = np.abs(grad).max()
    step = system.step if system.step is not None else 0.01 * region.size / max(gmax, 1e-300)
    rejections = 0
    converged = False
    it = 0
    for it in range(1, system.iterations + 1):
        cand = region.project(x - step * grad)
        e_new, g_new = kernels.riesz_energy_grad(cand, system.s)
        if e_new <= energy:
            change = (energy - e_new) / max(abs(energy), 1e-300)
            x, energy, grad = cand, e_new, g_new
            step *= 1.1
            rejections = 0
            trace.append(energy)
            if change < system.tol:
                converged = True
                break
        else:
            step *= 0.5
            rejections += 1
            trace.append(energy)
            if rejections >= 10:
                converged = True
                break
    return MinimizationResult(x, np.array(trace), converged, step, it)


def border_mass(points, region, eps):
    """Fraction of points whose distance to the region boundary is below ``eps``."""
    if eps <= 0:
        raise ContractError("eps must be positive")
    points = np.asarray(points, dtype=np.float64)
    if len(points) == 0:
        return 0.0
    return float(np.mean(region.boundary_distance(points) < eps))


# --- sphere experiments ------------------------------------------------------


@dataclass(frozen=True)
class DensitySpec:
    """Density on the unit sphere depending only on the first coordinate t.

    The density is proportional to ``tilt(t)`` relative to the uniform
    measure: ``uniform`` (tilt 1), ``boundary`` (exp(-kappa t^2), mass near
    the equator t = 0) or ``pole`` (exp(-kappa (1 - |t|)), mass near t = +-1).
    """

    kind: str = "uniform"
    kappa: float = 4.0

    def __post_init__(self):
        if self.kind not in ("uniform", "boundary", "pole"):
            raise ContractError(f"unknown density {self.kind!r}")

    def tilt(self, t):
        t = np.asarray(t, dtype=np.float64)
        if self.kind == "uniform":
            return np.ones_like(t)
        if self.kind == "boundary":
            return np.exp(-self.kappa * t * t)
        return np.exp(-self.kappa * (1.0 - np.abs(t)))

    def marginal_density(self, t, d):
        """Density p1 of the first coordinate at ``t`` on S^{d-1}."""
        a = 0.5 * (d - 3)
        norm, _ = integrate.quad(lambda u: float(self.tilt(u)), -1.0, 1.0, weight="alg", wvar=(a, a))
        return float(self.tilt(t) * (1.0 - t * t) ** a / norm)

    def sample(self, n, d, rng):
        out = np.empty((0, d))
        while len(out) < n:
            need = n - len(out)
            batch = rng.standard_normal((max(2 * need, 64), d))
            batch /= np.linalg.norm(batch, axis=1, keepdims=True)
            if self.kind != "uniform":
                batch = batch[rng.random(len(batch)) < self.tilt(batch[:, 0])]
            out = np.concatenate([out, batch[:need]])
        return out


@dataclass(frozen=True)
class SphereHypothesisExperiment:
    d: int = 3
    eps: float = 0.1
    samples: int = 1_000_000
    density: DensitySpec = field(default_factory=DensitySpec)

    def __post_init__(self):
        if not 0.0 <= self.eps < np.pi / 4:
            raise ContractError("eps must lie in [0, pi/4)")
        if self.d < 2:
            raise ContractError("sphere dimension must be >= 2")


@dataclass
class GeneralizationEstimate:
    measured: float
    stderr: float
    bound: float
    p1_zero: float


def generalization_error_mc(exp, seed=0, chunk=250_000):
    """Monte Carlo error of Sign[w.x] with w tilted by eps from e1 in the e1-e2 plane.

    Returns the measured R = 2 P(x1 > 0, w.x <= 0), its standard error and
    the estimate 2 eps p1(0).
    """
    rng = np.random.default_rng(seed)
    c, s = np.cos(exp.eps), np.sin(exp.eps)
    hits = 0
    left = exp.samples
    while left > 0:
        x = exp.density.sample(min(chunk, left), exp.d, rng)
        hits += int(np.count_nonzero((x[:, 0] > 0) & (c * x[:, 0] + s * x[:, 1] <= 0)))
        left -= len(x)
    p = hits / exp.samples
    p1 = exp.density.marginal_density(0.0, exp.d)
    return GeneralizationEstimate(2.0 * p, 2.0 * np.sqrt(p * (1 - p) / exp.samples), 2.0 * exp.eps * p1, p1)


@dataclass
class ScalingTable:
    m_values: list
    mean_sq_angle: list
    stderr: list
    slope: float


def sampling_error_scaling(density, m_values, trials=2000, seed=0, d=3):
    """E[angle^2] between e1 and the normalized mean of m positive-side samples.

    Samples are drawn from ``density`` and reflected onto x1 > 0.  The slope
    is the least-squares fit of log E[angle^2] against log m.
    """
    if min(m_values) < 2:
        raise ContractError("m values must be >= 2")
    rng = np.random.default_rng(seed)
    means, errs = [], []
    for m in m_values:
        x = density.sample(trials * m, d, rng).reshape(trials, m, d)
        x[..., 0] = np.abs(x[..., 0])
        w = x.sum(axis=1)
        w /= np.linalg.norm(w, axis=1, keepdims=True)
        ang2 = np.arccos(np.clip(w[:, 0], -1.0, 1.0)) ** 2
        means.append(float(ang2.mean()))
        errs.append(float(ang2.std(ddof=1) / np.sqrt(trials)))
    slope = float(np.polyfit(np.log(m_values), np.log(means), 1)[0])
    return ScalingTable(list(m_values), means, errs, slope)
