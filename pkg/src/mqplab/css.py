"""Steady-state control: closed-form stationary densities, expected running
cost, and optimal linear gains (closed form at q = 2, numeric otherwise).

Cost model: quadratic control effort plus a q-th power of the state,
C = w^2 + beta |x|^q with w the applied feedback signal.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad
from scipy.optimize import minimize_scalar
from scipy.special import betainc, gammaln

from .engine import CollectSpec, IntegratorConfig, run_ensemble
from .models import FeedbackLaw, ThermalNetwork, multi_zone_system
from .tails import (
    NoStationaryDensity,
    swimmer_mqp_threshold,
    thermal_mqp_threshold,
)

__all__ = [
    "SwimmerDensity",
    "ThermalDensity",
    "stationary_density",
    "expected_cost",
    "SwimmerCss",
    "ThermalCss",
    "CssResult",
    "optimize_gain",
    "closed_form_gain",
    "multizone_cost_mc",
    "UnstableFeedback",
    "MomentDiverges",
]


class MomentDiverges(ValueError):
    """Requested moment is infinite under the given density (M-q-P violated)."""


class UnstableFeedback(RuntimeError):
    """Pilot screening detected blow-up; the long Monte Carlo run is refused."""


# ---------------------------------------------------------------------------
# closed-form stationary densities
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SwimmerDensity:
    """Isotropic stationary law of the pair separation r >= 0:

        P(r) = N^-1 (kappa/D + (d-1) r^2)^(-p),   p = phi/((d-1) D),

    normalized against the radial measure Omega_r r^(d-1) dr.  Valid for
    phi > d(d-1)D/2 and kappa > 0 (the inner cutoff collapses at kappa = 0).
    """

    d: int
    D: float
    kappa: float
    phi: float
    family: str = field(default="swimmers_radial", init=False)

    def __post_init__(self):
        if self.kappa <= 0:
            raise NoStationaryDensity("kappa must be positive (inner cutoff collapses)")
        if self.D <= 0:
            raise ValueError("D must be positive")
        if not self.phi > self.d * (self.d - 1) * self.D / 2:
            raise NoStationaryDensity(
                f"need phi > d(d-1)D/2 = {self.d * (self.d - 1) * self.D / 2}")

    @property
    def p(self) -> float:
        return self.phi / ((self.d - 1) * self.D)

    @property
    def inner_scale(self) -> float:
        return float(np.sqrt(self.kappa / ((self.d - 1) * self.D)))

    @property
    def omega_coeff(self) -> float:
        d = self.d
        return float(np.pi ** (d / 2) / np.exp(gammaln(d / 2 + 1)))

    @property
    def normalization(self) -> float:
        """N with int Omega_r r^(d-1) P(r) dr = 1, in closed form."""
        d, p = self.d, self.p
        logn = (d / 2) * np.log(np.pi) - np.log(d) \
            + (d / 2) * np.log(self.kappa / ((d - 1) * self.D)) \
            - p * np.log(self.kappa / self.D) \
            + gammaln(p - d / 2) - gammaln(p)
        return float(np.exp(logn))

    def pdf(self, r):
        r = np.asarray(r, dtype=float)
        return (self.kappa / self.D + (self.d - 1) * r * r) ** (-self.p) / self.normalization

    def radial_pdf(self, r):
        """Density of the scalar radius: Omega_r r^(d-1) P(r)."""
        r = np.asarray(r, dtype=float)
        return self.omega_coeff * r ** (self.d - 1) * self.pdf(r)

    def cdf_radius(self, r):
        """P(R <= r): the squared radius is beta-prime distributed."""
        r = np.asarray(r, dtype=float)
        y = (self.d - 1) * self.D * r * r / self.kappa
        return betainc(self.d / 2, self.p - self.d / 2, y / (1.0 + y))

    def moment(self, q: float) -> float:
        """E[R^q] in closed (Beta-ratio) form; diverges for q >= alpha."""
        d, p = self.d, self.p
        if q <= -d:
            raise MomentDiverges("moment order too negative")
        if p - (d + q) / 2 <= 0:
            raise MomentDiverges(
                f"E[r^{q}] diverges: tail exponent alpha = {2 * p - d} <= q")
        logm = (q / 2) * np.log(self.kappa / ((d - 1) * self.D)) \
            + gammaln((d + q) / 2) + gammaln(p - (d + q) / 2) \
            - gammaln(d / 2) - gammaln(p - d / 2)
        return float(np.exp(logm))

    def moment_quadrature(self, q: float, tol: float = 1e-10) -> float:
        val, _ = quad(lambda r: r ** q * self.radial_pdf(r), 0, np.inf, epsabs=tol, epsrel=tol)
        return float(val)


@dataclass(frozen=True)
class ThermalDensity:
    """Closed-form scalar stationary law

        P(theta) = sqrt(D/(pi kappa)) Gamma(c/2D)/Gamma(c/2D - 1/2)
                   (1 + D theta^2/kappa)^(-c/(2D)),

    normalizable for c > D.  For a simulated model under convention lam, pass
    the mapped c (see tails.effective_thermal_c).
    """

    c: float
    D: float
    kappa: float
    family: str = field(default="thermal_scalar", init=False)

    def __post_init__(self):
        if self.kappa <= 0:
            raise NoStationaryDensity("kappa must be positive")
        if self.D <= 0:
            raise ValueError("D must be positive")
        if not self.c > self.D:
            raise NoStationaryDensity(f"need c > D (got c={self.c}, D={self.D})")

    @property
    def p(self) -> float:
        return self.c / (2.0 * self.D)

    @property
    def inner_scale(self) -> float:
        return float(np.sqrt(self.kappa / self.D))

    @property
    def normalization(self) -> float:
        """1/prefactor: P = prefactor * (1 + D theta^2/kappa)^(-p)."""
        return float(np.exp(-0.5 * np.log(self.D / (np.pi * self.kappa))
                            - gammaln(self.p) + gammaln(self.p - 0.5)))

    def pdf(self, theta):
        theta = np.asarray(theta, dtype=float)
        return (1.0 + self.D * theta * theta / self.kappa) ** (-self.p) / self.normalization

    def cdf(self, theta):
        theta = np.asarray(theta, dtype=float)
        y = self.D * theta * theta / self.kappa
        half = betainc(0.5, self.p - 0.5, y / (1.0 + y))
        return 0.5 * (1.0 + np.sign(theta) * half)

    def moment(self, q: float) -> float:
        """E[|theta|^q]; diverges for q >= alpha = c/D - 1."""
        p = self.p
        if q <= -1:
            raise MomentDiverges("moment order too negative")
        if p - (q + 1) / 2 <= 0:
            raise MomentDiverges(
                f"E[|theta|^{q}] diverges: tail exponent alpha = {2 * p - 1} <= q")
        logm = (q / 2) * np.log(self.kappa / self.D) \
            + gammaln((q + 1) / 2) + gammaln(p - (q + 1) / 2) \
            - gammaln(0.5) - gammaln(p - 0.5)
        return float(np.exp(logm))

    def moment_quadrature(self, q: float, tol: float = 1e-10) -> float:
        val, _ = quad(lambda t: np.abs(t) ** q * self.pdf(t), -np.inf, np.inf,
                      epsabs=tol, epsrel=tol, limit=200)
        return float(val)


def stationary_density(family: str, **params):
    """Factory over the closed-form families: 'swimmers_radial' (d, D, kappa,
    phi) or 'thermal_scalar' (c, D, kappa)."""
    if family == "swimmers_radial":
        return SwimmerDensity(**params)
    if family == "thermal_scalar":
        return ThermalDensity(**params)
    raise ValueError(f"unknown density family {family!r}")


def expected_cost(density, q: float, beta: float, gain: float,
                  control_weight: float = 1.0, quadrature: bool = False) -> float:
    """Mean running cost under a stationary density:
    C = control_weight * gain^2 E[x^2] + beta E[|x|^q]."""
    mom = density.moment_quadrature if quadrature else density.moment
    try:
        return control_weight * gain * gain * mom(2.0) + beta * mom(float(q))
    except MomentDiverges as e:
        raise MomentDiverges(f"M-q-P violated at gain={gain}, q={q}: {e}") from e


# ---------------------------------------------------------------------------
# gain optimization
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SwimmerCss:
    d: int
    D: float
    kappa: float

    def density(self, phi: float) -> SwimmerDensity:
        return SwimmerDensity(d=self.d, D=self.D, kappa=self.kappa, phi=phi)

    def window_low(self, q: float) -> float:
        """Lower edge of the finite-cost window (needs max(q,2) moments)."""
        return swimmer_mqp_threshold(self.d, self.D, max(q, 2.0))

    def mqp_threshold(self, q: float) -> float:
        return swimmer_mqp_threshold(self.d, self.D, q)

    def closed_form_gain(self, beta: float) -> float:
        a = self.D * (self.d + 2) * (self.d - 1)
        return 0.5 * (a + np.sqrt(4.0 * beta + a * a))

    def cost(self, phi: float, q: float, beta: float, quadrature: bool = False) -> float:
        return expected_cost(self.density(phi), q, beta, gain=phi, quadrature=quadrature)


@dataclass(frozen=True)
class ThermalCss:
    c0: float
    c1: float
    D: float
    kappa: float

    def c_of(self, phi: float) -> float:
        return self.c0 + self.c1 * phi

    def density(self, phi: float) -> ThermalDensity:
        return ThermalDensity(c=self.c_of(phi), D=self.D, kappa=self.kappa)

    def window_low(self, q: float) -> float:
        return (self.D * (max(q, 2.0) + 1.0) - self.c0) / self.c1

    def mqp_threshold(self, q: float) -> float:
        return thermal_mqp_threshold(self.c0, self.c1, self.D, q)[0]

    def closed_form_gain(self, beta: float) -> float:
        a = 3.0 * self.D - self.c0
        return (a + np.sqrt(a * a + beta * self.c1 * self.c1)) / self.c1

    def cost(self, phi: float, q: float, beta: float, quadrature: bool = False) -> float:
        return expected_cost(self.density(phi), q, beta, gain=phi, quadrature=quadrature)


@dataclass(frozen=True)
class CssResult:
    phi_star: float
    cost_star: float
    q: float
    beta: float
    phi_s: float                 # minimal gain for a finite q-th moment
    convex_window: tuple         # (low edge, sampled upper bracket); cost finite above low
    cost_curve: np.ndarray       # sampled (phi, cost) pairs


def closed_form_gain(model, beta: float) -> float:
    """q = 2 optimal gains in closed form for the two worked model families."""
    return float(model.closed_form_gain(beta))


def optimize_gain(model, q: float, beta: float, xtol: float = 1e-10,
                  n_curve: int = 50) -> CssResult:
    """Minimize the stationary expected cost over the gain.

    The cost is finite and convex on (window_low, inf) with a pole at the
    left edge and quadratic growth at infinity; the bracket is expanded
    geometrically and the scalar minimizer run to xtol.
    """
    low = model.window_low(q)
    span = max(abs(low), 1.0)
    a = low + 1e-9 * span
    f = lambda phi: model.cost(phi, q, beta)
    # expand until the cost turns upward
    b = low + span
    fb = f(b)
    while True:
        b2 = low + 2 * (b - low)
        fb2 = f(b2)
        if fb2 > fb:
            b = b2
            break
        b, fb = b2, fb2
        if b - low > 1e12:
            raise RuntimeError("failed to bracket the cost minimum")
    res = minimize_scalar(f, bounds=(a, b), method="bounded",
                          options={"xatol": xtol * (1 + abs(b))})
    phi_star = float(res.x)
    phi_s = model.mqp_threshold(q)
    if not (phi_star > low):
        raise RuntimeError("optimizer left the finite-cost window")
    phis = np.linspace(low + 0.02 * (phi_star - low), b, n_curve)
    curve = np.array([[p, f(p)] for p in phis])
    return CssResult(phi_star=phi_star, cost_star=float(res.fun), q=float(q),
                     beta=float(beta), phi_s=float(phi_s),
                     convex_window=(float(low), float(b)), cost_curve=curve)


# ---------------------------------------------------------------------------
# multi-zone cost by Monte Carlo
# ---------------------------------------------------------------------------

def multizone_cost_mc(net: ThermalNetwork, phi_matrix, q: float, betas=None,
                      cfg: IntegratorConfig | None = None, n_traj: int = 64,
                      burn_in: float = 0.2, pool_stride: int = 50,
                      pilot_fraction: float = 0.1, threads=None):
    """Time-averaged ensemble estimate of sum_i (alpha_i u_i^2 + beta_i |theta_i|^q)
    under matrix feedback, with a pilot stability screen.

    Returns (mean, standard error, EnsembleSummary).  No closed-form density
    exists for the network, so the estimate is Monte Carlo only.
    """
    phi_m = np.asarray(phi_matrix, dtype=float)
    fb = FeedbackLaw.matrix(phi_m)
    system = multi_zone_system(net, fb)
    betas = net.state_weight if betas is None else np.atleast_1d(np.asarray(betas, dtype=float))
    cfg = cfg or IntegratorConfig(dt=1e-3, horizon=200.0, master_seed=11)
    n = net.n_zones
    cost_spec = {"alpha": net.control_weight, "beta": betas, "phi": phi_m, "q": q}
    pilot_cfg = IntegratorConfig(dt=cfg.dt, horizon=max(cfg.horizon * pilot_fraction, 50 * cfg.dt),
                                 master_seed=cfg.master_seed + 1,
                                 blowup_ceiling=cfg.blowup_ceiling, chunk_steps=cfg.chunk_steps)
    pilot = run_ensemble(system, None, pilot_cfg, max(8, n_traj // 8),
                         CollectSpec(pool="norm", burn_in=0.0, pool_stride=pool_stride),
                         threads=threads)
    if pilot.blowup_count > 0:
        raise UnstableFeedback(
            f"pilot run: {pilot.blowup_count}/{pilot.n_traj} trajectories blew up")
    summ = run_ensemble(system, None, cfg, n_traj,
                        CollectSpec(pool="norm", burn_in=burn_in,
                                    pool_stride=pool_stride, cost=cost_spec),
                        threads=threads)
    if summ.blowup_count > 0:
        raise UnstableFeedback(
            f"main run: {summ.blowup_count}/{summ.n_traj} trajectories blew up")
    mean, se = summ.cost_estimate()
    return mean, se, summ
