"""Domain types: linear SDE systems, multiplicative-noise specifications,
feedback laws, and the two worked model families (swimmer pair separation in a
smooth chaotic flow, single/multi-zone building thermal networks).

All types are immutable after construction and safe to share across workers.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from numbers import Real

import numpy as np

from .conventions import check_convention

__all__ = [
    "WhiteTensor",
    "BatchelorKraichnan",
    "ScalarWhite",
    "OrnsteinUhlenbeck",
    "Telegraph",
    "FeedbackLaw",
    "LinearSystem",
    "ThermalNetwork",
    "ZoneReduction",
    "bk_covariance",
    "swimmer_system",
    "balance_control",
    "single_zone_reduction",
    "single_zone_system",
    "multi_zone_system",
    "NoControlAuthority",
]


class NoControlAuthority(ValueError):
    """Raised when the balance equation has no solution (c_s = 0 or T_bar = T_s)."""


# ---------------------------------------------------------------------------
# multiplicative-noise specifications
# ---------------------------------------------------------------------------

def _as_matrix(a, d=None):
    m = np.asarray(a, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError("expected a square matrix")
    if d is not None and m.shape[0] != d:
        raise ValueError(f"expected a {d}x{d} matrix, got {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix entries must be finite")
    return m


@dataclass(frozen=True)
class WhiteTensor:
    """White-in-time Gaussian matrix noise with covariance tensor
    E[sigma_ij(t) sigma_kl(t')] = cov[i,j,k,l] * delta(t-t')."""

    cov: np.ndarray
    convention: str = "stratonovich"

    def __post_init__(self):
        cov = np.asarray(self.cov, dtype=float)
        if cov.ndim != 4 or len(set(cov.shape)) != 1:
            raise ValueError("cov must be a rank-4 (d,d,d,d) tensor")
        object.__setattr__(self, "cov", cov)
        check_convention(self.convention)
        d = cov.shape[0]
        flat = cov.reshape(d * d, d * d)
        if not np.allclose(flat, flat.T, atol=1e-12):
            raise ValueError("cov must be symmetric under (i,j)<->(k,l) pair exchange")
        w = np.linalg.eigvalsh(0.5 * (flat + flat.T))
        if w.min() < -1e-10 * max(1.0, w.max()):
            raise ValueError("cov must be positive semidefinite as a form on matrices")

    @property
    def dim(self) -> int:
        return self.cov.shape[0]


@dataclass(frozen=True)
class BatchelorKraichnan:
    """Isotropic, incompressible, white-in-time velocity-gradient statistics
    with a single amplitude D (units 1/time)."""

    D: float
    convention: str = "stratonovich"

    def __post_init__(self):
        if not (self.D > 0):
            raise ValueError("D must be positive")
        check_convention(self.convention)

    def tensor(self, d: int) -> np.ndarray:
        return bk_covariance(d, self.D)


@dataclass(frozen=True)
class ScalarWhite:
    """Scalar white multiplicative noise, E[sigma(t)sigma(t')] = D delta(t-t')."""

    D: float
    convention: str = "kinetic"

    def __post_init__(self):
        if not (self.D > 0):
            raise ValueError("D must be positive")
        check_convention(self.convention)


@dataclass(frozen=True)
class OrnsteinUhlenbeck:
    """Matrix of independent OU entries: entry (i,j) has stationary stddev
    amplitude[i,j] and correlation time corr_time.  Colored noise is integrated
    pathwise; no convention applies."""

    amplitude: np.ndarray
    corr_time: float

    def __post_init__(self):
        object.__setattr__(self, "amplitude", _as_matrix(self.amplitude))
        if not (self.corr_time > 0):
            raise ValueError("corr_time must be positive")

    @property
    def dim(self) -> int:
        return self.amplitude.shape[0]


@dataclass(frozen=True)
class Telegraph:
    """Dichotomous matrix noise jumping between sigma_plus and sigma_minus at
    rate switch_rate.  Zero mean requires sigma_plus + sigma_minus = 0."""

    sigma_plus: np.ndarray
    sigma_minus: np.ndarray
    switch_rate: float

    def __post_init__(self):
        sp = _as_matrix(self.sigma_plus)
        sm = _as_matrix(self.sigma_minus, d=sp.shape[0])
        object.__setattr__(self, "sigma_plus", sp)
        object.__setattr__(self, "sigma_minus", sm)
        if not (self.switch_rate > 0):
            raise ValueError("switch_rate must be positive")
        if not np.allclose(sp + sm, 0.0, atol=1e-12):
            raise ValueError("telegraph noise must have zero mean: sigma_plus + sigma_minus = 0")

    @property
    def dim(self) -> int:
        return self.sigma_plus.shape[0]


MultNoiseSpec = (WhiteTensor, BatchelorKraichnan, ScalarWhite, OrnsteinUhlenbeck, Telegraph)


# ---------------------------------------------------------------------------
# feedback
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FeedbackLaw:
    """Linear state feedback u = -phi x.  Positive phi is stabilizing.

    variant 'radial': phi is a nonnegative scalar rate (u = -phi x).
    variant 'matrix': phi is a d x d rate matrix (u_i = -sum_j phi_ij x_j).
    """

    variant: str
    phi: object

    def __post_init__(self):
        if self.variant == "radial":
            if isinstance(self.phi, Fraction):
                if self.phi < 0:
                    raise ValueError("radial gain must be >= 0")
            else:
                p = float(self.phi)
                if not np.isfinite(p) or p < 0:
                    raise ValueError("radial gain must be finite and >= 0")
                object.__setattr__(self, "phi", p)
        elif self.variant == "matrix":
            object.__setattr__(self, "phi", _as_matrix(self.phi))
        else:
            raise ValueError("variant must be 'radial' or 'matrix'")

    @classmethod
    def radial(cls, phi) -> "FeedbackLaw":
        return cls("radial", phi)

    @classmethod
    def matrix(cls, phi) -> "FeedbackLaw":
        return cls("matrix", phi)

    def matrix_for(self, d: int) -> np.ndarray:
        if self.variant == "radial":
            return float(self.phi) * np.eye(d)
        if self.phi.shape[0] != d:
            raise ValueError(f"feedback matrix is {self.phi.shape[0]}x..., system is {d}-dimensional")
        return self.phi


ZERO_FEEDBACK = FeedbackLaw.radial(0.0)


# ---------------------------------------------------------------------------
# the linear system
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LinearSystem:
    """dx_i/dt = sum_j (m_ij + sigma_ij(t)) x_j + xi_i(t) + u_i(t)

    drift: the constant matrix m (1/time).
    additive_cov: per-component covariance kappa_i of the white additive noise,
        E[xi_i(t) xi_j(t')] = kappa_i delta_ij delta(t-t').
    mult_noise: one of the MultNoiseSpec variants, or None.
    friction: overall friction coefficient alpha (kept at 1 for swimmers).
    cross_additive: optional coefficient vector g; when set, g_i * (row sums of
        the sigma increment) feed the additive channel, modelling a correlated
        effective noise xi + T_o sigma ("exact mode" of the thermal reduction).
    """

    dim: int
    drift: np.ndarray
    additive_cov: np.ndarray
    mult_noise: object = None
    friction: float = 1.0
    cross_additive: np.ndarray | None = None

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        m = _as_matrix(self.drift, d=self.dim)
        object.__setattr__(self, "drift", m)
        k = np.atleast_1d(np.asarray(self.additive_cov, dtype=float))
        if k.shape == (1,) and self.dim > 1:
            k = np.full(self.dim, k[0])
        if k.shape != (self.dim,):
            raise ValueError("additive_cov must be a d-vector")
        if np.any(k < 0) or not np.all(np.isfinite(k)):
            raise ValueError("additive_cov entries must be finite and >= 0")
        object.__setattr__(self, "additive_cov", k)
        if not (self.friction > 0):
            raise ValueError("friction must be positive")
        if self.mult_noise is not None and not isinstance(self.mult_noise, MultNoiseSpec):
            raise TypeError("mult_noise must be a MultNoiseSpec variant or None")
        if self.cross_additive is not None:
            g = np.atleast_1d(np.asarray(self.cross_additive, dtype=float))
            if g.shape != (self.dim,):
                raise ValueError("cross_additive must be a d-vector")
            object.__setattr__(self, "cross_additive", g)


# ---------------------------------------------------------------------------
# swimmers
# ---------------------------------------------------------------------------

def bk_covariance(d: int, D: float) -> np.ndarray:
    """Covariance tensor of the isotropic incompressible white velocity gradient:

        T[i,j,k,l] = D (d+1) (delta_jl delta_ik - (delta_ij delta_kl + delta_jk delta_il)/(d+1))

    The trace contraction sum_i T[i,i,k,l] vanishes (incompressibility).
    """
    if not (D > 0):
        raise ValueError("D must be positive")
    if d < 2:
        raise ValueError("d must be >= 2")
    if d > 3:
        import warnings

        warnings.warn(f"d={d} is outside the physically motivated range {{2,3}}", stacklevel=2)
    e = np.eye(d)
    t = np.einsum("jl,ik->ijkl", e, e) * (d + 1.0)
    t -= np.einsum("ij,kl->ijkl", e, e)
    t -= np.einsum("jk,il->ijkl", e, e)
    return D * t


def swimmer_system(d: int, D: float, kappa: float, convention: str = "stratonovich") -> LinearSystem:
    """Separation of an active/passive swimmer pair in a smooth chaotic flow:
    zero drift, isotropic additive noise kappa per component, and
    Batchelor-Kraichnan multiplicative statistics of amplitude D."""
    if d not in (2, 3):
        raise ValueError("d must be 2 or 3")
    if kappa < 0:
        raise ValueError("kappa must be >= 0")
    return LinearSystem(
        dim=d,
        drift=np.zeros((d, d)),
        additive_cov=np.full(d, float(kappa)),
        mult_noise=BatchelorKraichnan(D=D, convention=convention),
    )


# ---------------------------------------------------------------------------
# thermal models
# ---------------------------------------------------------------------------

def balance_control(T_bar: float, T_o: float, T_s: float, c_bar_o: float, c_s: float) -> float:
    """Constant control u_bar solving 0 = -c_bar_o(T_bar - T_o) - c_s(T_bar - T_s) u_bar."""
    if c_s == 0 or T_bar == T_s:
        raise NoControlAuthority("no control authority: c_s(T_bar - T_s) = 0")
    return -c_bar_o * (T_bar - T_o) / (c_s * (T_bar - T_s))


@dataclass(frozen=True)
class ZoneReduction:
    """Coefficients of the reduced single-zone deviation equation
    d theta/dt = -(c0 + c1 phi) theta + xi_tilde - sigma theta."""

    c0: float
    c1: float
    u_bar: float
    kappa_tilde: float

    def c_of_phi(self, phi: float) -> float:
        return self.c0 + self.c1 * phi


def single_zone_reduction(
    T_bar: float,
    T_o: float,
    T_s: float,
    c_bar_o: float,
    c_s: float,
    kappa: float = 0.0,
    D: float = 0.0,
) -> ZoneReduction:
    """Reduce the single-zone temperature equation to deviation form.

    c0 = c_bar_o + c_s*u_bar, c1 = c_s(T_bar - T_s), and the effective additive
    noise xi_tilde = xi + T_o sigma has covariance kappa_tilde = kappa + T_o^2 D
    when xi and sigma are treated as independent (paper mode; see
    `single_zone_system` for the correlated exact mode).
    """
    u_bar = balance_control(T_bar, T_o, T_s, c_bar_o, c_s)
    c0 = c_bar_o + c_s * u_bar
    c1 = c_s * (T_bar - T_s)
    kappa_tilde = kappa + T_o * T_o * D
    return ZoneReduction(c0=c0, c1=c1, u_bar=u_bar, kappa_tilde=kappa_tilde)


def single_zone_system(
    red: ZoneReduction,
    phi: float,
    D: float,
    kappa: float = 0.0,
    mode: str = "paper",
    T_o: float = 0.0,
    convention: str = "kinetic",
) -> LinearSystem:
    """Scalar deviation system d theta/dt = -c(phi) theta - sigma theta + xi_tilde.

    mode 'paper': xi_tilde independent of sigma, covariance kappa + T_o^2 D.
    mode 'exact': additive channel receives the same sigma increments scaled by
    T_o (correlated, as derived), plus the bare kappa part.

    The control channel is linearized at the comfort point, so the reduced
    equation reproduces the full zone equation exactly (not just to O(theta)).
    """
    c = red.c_of_phi(phi)
    if mode == "paper":
        add = red.kappa_tilde if D > 0 else kappa + T_o * T_o * D
        cross = None
    elif mode == "exact":
        add = kappa
        cross = np.array([T_o], dtype=float)
    else:
        raise ValueError("mode must be 'paper' or 'exact'")
    noise = ScalarWhite(D=D, convention=convention) if D > 0 else None
    return LinearSystem(
        dim=1,
        drift=np.array([[-c]]),
        additive_cov=np.array([add]),
        mult_noise=noise,
        cross_additive=cross,
    )


@dataclass(frozen=True)
class ThermalNetwork:
    """Multi-zone thermal graph.

    Per-zone arrays (length n): mean_outside_rate (c_bar_io), supply_rate (c_is),
    additive_cov (kappa_i), mult_cov_outside (D_io), control_weight (alpha_i),
    state_weight (beta_i).  Per-edge dicts keyed by the unordered pair (i,j):
    mean_rate (c_bar_ij) and mult_cov (D_ij).  Temperatures T_o, T_s, T_bar.
    """

    zones: tuple
    edges: tuple
    mean_outside_rate: np.ndarray
    supply_rate: np.ndarray
    additive_cov: np.ndarray
    mult_cov_outside: np.ndarray
    control_weight: np.ndarray
    state_weight: np.ndarray
    edge_mean_rate: dict
    edge_mult_cov: dict
    T_o: float
    T_s: float
    T_bar: float

    def __post_init__(self):
        n = len(self.zones)
        if n < 1:
            raise ValueError("at least one zone required")
        if self.T_bar == self.T_s:
            raise NoControlAuthority("T_bar = T_s leaves the control with no authority (c1 = 0)")
        edges = []
        for e in self.edges:
            i, j = e
            if i == j:
                raise ValueError("self-loops are not allowed")
            key = (min(i, j), max(i, j))
            if key in edges:
                raise ValueError(f"duplicate edge {key}")
            if not (0 <= i < n and 0 <= j < n):
                raise ValueError(f"edge {e} references an unknown zone")
            edges.append(key)
        object.__setattr__(self, "edges", tuple(edges))
        for name in ("mean_outside_rate", "supply_rate", "additive_cov",
                     "mult_cov_outside", "control_weight", "state_weight"):
            v = np.atleast_1d(np.asarray(getattr(self, name), dtype=float))
            if v.shape == (1,) and n > 1:
                v = np.full(n, v[0])
            if v.shape != (n,):
                raise ValueError(f"{name} must have one entry per zone")
            if np.any(v < 0):
                raise ValueError(f"{name} entries must be >= 0")
            object.__setattr__(self, name, v)
        for name in ("edge_mean_rate", "edge_mult_cov"):
            d = {tuple(sorted(k)): float(v) for k, v in getattr(self, name).items()}
            for key in d:
                if key not in self.edges:
                    raise ValueError(f"{name} references non-edge {key}")
                if d[key] < 0:
                    raise ValueError(f"{name}[{key}] must be >= 0")
            for key in self.edges:
                d.setdefault(key, 0.0)
            object.__setattr__(self, name, d)

    @property
    def n_zones(self) -> int:
        return len(self.zones)

    @classmethod
    def uniform(cls, n, edges, c_bar_o, c_s, kappa, D_o, c_edge=0.0, D_edge=0.0,
                alpha=1.0, beta=1.0, T_o=30.0, T_s=10.0, T_bar=22.0):
        """Convenience constructor with equal per-zone parameters."""
        return cls(
            zones=tuple(range(n)),
            edges=tuple(tuple(e) for e in edges),
            mean_outside_rate=np.full(n, float(c_bar_o)),
            supply_rate=np.full(n, float(c_s)),
            additive_cov=np.full(n, float(kappa)),
            mult_cov_outside=np.full(n, float(D_o)),
            control_weight=np.full(n, float(alpha)),
            state_weight=np.full(n, float(beta)),
            edge_mean_rate={tuple(e): float(c_edge) for e in edges},
            edge_mult_cov={tuple(e): float(D_edge) for e in edges},
            T_o=T_o,
            T_s=T_s,
            T_bar=T_bar,
        )

    def balance_controls(self) -> np.ndarray:
        return np.array([
            balance_control(self.T_bar, self.T_o, self.T_s, self.mean_outside_rate[i], self.supply_rate[i])
            if self.supply_rate[i] != 0 else 0.0
            for i in range(self.n_zones)
        ])

    def c0(self) -> np.ndarray:
        """Uncontrolled per-zone decay rates c0_i = c_bar_io + c_is u_bar_i."""
        return self.mean_outside_rate + self.supply_rate * self.balance_controls()

    def c1(self) -> np.ndarray:
        """Per-zone feedback channel coefficients c1_i = c_is (T_bar - T_s)."""
        return self.supply_rate * (self.T_bar - self.T_s)

    def gamma(self) -> np.ndarray:
        """Control-channel weights gamma_i = c1_i^2 / (2 alpha_i) of the HJB sink."""
        c1 = self.c1()
        return c1 * c1 / (2.0 * self.control_weight)


def multi_zone_system(net: ThermalNetwork, phi: FeedbackLaw) -> LinearSystem:
    """Assemble the closed-loop multi-zone deviation system.

    Drift has Laplacian structure, m_ii = -c_i(phi) - sum_j c_bar_ij and
    m_ij = c_bar_ij on edges, with c_i(phi) = c_bar_io + sum_j c_js(T_bar-T_s) phi_ij.
    The multiplicative spec is a WhiteTensor assembled from independent white
    channels: sigma_io on the diagonal and sigma_ij with edge-difference structure.
    """
    n = net.n_zones
    phi_m = phi.matrix_for(n)
    c1 = net.c1()
    # c_i(phi): feedback through each zone's own supply channel
    c_phi = net.mean_outside_rate + (phi_m * c1[None, :]).sum(axis=1)
    m = np.zeros((n, n))
    for (i, j) in net.edges:
        rate = net.edge_mean_rate[(i, j)]
        m[i, i] -= rate
        m[j, j] -= rate
        m[i, j] += rate
        m[j, i] += rate
    m[np.diag_indices(n)] -= c_phi

    cov = np.zeros((n, n, n, n))
    for i in range(n):
        cov[i, i, i, i] += net.mult_cov_outside[i]
    for (i, j) in net.edges:
        dv = np.zeros((n, n))
        dv[i, i] = dv[j, j] = 1.0
        dv[i, j] = dv[j, i] = -1.0
        cov += net.edge_mult_cov[(i, j)] * np.einsum("ab,cd->abcd", dv, dv)
    mult = WhiteTensor(cov=cov, convention="kinetic") if np.any(cov != 0) else None
    return LinearSystem(dim=n, drift=m, additive_cov=net.additive_cov.copy(), mult_noise=mult)
