"""Compilation of multiplicative-noise specifications into sampler form.

White specs are factorized once: a covariance tensor T[i,j,k,l] is reshaped to
a (d^2, d^2) Gram matrix and eigendecomposed, giving factor matrices F_m with
T = sum_m F_m (x) F_m.  A single increment over dt is then
sum_m z_m sqrt(dt) F_m with iid standard normals z_m.  Colored specs (OU,
telegraph) are stateful processes sampled exactly (OU) or by per-step
switching probability rate*dt (telegraph).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .conventions import drift_correction, scalar_drift_correction
from .models import (
    BatchelorKraichnan,
    OrnsteinUhlenbeck,
    ScalarWhite,
    Telegraph,
    WhiteTensor,
)

__all__ = ["white_factors", "compile_noise", "CompiledNoise", "NoiseProcess", "sample_noise_increment"]

MODE_NONE = -1
MODE_WHITE = 0
MODE_OU = 1
MODE_TELEGRAPH = 2


def white_tensor_of(spec, d: int) -> np.ndarray:
    if isinstance(spec, WhiteTensor):
        if spec.dim != d:
            raise ValueError(f"noise tensor is for d={spec.dim}, system has d={d}")
        return spec.cov
    if isinstance(spec, BatchelorKraichnan):
        return spec.tensor(d)
    if isinstance(spec, ScalarWhite):
        if d != 1:
            raise ValueError("ScalarWhite applies to 1-dimensional systems")
        return np.full((1, 1, 1, 1), spec.D)
    raise TypeError(f"not a white spec: {type(spec).__name__}")


def white_factors(tensor: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """Factor matrices (m, d, d) with sum_m F_m[i,j] F_m[k,l] = T[i,j,k,l].

    Eigenvectors with eigenvalues below tol*max are dropped (e.g. the exactly
    null trace mode of the incompressible velocity-gradient tensor).
    """
    d = tensor.shape[0]
    flat = tensor.reshape(d * d, d * d)
    w, v = np.linalg.eigh(0.5 * (flat + flat.T))
    keep = w > tol * max(w.max(), 1.0)
    f = (v[:, keep] * np.sqrt(w[keep])).T.reshape(-1, d, d)
    return np.ascontiguousarray(f)


@dataclass(frozen=True)
class CompiledNoise:
    """Kernel-ready noise description for one system dimension and dt."""

    mode: int
    d: int
    correction: np.ndarray          # Ito-equivalent drift matrix from the convention
    contraction: np.ndarray = None  # middle-index contraction C of the tensor
    lam: float = 0.5                # convention multiplier (0 ito, 1/2 strat, 1 kinetic)
    factors: np.ndarray = None      # white: (m,d,d), already scaled by sqrt(dt)
    n_normals: int = 0              # normals consumed per step
    ou_decay: float = 0.0           # exp(-dt/tau)
    ou_innov: np.ndarray = None     # (d,d) per-entry innovation stddev
    ou_amp: np.ndarray = None       # (d,d) stationary stddev (for the initial draw)
    tg_sigma: np.ndarray = None     # (d,d) sigma_plus
    tg_p: float = 0.0               # switching probability per step

    def initial_aux(self, rng) -> np.ndarray:
        """Initial colored-noise state (stationary OU draw / random telegraph sign)."""
        if self.mode == MODE_OU:
            return self.ou_amp * rng.standard_normal((self.d, self.d))
        if self.mode == MODE_TELEGRAPH:
            return np.array([1.0 if rng.random() < 0.5 else -1.0])
        return np.zeros(0)


def compile_noise(spec, d: int, dt: float, convention: str | None = None) -> CompiledNoise:
    zero = np.zeros((d, d))
    if spec is None:
        return CompiledNoise(mode=MODE_NONE, d=d, correction=zero, contraction=zero)
    if isinstance(spec, (WhiteTensor, BatchelorKraichnan, ScalarWhite)):
        from .conventions import LAMBDA_FACTOR, tensor_contraction

        conv = convention or spec.convention
        tensor = white_tensor_of(spec, d)
        corr = drift_correction(tensor, conv)
        f = white_factors(tensor) * np.sqrt(dt)
        return CompiledNoise(mode=MODE_WHITE, d=d, correction=corr,
                             contraction=tensor_contraction(tensor), lam=LAMBDA_FACTOR[conv],
                             factors=f, n_normals=f.shape[0])
    if isinstance(spec, OrnsteinUhlenbeck):
        if spec.dim != d:
            raise ValueError("OU amplitude matrix dimension mismatch")
        decay = float(np.exp(-dt / spec.corr_time))
        innov = spec.amplitude * np.sqrt(1.0 - decay * decay)
        return CompiledNoise(
            mode=MODE_OU, d=d, correction=zero, contraction=zero,
            n_normals=d * d, ou_decay=decay, ou_innov=innov, ou_amp=spec.amplitude,
        )
    if isinstance(spec, Telegraph):
        if spec.dim != d:
            raise ValueError("telegraph matrix dimension mismatch")
        p = spec.switch_rate * dt
        if p >= 0.5:
            raise ValueError("switch_rate*dt must be well below 1; reduce dt")
        return CompiledNoise(
            mode=MODE_TELEGRAPH, d=d, correction=zero, contraction=zero,
            n_normals=1, tg_sigma=spec.sigma_plus.copy(), tg_p=p,
        )
    raise TypeError(f"unknown noise spec {type(spec).__name__}")


class NoiseProcess:
    """Stateful sampler producing one d x d matrix increment per step of dt.

    White variants return Gaussian increments with covariance tensor*dt; OU
    performs an exact update of the hidden process and returns sigma(t)*dt;
    telegraph returns the current state matrix times dt, switching with
    probability rate*dt after each step.
    """

    def __init__(self, spec, d: int, dt: float, rng, convention: str | None = None):
        self.c = compile_noise(spec, d, dt, convention)
        self.dt = dt
        self.rng = rng
        self._aux = self.c.initial_aux(rng)

    def sample(self) -> np.ndarray:
        c = self.c
        if c.mode == MODE_NONE:
            return np.zeros((c.d, c.d))
        if c.mode == MODE_WHITE:
            z = self.rng.standard_normal(c.n_normals)
            return np.einsum("m,mij->ij", z, c.factors)
        if c.mode == MODE_OU:
            out = self._aux * self.dt
            self._aux = c.ou_decay * self._aux + c.ou_innov * self.rng.standard_normal((c.d, c.d))
            return out
        out = self._aux[0] * c.tg_sigma * self.dt
        if self.rng.random() < c.tg_p:
            self._aux = -self._aux
        return out

    def state(self) -> np.ndarray:
        return self._aux.copy()


def sample_noise_increment(spec, d: int, dt: float, rng) -> np.ndarray:
    """One-shot increment draw (colored variants start from their stationary law)."""
    return NoiseProcess(spec, d, dt, rng).sample()
