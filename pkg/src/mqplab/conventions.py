"""Stochastic-convention bookkeeping for white multiplicative noise.

A white multiplicative term sigma(t)x in the state equation only becomes a
well-posed SDE once an interpretation rule is fixed.  The three supported
conventions differ by a drift shift of the Ito-equivalent equation:

    ito           no shift
    stratonovich  +1/2 * C[i,j] x_j
    kinetic       +1   * C[i,j] x_j   (anti-Ito; double the Stratonovich shift)

where C[i,j] = T[i,k,k,j] is the middle-index contraction of the covariance
tensor T[i,j,k,l] = E[sigma_ij sigma_kl] / delta(t-t').
"""

from __future__ import annotations

import numpy as np

CONVENTIONS = ("ito", "stratonovich", "kinetic")

# Multiplier applied to the tensor contraction to get the Ito-equivalent drift.
LAMBDA_FACTOR = {"ito": 0.0, "stratonovich": 0.5, "kinetic": 1.0}


def check_convention(name: str) -> str:
    if name not in CONVENTIONS:
        raise ValueError(f"unknown convention {name!r}; expected one of {CONVENTIONS}")
    return name


def tensor_contraction(tensor: np.ndarray) -> np.ndarray:
    """C[i,j] = sum_k T[i,k,k,j] for a (d,d,d,d) covariance tensor."""
    return np.einsum("ikkj->ij", tensor)


def drift_correction(tensor: np.ndarray, convention: str) -> np.ndarray:
    """Ito-equivalent drift matrix added by interpreting sigma(t)x under `convention`."""
    check_convention(convention)
    return LAMBDA_FACTOR[convention] * tensor_contraction(tensor)


def scalar_drift_correction(D: float, convention: str) -> float:
    """Scalar special case: the contraction of a scalar covariance D is D itself."""
    check_convention(convention)
    return LAMBDA_FACTOR[convention] * D
