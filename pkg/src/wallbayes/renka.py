"""Regularising ensemble Kalman algorithm with adaptive tempering.

One call to :func:`renka_step` assimilates one batch of observations.  The
likelihood of the batch is introduced gradually through tempering
exponents ``0 = phi_0 < phi_1 < ... < phi_p = 1``; each increment is chosen
so the effective sample size of the incremental importance weights equals
``j_thresh``, and the ensemble is then moved with a perturbed-observation
Kalman update whose noise covariance is inflated by ``1 / (phi_r - phi_{r-1})``.
All updates act on latent Gaussian coordinates.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, List

import numpy as np
from scipy import linalg

from .errors import ConvergenceError, InvalidArgumentError, NumericalFailureError
from .rng import Streams, member_generators

PHI_TOL = 1e-8
MAX_BISECTIONS = 60
MAX_ITERATIONS = 50


@dataclass(frozen=True)
class NoiseModel:
    """Independent Gaussian observation errors with standard deviations ``sigma``."""

    sigma: np.ndarray

    def __post_init__(self):
        sigma = np.asarray(self.sigma, dtype=float)
        if sigma.ndim != 1 or not np.all(sigma > 0) or not np.all(np.isfinite(sigma)):
            raise InvalidArgumentError("noise standard deviations must be positive and finite")
        object.__setattr__(self, "sigma", sigma)

    @property
    def variance(self) -> np.ndarray:
        return self.sigma ** 2

    def misfits(self, q, predictions) -> np.ndarray:
        """``|| Gamma^{-1/2} (q - G_j) ||^2`` for every member."""
        r = (np.asarray(q)[None, :] - predictions) / self.sigma[None, :]
        return np.einsum("ij,ij->i", r, r)


@dataclass
class TemperingTrace:
    phis: List[float] = field(default_factory=list)
    ess_values: List[float] = field(default_factory=list)

    @property
    def iterations(self) -> int:
        return len(self.phis)

    def to_dict(self) -> dict:
        return {"phis": list(self.phis), "ess": list(self.ess_values),
                "iterations": self.iterations}


def _weights(misfits, dphi):
    m = np.asarray(misfits, dtype=float)
    logw = -dphi * (m - m.min())
    w = np.exp(logw)
    total = w.sum()
    if not (total > 0 and np.isfinite(total)):
        raise NumericalFailureError("importance weights vanished")
    return w / total


def ess(misfits, phi_prev: float, phi: float) -> float:
    """Effective sample size of the incremental weights ``exp(-(phi - phi_prev) m_j)``."""
    if not phi > phi_prev >= 0:
        raise InvalidArgumentError("need phi > phi_prev >= 0")
    w = _weights(misfits, phi - phi_prev)
    return 1.0 / float(np.sum(w * w))


def select_phi(misfits, phi_prev: float, j_thresh: float) -> float:
    """Next tempering exponent.

    Returns 1 when the effective sample size at ``phi = 1`` still exceeds
    ``j_thresh`` (the ESS does not increase with ``phi``), otherwise the
    root of ``ESS(phi) = j_thresh`` found by bisection on ``(phi_prev, 1]``.
    """
    J = len(misfits)
    if not 1 < j_thresh < J:
        raise InvalidArgumentError(f"j_thresh must lie in (1, {J})")
    if ess(misfits, phi_prev, 1.0) > j_thresh:
        return 1.0
    lo, hi = phi_prev, 1.0
    for _ in range(MAX_BISECTIONS):
        if hi - lo <= PHI_TOL:
            break
        mid = 0.5 * (lo + hi)
        if ess(misfits, phi_prev, mid) > j_thresh:
            lo = mid
        else:
            hi = mid
    # the upper end keeps ESS <= j_thresh and is never phi_prev itself
    return hi


def _member_noise(rng, n_members: int, dim: int) -> np.ndarray:
    if isinstance(rng, np.random.Generator):
        return rng.standard_normal((n_members, dim))
    gens = list(rng) if not isinstance(rng, Streams) else member_generators(rng, n_members)
    if len(gens) != n_members:
        raise InvalidArgumentError("need one random stream per ensemble member")
    return np.stack([g.standard_normal(dim) for g in gens])


def kalman_update(latents, predictions, q, noise: NoiseModel, alpha: float, rng) -> np.ndarray:
    """Perturbed-observation ensemble Kalman update with inflated noise ``alpha * Gamma``.

    Parameters
    ----------
    latents : array, shape (J, n)
    predictions : array, shape (J, d)
    q : array, shape (d,)
    noise : NoiseModel
    alpha : float
        Inverse tempering increment, ``1 / (phi_r - phi_{r-1})``.
    rng : Generator, Streams or sequence of Generators
        A single generator draws all perturbations at once; a
        :class:`~wallbayes.rng.Streams` or a list gives one stream per
        member, which makes the update equivariant under member permutation.
    """
    psi = np.asarray(latents, dtype=float)
    G = np.asarray(predictions, dtype=float)
    q = np.asarray(q, dtype=float)
    if not np.all(np.isfinite(G)):
        raise InvalidArgumentError("non-finite model predictions")
    if not alpha > 0:
        raise InvalidArgumentError("alpha must be positive")
    J, d = G.shape
    if psi.shape[0] != J or q.shape != (d,) or noise.sigma.shape != (d,):
        raise InvalidArgumentError("inconsistent ensemble, prediction or data dimensions")

    dG = G - G.mean(axis=0)
    dpsi = psi - psi.mean(axis=0)
    A = dG.T @ dG / (J - 1)
    B = dpsi.T @ dG / (J - 1)
    scaled = alpha * noise.variance
    eta = _member_noise(rng, J, d) * np.sqrt(scaled)[None, :]
    innov = q[None, :] + eta - G
    A[np.diag_indices(d)] += scaled
    try:
        factor = linalg.cho_factor(A, lower=True, check_finite=False)
    except linalg.LinAlgError as exc:
        raise NumericalFailureError(f"Kalman gain system not positive definite: {exc}") from exc
    return psi + linalg.cho_solve(factor, innov.T, check_finite=False).T @ B.T


def renka_step(ensemble, forward: Callable, q, noise: NoiseModel, j_thresh: float, rng,
               max_iterations: int = MAX_ITERATIONS):
    """Assimilate one batch of observations.

    Parameters
    ----------
    ensemble
        Any object with a ``psi`` array of shape (J, n) and a
        ``with_psi(psi)`` method returning the updated ensemble, e.g.
        :class:`~wallbayes.priors.Ensemble`.
    forward : callable
        Maps an ensemble to its (J, d) predictions of ``q``.
    rng : Streams or Generator
        With :class:`~wallbayes.rng.Streams`, iteration ``r`` draws member
        ``j``'s perturbation from ``iter/<r>/member/<j>``.

    Returns
    -------
    (ensemble, TemperingTrace)
    """
    q = np.asarray(q, dtype=float)
    trace = TemperingTrace()
    phi = 0.0
    J = ensemble.psi.shape[0]
    while phi < 1.0:
        if trace.iterations >= max_iterations:
            raise ConvergenceError(
                f"tempering stopped at phi={phi:.6g} after {max_iterations} iterations", trace)
        G = np.asarray(forward(ensemble), dtype=float)
        if G.shape != (J, q.size):
            raise InvalidArgumentError(f"forward map returned shape {G.shape}, expected {(J, q.size)}")
        if not np.all(np.isfinite(G)):
            raise InvalidArgumentError("forward map returned non-finite predictions")
        misfit = noise.misfits(q, G)
        new_phi = select_phi(misfit, phi, j_thresh)
        trace.ess_values.append(ess(misfit, phi, new_phi))
        trace.phis.append(new_phi)
        alpha = 1.0 / (new_phi - phi)
        if isinstance(rng, Streams):
            step_rng = rng.child(f"iter/{trace.iterations}")
        else:
            step_rng = rng
        psi = kalman_update(ensemble.psi, G, q, noise, alpha, step_rng)
        ensemble = ensemble.with_psi(psi)
        phi = new_phi
    return ensemble, trace
