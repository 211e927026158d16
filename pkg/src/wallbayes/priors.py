"""Prior distribution of the wall properties.

Conductivity and heat capacity are log-normal random fields, the initial
temperature is a Gaussian field around a data-informed linear profile, and
the two surface resistances are log-normal scalars.  Fields are sampled at
mesh nodes with a full Karhunen-Loeve expansion of a Whittle-Matern
covariance.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import special

from .errors import InvalidArgumentError
from .heat_model import Mesh, ThermalSample
from .rng import RandomSource, as_streams, member_generators

LOG_NORMAL_FIELD = "log_normal_field"
ADDITIVE_FIELD = "additive_field"


@dataclass(frozen=True)
class FieldPriorSpec:
    """Whittle-Matern field hyperparameters.

    ``omega`` is the multiplicative scale of a log-normal field; additive
    fields (the initial temperature) take their mean from data instead and
    leave it unset.
    """

    nu: float
    ell: float
    sigma: float
    omega: Optional[float] = None
    kind: str = LOG_NORMAL_FIELD

    def __post_init__(self):
        if not (self.nu > 0 and self.ell > 0 and self.sigma > 0):
            raise InvalidArgumentError("nu, ell and sigma must be positive")
        if self.kind not in (LOG_NORMAL_FIELD, ADDITIVE_FIELD):
            raise InvalidArgumentError(f"unknown field kind {self.kind!r}")
        if self.kind == LOG_NORMAL_FIELD and not (self.omega is not None and self.omega > 0):
            raise InvalidArgumentError("log-normal fields need a positive omega")


@dataclass(frozen=True)
class ScalarPriorSpec:
    """``R = omega * exp(psi)`` with ``psi ~ N(0, sigma^2)``."""

    omega: float
    sigma: float

    def __post_init__(self):
        if not (self.omega > 0 and self.sigma > 0):
            raise InvalidArgumentError("omega and sigma must be positive")

    @property
    def mean(self) -> float:
        return self.omega * float(np.exp(0.5 * self.sigma ** 2))


@dataclass(frozen=True)
class PriorConfig:
    kappa: FieldPriorSpec
    c: FieldPriorSpec
    t0: FieldPriorSpec
    r_i: ScalarPriorSpec
    r_e: ScalarPriorSpec

    @classmethod
    def synthetic(cls) -> "PriorConfig":
        """Hyperparameters used for the virtual-wall experiment."""
        return cls(
            kappa=FieldPriorSpec(1.05, 0.62e-2, 0.65, 0.75),
            c=FieldPriorSpec(1.05, 0.62e-2, 0.7, 7.5e5),
            t0=FieldPriorSpec(1.05, 1e-2, 1.87, kind=ADDITIVE_FIELD),
            r_i=ScalarPriorSpec(0.1, 0.5),
            r_e=ScalarPriorSpec(0.07, 0.5),
        )

    @classmethod
    def bsria(cls) -> "PriorConfig":
        """Hyperparameters used for the field data of a solid brick wall."""
        return cls(
            kappa=FieldPriorSpec(1.05, 0.0103, 0.35, 0.75),
            c=FieldPriorSpec(1.05, 0.0103, 0.3, 1.2e6),
            t0=FieldPriorSpec(1.05, 0.0103, 1.22, kind=ADDITIVE_FIELD),
            r_i=ScalarPriorSpec(0.13, 0.5),
            r_e=ScalarPriorSpec(0.04, 0.5),
        )


@dataclass(frozen=True)
class KLBasis:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    @property
    def size(self) -> int:
        return self.eigenvalues.size

    @property
    def factor(self) -> np.ndarray:
        """``W diag(sqrt(lambda))``, so that ``psi = factor @ xi``."""
        return self.eigenvectors * np.sqrt(self.eigenvalues)[None, :]

    def covariance(self) -> np.ndarray:
        return (self.eigenvectors * self.eigenvalues) @ self.eigenvectors.T


@dataclass
class LatentSample:
    psi_kappa: np.ndarray
    psi_c: np.ndarray
    psi_t0: np.ndarray
    psi_i: float
    psi_e: float

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.psi_kappa, self.psi_c, self.psi_t0,
                               [self.psi_i, self.psi_e]])

    @classmethod
    def from_vector(cls, vec, n_nodes: int) -> "LatentSample":
        vec = np.asarray(vec, dtype=float)
        if vec.shape != (3 * n_nodes + 2,):
            raise InvalidArgumentError("latent vector has the wrong length")
        n = n_nodes
        return cls(vec[:n].copy(), vec[n:2 * n].copy(), vec[2 * n:3 * n].copy(),
                   float(vec[-2]), float(vec[-1]))


def matern_covariance(spec: FieldPriorSpec, positions) -> np.ndarray:
    """Whittle-Matern covariance matrix between ``positions``.

    ``sigma^2 2^(1-nu)/Gamma(nu) s^nu K_nu(s)`` with ``s = |x - y| / ell``,
    and exactly ``sigma^2`` where ``s = 0``.
    """
    x = np.asarray(positions, dtype=float)
    if x.ndim != 1 or x.size == 0:
        raise InvalidArgumentError("positions must be a non-empty 1-D array")
    s = np.abs(x[:, None] - x[None, :]) / spec.ell
    out = np.empty_like(s)
    zero = s == 0
    sp = s[~zero]
    coef = spec.sigma ** 2 * 2.0 ** (1.0 - spec.nu) / special.gamma(spec.nu)
    with np.errstate(under="ignore"):
        out[~zero] = coef * sp ** spec.nu * special.kv(spec.nu, sp)
    out[zero] = spec.sigma ** 2
    return out


def kl_decompose(cov) -> KLBasis:
    """Full eigendecomposition, modes sorted by decreasing eigenvalue."""
    cov = np.asarray(cov, dtype=float)
    if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
        raise InvalidArgumentError("covariance must be a square matrix")
    norm = np.linalg.norm(cov)
    if np.linalg.norm(cov - cov.T) > 1e-8 * max(norm, np.finfo(float).tiny):
        raise InvalidArgumentError("covariance matrix is not symmetric")
    lam, vec = np.linalg.eigh(0.5 * (cov + cov.T))
    order = np.argsort(lam)[::-1]
    lam = np.clip(lam[order], 0.0, None)
    return KLBasis(lam, vec[:, order])


def sample_latent(basis: KLBasis, rng: np.random.Generator) -> np.ndarray:
    xi = rng.standard_normal(basis.size)
    return basis.eigenvectors @ (np.sqrt(basis.eigenvalues) * xi)


def t0_prior_mean(first: dict, r_i_mean: float, r_e_mean: float, mesh: Mesh) -> np.ndarray:
    """Linear initial-temperature profile implied by the first measurements.

    ``first`` holds ``T_I``, ``T_E``, ``q_I`` and ``q_E`` at t = 0.  The
    surface temperatures follow from the film relations
    ``T(0) = T_I - R_I q_I`` and ``T(L) = T_E + R_E q_E`` and are joined by a
    straight line.  Pass ``q_E = 0`` when no external flux is measured.
    """
    t_i, t_e = float(first["T_I"]), float(first["T_E"])
    q_i, q_e = float(first["q_I"]), float(first.get("q_E", 0.0) or 0.0)
    x, L = mesh.node_positions, mesh.length
    outer = r_e_mean * q_e + t_e
    return outer + (L - x) / L * (t_i - r_i_mean * q_i - outer)


@dataclass
class LatentMap:
    """The map from latent coordinates to wall properties on a mesh."""

    config: PriorConfig
    t0_mean: np.ndarray
    mesh: Mesh

    @property
    def n_nodes(self) -> int:
        return self.mesh.n_nodes

    @property
    def dim(self) -> int:
        return 3 * self.n_nodes + 2

    def __call__(self, psi: np.ndarray) -> dict:
        """Push a (J, dim) latent matrix forward to per-member arrays."""
        psi = np.atleast_2d(psi)
        if psi.shape[1] != self.dim:
            raise InvalidArgumentError("latent matrix has the wrong width")
        n = self.n_nodes
        cfg = self.config
        k_nodes = cfg.kappa.omega * np.exp(psi[:, :n])
        c_nodes = cfg.c.omega * np.exp(psi[:, n:2 * n])
        return {
            "kappa": 0.5 * (k_nodes[:, :-1] + k_nodes[:, 1:]),
            "c": 0.5 * (c_nodes[:, :-1] + c_nodes[:, 1:]),
            "t0": self.t0_mean[None, :] + psi[:, 2 * n:3 * n],
            "r_i": cfg.r_i.omega * np.exp(psi[:, -2]),
            "r_e": cfg.r_e.omega * np.exp(psi[:, -1]),
        }


def push_forward(latent: LatentSample, config: PriorConfig, t0_mean, mesh: Mesh) -> ThermalSample:
    """Wall properties of one latent sample.

    Nodal conductivity and capacity are exponentiated and averaged over the
    two nodes of each element.
    """
    fmap = LatentMap(config, np.asarray(t0_mean, dtype=float), mesh)
    f = fmap(latent.to_vector()[None, :])
    return ThermalSample(f["kappa"][0], f["c"][0], f["t0"][0], f["r_i"][0], f["r_e"][0])


@dataclass
class Ensemble:
    """J latent vectors together with their pushed-forward properties."""

    psi: np.ndarray
    fmap: LatentMap
    fields: dict = field(init=False, repr=False)

    def __post_init__(self):
        self.psi = np.atleast_2d(np.asarray(self.psi, dtype=float))
        if self.psi.shape[0] < 2:
            raise InvalidArgumentError("an ensemble needs at least two members")
        self.fields = self.fmap(self.psi)

    @property
    def size(self) -> int:
        return self.psi.shape[0]

    J = size

    @property
    def mesh(self) -> Mesh:
        return self.fmap.mesh

    def __getattr__(self, name):
        if name in ("kappa", "c", "t0", "r_i", "r_e"):
            return self.fields[name]
        raise AttributeError(name)

    def with_psi(self, psi) -> "Ensemble":
        return Ensemble(psi, self.fmap)

    def sample(self, j: int) -> ThermalSample:
        f = self.fields
        return ThermalSample(f["kappa"][j], f["c"][j], f["t0"][j], f["r_i"][j], f["r_e"][j])

    def latent(self, j: int) -> LatentSample:
        return LatentSample.from_vector(self.psi[j], self.fmap.n_nodes)

    @property
    def samples(self):
        return [self.sample(j) for j in range(self.size)]

    @property
    def latents(self):
        return [self.latent(j) for j in range(self.size)]

    def subset(self, idx) -> "Ensemble":
        return Ensemble(self.psi[idx], self.fmap)


class PriorSampler:
    """Karhunen-Loeve bases of the three field priors on one mesh."""

    def __init__(self, config: PriorConfig, mesh: Mesh):
        self.config = config
        self.mesh = mesh
        x = mesh.node_positions
        self.bases = {
            name: kl_decompose(matern_covariance(getattr(config, name), x))
            for name in ("kappa", "c", "t0")
        }

    def draw(self, rng: np.random.Generator) -> np.ndarray:
        parts = [sample_latent(self.bases[name], rng) for name in ("kappa", "c", "t0")]
        scal = rng.standard_normal(2) * np.array([self.config.r_i.sigma, self.config.r_e.sigma])
        return np.concatenate(parts + [scal])


def generate_prior_ensemble(config: PriorConfig, J: int, rng: RandomSource, mesh: Mesh,
                            t0_mean) -> Ensemble:
    """Draw ``J`` independent prior members.

    Member ``j`` uses its own stream (``member/<j>`` under a
    :class:`~wallbayes.rng.Streams`), so the ensemble does not depend on
    the order in which members are produced.
    """
    if int(J) != J or J < 2:
        raise InvalidArgumentError(f"ensemble size must be an integer >= 2, got {J}")
    sampler = PriorSampler(config, mesh)
    gens = member_generators(as_streams(rng), int(J))
    psi = np.stack([sampler.draw(g) for g in gens])
    return Ensemble(psi, LatentMap(config, np.asarray(t0_mean, dtype=float), mesh))
