"""One-dimensional transient heat conduction through a wall.

The wall occupies ``[0, L]`` with the internal surface at ``x = 0``.  The
temperature is discretised with linear finite elements, conductivity and
volumetric heat capacity are constant per element, and the surfaces exchange
heat with the near-air temperatures through film resistances (Robin
conditions).  Time integration is backward Euler.

Sign convention: heat flux is positive in the ``+x`` direction, i.e. from
the room towards the outside.  With ``T_I > T_E`` at steady state both
surface fluxes equal ``U * (T_I - T_E) > 0``.

Implementation note
-------------------
The backward Euler system ``(M + h K) T' = M T + h f`` is solved in the
generalised eigenbasis ``K v = lam M v`` (``V^T M V = I``).  In that basis
each step is the scalar recursion ``z' = (z + h V^T f) / (1 + h lam)``,
which is algebraically identical to the direct solve, allows arbitrary step
sizes, and runs over a whole ensemble with elementwise array operations.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import InvalidArgumentError, NumericalFailureError, OutOfRangeError

__all__ = [
    "Mesh",
    "ThermalSample",
    "BoundarySeries",
    "FluxHistory",
    "build_mesh",
    "solve_hdm",
    "solve_hdm_batch",
    "simulate_states",
    "compute_u_value",
    "compute_c_value",
    "restrict_to_mesh",
]


@dataclass(frozen=True)
class Mesh:
    length: float
    n_elements: int
    node_positions: np.ndarray
    element_widths: np.ndarray

    @property
    def n_nodes(self) -> int:
        return self.n_elements + 1

    @property
    def midpoints(self) -> np.ndarray:
        return 0.5 * (self.node_positions[:-1] + self.node_positions[1:])


def build_mesh(length: float, n_elements: int) -> Mesh:
    """Uniform partition of ``[0, length]`` into ``n_elements`` elements."""
    if not np.isfinite(length) or length <= 0:
        raise InvalidArgumentError(f"wall length must be positive, got {length}")
    if int(n_elements) != n_elements or n_elements < 1:
        raise InvalidArgumentError(f"n_elements must be a positive integer, got {n_elements}")
    n_elements = int(n_elements)
    nodes = np.linspace(0.0, float(length), n_elements + 1)
    nodes[0], nodes[-1] = 0.0, float(length)
    return Mesh(float(length), n_elements, nodes, np.diff(nodes))


@dataclass
class ThermalSample:
    """One realisation of the unknown wall properties on a mesh."""

    kappa: np.ndarray
    c: np.ndarray
    t0: np.ndarray
    r_i: float
    r_e: float

    def __post_init__(self):
        self.kappa = np.asarray(self.kappa, dtype=float)
        self.c = np.asarray(self.c, dtype=float)
        self.t0 = np.asarray(self.t0, dtype=float)
        self.r_i = float(self.r_i)
        self.r_e = float(self.r_e)
        if self.kappa.ndim != 1 or self.kappa.shape != self.c.shape:
            raise InvalidArgumentError("kappa and c must be 1-D arrays of equal length")
        if self.t0.shape != (self.kappa.size + 1,):
            raise InvalidArgumentError("t0 must have one value per node (n_elements + 1)")
        if not (np.all(self.kappa > 0) and np.all(self.c > 0)):
            raise InvalidArgumentError("kappa and c must be strictly positive")
        if not (self.r_i > 0 and self.r_e > 0):
            raise InvalidArgumentError("surface resistances must be positive")

    def check_mesh(self, mesh: Mesh) -> None:
        if self.kappa.size != mesh.n_elements:
            raise InvalidArgumentError(
                f"sample has {self.kappa.size} elements but mesh has {mesh.n_elements}"
            )


@dataclass
class BoundarySeries:
    """Near-air temperatures, interpolated linearly between samples."""

    times: np.ndarray
    t_internal: np.ndarray
    t_external: np.ndarray

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.t_internal = np.asarray(self.t_internal, dtype=float)
        self.t_external = np.asarray(self.t_external, dtype=float)
        n = self.times.size
        if self.times.ndim != 1 or n < 2:
            raise InvalidArgumentError("boundary series needs at least two samples")
        if self.t_internal.shape != (n,) or self.t_external.shape != (n,):
            raise InvalidArgumentError("boundary arrays must have equal lengths")
        if np.any(np.diff(self.times) <= 0):
            raise InvalidArgumentError("boundary times must be strictly ascending")

    @property
    def start(self) -> float:
        return float(self.times[0])

    @property
    def end(self) -> float:
        return float(self.times[-1])

    def at(self, t) -> tuple:
        t = np.asarray(t, dtype=float)
        return (np.interp(t, self.times, self.t_internal),
                np.interp(t, self.times, self.t_external))


@dataclass
class FluxHistory:
    """Surface fluxes at the requested output times.

    For batch solves every array carries a leading member axis.
    """

    times: np.ndarray
    q_internal: np.ndarray
    q_external: np.ndarray
    final_temperature: np.ndarray


def compute_u_value(sample: ThermalSample, mesh: Mesh) -> float:
    """Thermal transmittance ``[R_I + R_E + sum(h_e / kappa_e)]^-1``."""
    sample.check_mesh(mesh)
    return 1.0 / (sample.r_i + sample.r_e + float(np.sum(mesh.element_widths / sample.kappa)))


def compute_c_value(sample: ThermalSample, mesh: Mesh) -> float:
    """Areal heat capacity ``sum(h_e * c_e)``."""
    sample.check_mesh(mesh)
    return float(np.sum(mesh.element_widths * sample.c))


def restrict_to_mesh(values: np.ndarray, source: Mesh, target: Mesh) -> np.ndarray:
    """Sample a per-element field of ``source`` at the element midpoints of ``target``."""
    idx = np.searchsorted(source.node_positions, target.midpoints, side="right") - 1
    idx = np.clip(idx, 0, source.n_elements - 1)
    return np.asarray(values)[..., idx]


# ---------------------------------------------------------------------------
# batched modal solver

class _ModalSystem:
    """Generalised eigendecomposition of (K, M) for a batch of samples."""

    def __init__(self, kappa, c, r_i, r_e, widths):
        kappa = np.atleast_2d(kappa)
        c = np.atleast_2d(c)
        r_i = np.atleast_1d(np.asarray(r_i, dtype=float))
        r_e = np.atleast_1d(np.asarray(r_e, dtype=float))
        if np.any(~np.isfinite(kappa)) or np.any(kappa <= 0) or np.any(c <= 0):
            raise InvalidArgumentError("kappa and c must be finite and strictly positive")
        if np.any(r_i <= 0) or np.any(r_e <= 0):
            raise InvalidArgumentError("surface resistances must be positive")
        n_batch, n_el = kappa.shape
        n = n_el + 1
        stiff = kappa / widths
        mass = c * widths / 6.0
        ar = np.arange(n_el)
        K = np.zeros((n_batch, n, n))
        M = np.zeros((n_batch, n, n))
        K[:, ar, ar] += stiff
        K[:, ar + 1, ar + 1] += stiff
        K[:, ar, ar + 1] -= stiff
        K[:, ar + 1, ar] -= stiff
        M[:, ar, ar] += 2.0 * mass
        M[:, ar + 1, ar + 1] += 2.0 * mass
        M[:, ar, ar + 1] += mass
        M[:, ar + 1, ar] += mass
        K[:, 0, 0] += 1.0 / r_i
        K[:, -1, -1] += 1.0 / r_e
        try:
            chol = np.linalg.cholesky(M)
            eye = np.broadcast_to(np.eye(n), M.shape)
            chol_inv = np.linalg.solve(chol, eye)
            sym = chol_inv @ K @ np.swapaxes(chol_inv, -1, -2)
            sym = 0.5 * (sym + np.swapaxes(sym, -1, -2))
            lam, vec = np.linalg.eigh(sym)
        except np.linalg.LinAlgError as exc:
            raise NumericalFailureError(f"heat model system is singular: {exc}") from exc
        if np.any(lam <= 0) or not np.all(np.isfinite(lam)):
            raise NumericalFailureError("heat model operator is not positive definite")
        self.lam = lam
        # V = L^-T U; V^T M = U^T L^T
        self.V = np.swapaxes(chol_inv, -1, -2) @ vec
        self._proj = np.swapaxes(vec, -1, -2) @ np.swapaxes(chol, -1, -2)
        self.v_in = np.ascontiguousarray(self.V[:, 0, :])
        self.v_out = np.ascontiguousarray(self.V[:, -1, :])
        self.r_i = r_i
        self.r_e = r_e
        self.mass = M

    def project(self, t0) -> np.ndarray:
        t0 = np.atleast_2d(t0)
        return (self._proj * t0[:, None, :]).sum(axis=-1)

    def nodal(self, z) -> np.ndarray:
        return (self.V * z[:, None, :]).sum(axis=-1)


def _step_times(t_start: float, t_end: float, dt: float) -> np.ndarray:
    n_full = int(np.floor((t_end - t_start) / dt + 1e-9))
    times = t_start + dt * np.arange(n_full + 1)
    if t_end - times[-1] > 1e-9 * dt:
        times = np.append(times, t_end)
    elif n_full:
        times[-1] = t_end
    return times


def _march(system: _ModalSystem, t0, boundary: BoundarySeries, t_start: float,
           dt: float, output_times: np.ndarray, keep_states: bool = False):
    """Advance all members and return surface temperatures at output times."""
    t_end = float(output_times.max()) if output_times.size else t_start
    steps = _step_times(t_start, t_end, dt)
    ti, te = boundary.at(steps)
    z = system.project(t0)
    n_batch = z.shape[0]

    # steps whose surface temperatures are needed for interpolation
    hi = np.clip(np.searchsorted(steps, output_times, side="left"), 0, steps.size - 1)
    lo = np.clip(hi - 1, 0, steps.size - 1)
    need = np.zeros(steps.size, dtype=bool)
    need[hi] = True
    need[lo] = True

    surf_in = np.full((n_batch, steps.size), np.nan)
    surf_out = np.full((n_batch, steps.size), np.nan)
    states = [system.nodal(z)] if keep_states else None
    if need[0]:
        surf_in[:, 0] = (system.v_in * z).sum(axis=1)
        surf_out[:, 0] = (system.v_out * z).sum(axis=1)

    cache = {}
    for k in range(1, steps.size):
        h = steps[k] - steps[k - 1]
        key = round(h, 9)
        if key not in cache:
            a = 1.0 / (1.0 + h * system.lam)
            cache[key] = (a,
                          (h / system.r_i)[:, None] * a * system.v_in,
                          (h / system.r_e)[:, None] * a * system.v_out)
        a, b_in, b_out = cache[key]
        z = a * z + b_in * ti[k] + b_out * te[k]
        if need[k]:
            surf_in[:, k] = (system.v_in * z).sum(axis=1)
            surf_out[:, k] = (system.v_out * z).sum(axis=1)
        if keep_states:
            states.append(system.nodal(z))

    # linear interpolation of surface temperatures between steps
    t_lo, t_hi = steps[lo], steps[hi]
    span = np.where(t_hi > t_lo, t_hi - t_lo, 1.0)
    w = np.where(t_hi > t_lo, (output_times - t_lo) / span, 1.0)
    s_in = (1 - w) * surf_in[:, lo] + w * surf_in[:, hi]
    s_out = (1 - w) * surf_out[:, lo] + w * surf_out[:, hi]
    final = system.nodal(z)
    if keep_states:
        return steps, np.stack(states, axis=1), (ti, te)
    return s_in, s_out, final


def _check_times(boundary: BoundarySeries, output_times, t_start: float, dt: float):
    if not (dt > 0 and np.isfinite(dt)):
        raise InvalidArgumentError(f"dt must be positive, got {dt}")
    out = np.asarray(output_times, dtype=float)
    if out.ndim != 1:
        raise InvalidArgumentError("output_times must be one-dimensional")
    if out.size and np.any(np.diff(out) < 0):
        raise InvalidArgumentError("output_times must be ascending")
    tol = 1e-9 * max(1.0, abs(boundary.end))
    if t_start < boundary.start - tol or t_start > boundary.end + tol:
        raise OutOfRangeError(f"start time {t_start} outside boundary coverage")
    if out.size and (out[0] < t_start - tol or out[-1] > boundary.end + tol):
        raise OutOfRangeError(
            f"output times [{out[0]}, {out[-1]}] outside coverage [{t_start}, {boundary.end}]"
        )
    return out


def solve_hdm_batch(kappa, c, t0, r_i, r_e, boundary: BoundarySeries, mesh: Mesh,
                    dt: float, output_times, t_start: Optional[float] = None) -> FluxHistory:
    """Solve the heat model for a batch of members sharing mesh and boundary.

    Parameters
    ----------
    kappa, c : array, shape (J, n_elements)
    t0 : array, shape (J, n_nodes)
        Nodal temperature at ``t_start``.
    r_i, r_e : array, shape (J,)
    t_start : float, optional
        Initial time, defaults to the first boundary sample.

    Returns
    -------
    FluxHistory
        With arrays of shape (J, n_out) for the fluxes and (J, n_nodes) for
        the final nodal temperature.
    """
    t_start = boundary.start if t_start is None else float(t_start)
    out = _check_times(boundary, output_times, t_start, dt)
    kappa = np.atleast_2d(np.asarray(kappa, dtype=float))
    if kappa.shape[1] != mesh.n_elements:
        raise InvalidArgumentError("kappa does not match the mesh")
    t0 = np.atleast_2d(np.asarray(t0, dtype=float))
    if t0.shape[1] != mesh.n_nodes:
        raise InvalidArgumentError("t0 does not match the mesh")
    system = _ModalSystem(kappa, c, r_i, r_e, mesh.element_widths)
    s_in, s_out, final = _march(system, t0, boundary, t_start, dt, out)
    ti, te = boundary.at(out)
    q_in = (ti - s_in) / system.r_i[:, None]
    q_out = (s_out - te) / system.r_e[:, None]
    if not (np.all(np.isfinite(q_in)) and np.all(np.isfinite(q_out))):
        raise NumericalFailureError("non-finite flux in heat model solution")
    return FluxHistory(out.copy(), q_in, q_out, final)


def solve_hdm(sample: ThermalSample, boundary: BoundarySeries, mesh: Mesh, dt: float,
              output_times: Sequence[float], t_start: Optional[float] = None) -> FluxHistory:
    """Surface heat fluxes of one sample at ``output_times``.

    ``q_internal = (T_I - T(0)) / r_i`` and ``q_external = (T(L) - T_E) / r_e``
    with the nodal surface temperatures of the FE solution.
    """
    sample.check_mesh(mesh)
    hist = solve_hdm_batch(sample.kappa[None], sample.c[None], sample.t0[None],
                           [sample.r_i], [sample.r_e], boundary, mesh, dt,
                           output_times, t_start)
    return FluxHistory(hist.times, hist.q_internal[0], hist.q_external[0],
                       hist.final_temperature[0])


def simulate_states(sample: ThermalSample, boundary: BoundarySeries, mesh: Mesh, dt: float,
                    t_end: float, t_start: Optional[float] = None):
    """Nodal temperatures at every time step.

    Returns ``(step_times, temperatures, (t_internal, t_external), mass_matrix)``
    where ``temperatures`` has shape (n_steps, n_nodes).  Used for
    conservation and maximum-principle checks.
    """
    sample.check_mesh(mesh)
    t_start = boundary.start if t_start is None else float(t_start)
    out = _check_times(boundary, [t_end], t_start, dt)
    system = _ModalSystem(sample.kappa[None], sample.c[None], [sample.r_i], [sample.r_e],
                          mesh.element_widths)
    steps, states, bc = _march(system, sample.t0[None], boundary, t_start, dt, out,
                               keep_states=True)
    return steps, states[0], bc, system.mass[0]
