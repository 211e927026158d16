"""Batch-sequential assimilation of surface heat flux measurements.

Observations after ``t = 0`` are grouped into windows of ``batch_size``
samples.  For window ``m`` the forward map solves the heat model from
``t = 0`` to the window end with the measured near-air temperatures and
returns the fluxes at the window's observation times; the ensemble from
window ``m - 1`` is then updated with :func:`~wallbayes.renka.renka_step`.
"""
from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Optional

import numpy as np

from .errors import InvalidArgumentError, OutOfRangeError
from .heat_model import BoundarySeries, Mesh, solve_hdm_batch
from .priors import Ensemble
from .renka import NoiseModel, TemperingTrace, renka_step
from .rng import Streams, as_streams, member_generators

BOTH = "both_fluxes"
INTERNAL_ONLY = "internal_only"
MODES = (BOTH, INTERNAL_ONLY)


@dataclass
class MeasurementSeries:
    times: np.ndarray
    t_internal: np.ndarray
    t_external: np.ndarray
    q_internal: np.ndarray
    q_external: Optional[np.ndarray] = None
    rel_error: float = 0.05

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        n = self.times.size
        for name in ("t_internal", "t_external", "q_internal"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != (n,):
                raise InvalidArgumentError(f"{name} has length {arr.size}, expected {n}")
            setattr(self, name, arr)
        if self.q_external is not None:
            self.q_external = np.asarray(self.q_external, dtype=float)
            if self.q_external.shape != (n,):
                raise InvalidArgumentError("q_external is not aligned with times")
        if n < 2 or np.any(np.diff(self.times) <= 0):
            raise InvalidArgumentError("times must be strictly ascending with at least two samples")
        if not self.rel_error > 0:
            raise InvalidArgumentError("rel_error must be positive")

    @property
    def mode(self) -> str:
        return BOTH if self.q_external is not None else INTERNAL_ONLY

    def __len__(self):
        return self.times.size

    def for_mode(self, mode: str) -> "MeasurementSeries":
        """View of the data used in ``mode``; internal-only drops ``q_external``."""
        if mode not in MODES:
            raise InvalidArgumentError(f"unknown mode {mode!r}")
        if mode == BOTH and self.q_external is None:
            raise InvalidArgumentError("mode both_fluxes needs external flux measurements")
        q_ext = self.q_external if mode == BOTH else None
        return MeasurementSeries(self.times, self.t_internal, self.t_external,
                                 self.q_internal, q_ext, self.rel_error)

    def boundary(self) -> BoundarySeries:
        return BoundarySeries(self.times, self.t_internal, self.t_external)

    def first(self) -> dict:
        return {"T_I": self.t_internal[0], "T_E": self.t_external[0],
                "q_I": self.q_internal[0],
                "q_E": 0.0 if self.q_external is None else self.q_external[0]}

    def observations(self, idx) -> np.ndarray:
        parts = [self.q_internal[idx]]
        if self.q_external is not None:
            parts.append(self.q_external[idx])
        return np.concatenate(parts)

    def noise(self, idx) -> NoiseModel:
        """Per-channel ``sigma = rel_error * mean(|q|)`` over the window."""
        parts = [np.full(len(idx), self.rel_error * np.mean(np.abs(self.q_internal[idx])))]
        if self.q_external is not None:
            parts.append(np.full(len(idx), self.rel_error * np.mean(np.abs(self.q_external[idx]))))
        return NoiseModel(np.concatenate(parts))


@dataclass
class WindowPlan:
    batch_size: int
    blocks: List[np.ndarray]
    window_end_times: np.ndarray

    @property
    def M(self) -> int:
        return len(self.blocks)


def plan_windows(measurements: MeasurementSeries, batch_size: int, span: float) -> WindowPlan:
    """Windows of ``batch_size`` consecutive observations in ``(t0, t0 + span]``.

    A trailing incomplete window is dropped.
    """
    if int(batch_size) != batch_size or batch_size < 1:
        raise InvalidArgumentError("batch_size must be a positive integer")
    t = measurements.times
    tol = 1e-9 * max(1.0, abs(span))
    avail = np.nonzero((t > t[0]) & (t <= t[0] + span + tol))[0]
    M = avail.size // int(batch_size)
    blocks = [avail[m * batch_size:(m + 1) * batch_size] for m in range(M)]
    ends = np.array([t[b[-1]] for b in blocks])
    return WindowPlan(int(batch_size), blocks, ends)


@dataclass
class Summary:
    mean: np.ndarray
    lo: np.ndarray
    hi: np.ndarray

    def to_dict(self) -> dict:
        return {k: np.asarray(v).tolist() for k, v in (("mean", self.mean), ("lo", self.lo), ("hi", self.hi))}


def summarize(samples, alpha: float) -> Summary:
    """Mean and equal-tail ``(1 - alpha)`` interval along the member axis (axis 0)."""
    x = np.asarray(samples, dtype=float)
    if not 0 < alpha < 1:
        raise InvalidArgumentError("alpha must lie in (0, 1)")
    if x.ndim == 0 or x.shape[0] < 2:
        raise InvalidArgumentError("need at least two samples")
    lo, hi = np.quantile(x, [alpha / 2, 1 - alpha / 2], axis=0, method="linear")
    return Summary(x.mean(axis=0), lo, hi)


def derived_quantities(ensemble: Ensemble, mesh: Optional[Mesh] = None) -> Dict[str, np.ndarray]:
    mesh = ensemble.mesh if mesh is None else mesh
    w = mesh.element_widths
    return {
        "u": 1.0 / (ensemble.r_i + ensemble.r_e + (w / ensemble.kappa).sum(axis=1)),
        "c": (w * ensemble.c).sum(axis=1),
        "r_i": np.array(ensemble.r_i, copy=True),
        "r_e": np.array(ensemble.r_e, copy=True),
    }


def solve_members(ensemble: Ensemble, boundary: BoundarySeries, output_times, dt: float,
                  workers: int = 1, t_start: Optional[float] = None):
    """Batch forward solve, split over ``workers`` threads by member block."""
    J = ensemble.size
    mesh = ensemble.mesh
    f = ensemble.fields

    def run(idx):
        return solve_hdm_batch(f["kappa"][idx], f["c"][idx], f["t0"][idx], f["r_i"][idx],
                               f["r_e"][idx], boundary, mesh, dt, output_times, t_start)

    if workers <= 1 or J < 2 * workers:
        hist = run(slice(None))
        return hist.q_internal, hist.q_external
    chunks = np.array_split(np.arange(J), workers)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        parts = list(pool.map(run, chunks))
    return (np.concatenate([p.q_internal for p in parts]),
            np.concatenate([p.q_external for p in parts]))


@dataclass
class PosteriorSnapshot:
    window: int
    time: float
    fields: Dict[str, Summary]
    samples: Dict[str, np.ndarray]
    trace: TemperingTrace
    cost_seconds: float = 0.0
    ensemble: Optional[Ensemble] = field(default=None, repr=False)

    def scalar_summary(self, name: str, alpha: float) -> Summary:
        return summarize(self.samples[name], alpha)

    def to_dict(self, alpha_table: float = 0.01) -> dict:
        """JSON-ready record; wall-clock cost is left out so records are reproducible."""
        from .diagnostics import coefficient_of_variation

        scalars = {}
        for name, x in self.samples.items():
            s = summarize(x, alpha_table)
            scalars[name] = {"mean": float(s.mean), "lo": float(s.lo), "hi": float(s.hi),
                             "cov": coefficient_of_variation(x), "samples": x.tolist()}
        return {
            "window": self.window,
            "time_s": float(self.time),
            "time_days": float(self.time) / 86400.0,
            "alpha_table": alpha_table,
            "scalars": scalars,
            "fields": {k: v.to_dict() for k, v in self.fields.items()},
            "tempering": self.trace.to_dict(),
        }


def make_snapshot(window: int, tau: float, ensemble: Ensemble, trace: TemperingTrace,
                  cost: float, alpha_field: float) -> PosteriorSnapshot:
    fields = {name: summarize(ensemble.fields[name], alpha_field) for name in ("kappa", "c", "t0")}
    return PosteriorSnapshot(window, tau, fields, derived_quantities(ensemble), trace, cost, ensemble)


def iter_sequential(config, measurements: MeasurementSeries, prior: Ensemble,
                    plan: Optional[WindowPlan] = None) -> Iterator[PosteriorSnapshot]:
    """Yield one posterior snapshot per assimilation window.

    ``config`` provides ``mode``, ``batch_size``, ``assimilation_span`` (s),
    ``dt``, ``j_thresh``, ``alpha_field``, ``seed``, ``workers`` and
    ``max_iterations`` (see :class:`~wallbayes.config.RunConfig`).
    """
    data = measurements.for_mode(config.mode)
    if plan is None:
        plan = plan_windows(data, config.batch_size, config.assimilation_span)
    boundary = data.boundary()
    t_start = float(data.times[0])
    streams = Streams(config.seed).child("renka")
    ensemble = prior
    j_thresh = config.effective_j_thresh
    for m, idx in enumerate(plan.blocks, start=1):
        tic = time.perf_counter()
        out_times = data.times[idx]
        q = data.observations(idx)
        noise = data.noise(idx)

        def forward(ens, out_times=out_times):
            q_in, q_out = solve_members(ens, boundary, out_times, config.dt, config.workers, t_start)
            return np.hstack([q_in, q_out]) if data.q_external is not None else q_in

        ensemble, trace = renka_step(ensemble, forward, q, noise, j_thresh,
                                     streams.child(f"window/{m}"), config.max_iterations)
        yield make_snapshot(m, float(plan.window_end_times[m - 1]), ensemble, trace,
                            time.perf_counter() - tic, config.alpha_field)


def run_sequential(config, measurements: MeasurementSeries, prior: Ensemble,
                   plan: Optional[WindowPlan] = None) -> List[PosteriorSnapshot]:
    return list(iter_sequential(config, measurements, prior, plan))


@dataclass
class PredictiveEnsemble:
    """Predictive flux ensemble over a horizon.

    ``q_internal``/``q_external`` hold the model trajectories of every
    member.  When a noise level is given, the credible bounds describe the
    measured flux (model plus measurement error) while the mean is the
    model mean.
    """

    times: np.ndarray
    q_internal: np.ndarray
    q_external: Optional[np.ndarray]
    internal: Summary
    external: Optional[Summary]
    alpha: float
    sigma_internal: Optional[np.ndarray] = None
    sigma_external: Optional[np.ndarray] = None


def block_sigma(q, rel_error: float, batch_size: int) -> np.ndarray:
    """``rel_error * mean(|q|)`` over consecutive blocks of ``batch_size``."""
    q = np.abs(np.asarray(q, dtype=float))
    sig = np.empty_like(q)
    for start in range(0, q.size, batch_size):
        block = slice(start, start + batch_size)
        sig[block] = rel_error * q[block].mean()
    return sig


def _predictive_summary(members, alpha, sigma, gens):
    model = summarize(members, alpha)
    if sigma is None:
        return model
    eta = np.stack([g.standard_normal(members.shape[1]) for g in gens]) * sigma[None, :]
    noisy = summarize(members + eta, alpha)
    return Summary(model.mean, noisy.lo, noisy.hi)


def predict(ensemble: Ensemble, boundary_future: BoundarySeries, horizon_times, mesh: Optional[Mesh] = None,
            dt: float = 300.0, alpha: float = 0.05, workers: int = 1,
            include_external: bool = True, rel_error: Optional[float] = None,
            batch_size: int = 30, rng=None) -> PredictiveEnsemble:
    """Predictive flux distribution from a full re-solve per member.

    Every member starts at the first boundary sample with its own inferred
    initial temperature and runs to the last horizon time.  With
    ``rel_error`` set, measurement noise with the block-wise level of the
    predicted mean flux is added to each member before the bounds are taken;
    member ``j`` draws from ``member/<j>`` of ``rng`` (seed or Streams).
    """
    if mesh is not None and mesh.n_elements != ensemble.mesh.n_elements:
        raise InvalidArgumentError("mesh does not match the ensemble")
    horizon = np.asarray(horizon_times, dtype=float)
    if horizon.size == 0:
        raise InvalidArgumentError("empty prediction horizon")
    if horizon[0] < boundary_future.start or horizon[-1] > boundary_future.end:
        raise OutOfRangeError("prediction horizon outside boundary coverage")
    q_in, q_out = solve_members(ensemble, boundary_future, horizon, dt, workers)
    sig_in = sig_out = None
    if rel_error is not None:
        streams = as_streams(0 if rng is None else rng)
        sig_in = block_sigma(q_in.mean(axis=0), rel_error, batch_size)
        sig_out = block_sigma(q_out.mean(axis=0), rel_error, batch_size)
        if isinstance(streams, Streams):
            gens_in = member_generators(streams.child("internal"), ensemble.size)
            gens_out = member_generators(streams.child("external"), ensemble.size)
        else:
            gens_in = member_generators(streams, ensemble.size)
            gens_out = member_generators(streams, ensemble.size)
    else:
        gens_in = gens_out = None
    internal = _predictive_summary(q_in, alpha, sig_in, gens_in)
    external = _predictive_summary(q_out, alpha, sig_out, gens_out) if include_external else None
    return PredictiveEnsemble(horizon, q_in, q_out if include_external else None, internal, external,
                              alpha, sig_in, sig_out if include_external else None)
