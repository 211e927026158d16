"""Virtual wall experiment: truth, boundary temperatures and measurements."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from importlib import resources
from typing import List, Optional, Tuple

import numpy as np

from .assimilation import MeasurementSeries
from .errors import InvalidArgumentError
from .heat_model import (BoundarySeries, FluxHistory, Mesh, ThermalSample, build_mesh,
                         solve_hdm)
from .priors import ADDITIVE_FIELD, FieldPriorSpec, kl_decompose, matern_covariance
from .rng import RandomSource, as_streams

DAY = 86400.0


@dataclass(frozen=True)
class Layer:
    name: str
    thickness: float
    kappa: float
    c: float


@dataclass(frozen=True)
class AirTemperature:
    """Mean plus harmonics ``(amplitude, period_s, phase)`` plus a Matern process in time."""

    mean: float
    harmonics: Tuple[Tuple[float, float, float], ...] = ()
    grf_sigma: float = 0.0
    grf_ell: float = 21600.0
    grf_nu: float = 1.5

    def deterministic(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        out = np.full(t.shape, float(self.mean))
        for amp, period, phase in self.harmonics:
            out += amp * np.sin(2 * np.pi * t / period + phase)
        return out


@dataclass(frozen=True)
class TruthSpec:
    layers: Tuple[Layer, ...]
    r_i: float = 0.13
    r_e: float = 0.04
    length: float = 0.31
    fine_exponent: int = 9
    sample_interval: float = 300.0
    spinup_days: float = 6.25
    campaign_days: float = 13.5
    rel_error: float = 0.05
    batch_size: int = 30
    internal_air: AirTemperature = AirTemperature(294.5)
    external_air: AirTemperature = AirTemperature(280.0)
    grf_grid: float = 3600.0
    name: str = "custom"

    def __post_init__(self):
        if not self.layers:
            raise InvalidArgumentError("truth needs at least one layer")
        total = sum(l.thickness for l in self.layers)
        if abs(total - self.length) > 1e-9 * self.length:
            raise InvalidArgumentError(f"layers span {total} m, wall is {self.length} m")
        for l in self.layers:
            if not (l.thickness > 0 and l.kappa > 0 and l.c > 0):
                raise InvalidArgumentError(f"layer {l.name!r} needs positive thickness, kappa and c")
        if not (self.r_i > 0 and self.r_e > 0):
            raise InvalidArgumentError("surface resistances must be positive")
        if self.rel_error < 0:
            raise InvalidArgumentError("rel_error must be non-negative")
        if self.sample_interval <= 0 or self.spinup_days < 0 or self.campaign_days <= 0:
            raise InvalidArgumentError("invalid time spans")
        if int(self.batch_size) != self.batch_size or self.batch_size < 1:
            raise InvalidArgumentError("batch_size must be a positive integer")

    @classmethod
    def from_dict(cls, d: dict) -> "TruthSpec":
        d = dict(d)
        d["layers"] = tuple(Layer(**l) for l in d["layers"])
        for key in ("internal_air", "external_air"):
            if key in d:
                a = dict(d[key])
                a["harmonics"] = tuple(tuple(float(v) for v in h) for h in a.get("harmonics", ()))
                d[key] = AirTemperature(**a)
        return cls(**d)

    @classmethod
    def default(cls) -> "TruthSpec":
        text = resources.files("wallbayes").joinpath("data/truth_default.json").read_text()
        return cls.from_dict(json.loads(text))

    def to_dict(self) -> dict:
        d = asdict(self)
        for key in ("internal_air", "external_air"):
            d[key]["harmonics"] = [list(h) for h in d[key]["harmonics"]]
        return d

    def with_updates(self, **kw) -> "TruthSpec":
        return replace(self, **kw)

    @property
    def fine_mesh(self) -> Mesh:
        return build_mesh(self.length, 2 ** self.fine_exponent)

    def element_values(self, mesh: Mesh) -> Tuple[np.ndarray, np.ndarray]:
        """Layer values at the element midpoints of ``mesh``."""
        edges = np.cumsum([l.thickness for l in self.layers])[:-1]
        idx = np.searchsorted(edges, mesh.midpoints, side="right")
        kappa = np.array([l.kappa for l in self.layers])[idx]
        c = np.array([l.c for l in self.layers])[idx]
        return kappa, c

    def sample(self, t0, mesh: Optional[Mesh] = None) -> ThermalSample:
        mesh = self.fine_mesh if mesh is None else mesh
        kappa, c = self.element_values(mesh)
        return ThermalSample(kappa, c, np.asarray(t0, dtype=float), self.r_i, self.r_e)

    @property
    def u_value(self) -> float:
        return 1.0 / (self.r_i + self.r_e + sum(l.thickness / l.kappa for l in self.layers))

    @property
    def c_value(self) -> float:
        return float(sum(l.thickness * l.c for l in self.layers))

    def time_grid(self) -> np.ndarray:
        n_spin = int(round(self.spinup_days * DAY / self.sample_interval))
        n_obs = int(round(self.campaign_days * DAY / self.sample_interval))
        return self.sample_interval * np.arange(-n_spin, n_obs + 1, dtype=float)


def _time_process(air: AirTemperature, times: np.ndarray, grid_step: float,
                  rng: np.random.Generator) -> np.ndarray:
    if air.grf_sigma == 0:
        return np.zeros_like(times)
    n = int(np.ceil((times[-1] - times[0]) / grid_step)) + 1
    coarse = times[0] + grid_step * np.arange(n)
    spec = FieldPriorSpec(air.grf_nu, air.grf_ell, air.grf_sigma, kind=ADDITIVE_FIELD)
    basis = kl_decompose(matern_covariance(spec, coarse))
    values = basis.factor @ rng.standard_normal(basis.size)
    return np.interp(times, coarse, values)


def gen_boundary_temperatures(spec: TruthSpec, rng: RandomSource) -> BoundarySeries:
    """Near-air temperatures on the sampling grid covering spin-up and campaign.

    The random part is drawn on a coarse grid of step ``spec.grf_grid`` and
    interpolated linearly to the sampling times.
    """
    streams = as_streams(rng)
    times = spec.time_grid()
    series = []
    for key in ("internal_air", "external_air"):
        air = getattr(spec, key)
        gen = streams.generator(f"boundary/{key}") if hasattr(streams, "generator") else streams
        series.append(air.deterministic(times) + _time_process(air, times, spec.grf_grid, gen))
    return BoundarySeries(times, series[0], series[1])


def spin_up_t0(spec: TruthSpec, boundary: BoundarySeries, initial=None) -> np.ndarray:
    """True initial temperature at t = 0 after the spin-up solve.

    Starts from the straight line between the two air temperatures at the
    first boundary sample, or from ``initial`` when given.
    """
    mesh = spec.fine_mesh
    t_start = -spec.spinup_days * DAY
    if boundary.start > t_start + 1e-6 or boundary.end < 0:
        raise InvalidArgumentError("boundary series does not cover the spin-up span")
    if initial is None:
        ti, te = boundary.at(t_start)
        x = mesh.node_positions
        initial = ti + (te - ti) * x / mesh.length
    if spec.spinup_days == 0:
        return np.asarray(initial, dtype=float).copy()
    hist = solve_hdm(spec.sample(initial, mesh), boundary, mesh, spec.sample_interval, [0.0], t_start)
    return hist.final_temperature


def window_sigmas(q, rel_error: float, batch_size: int) -> np.ndarray:
    """Per-sample noise level ``rel_error * mean(|q|)`` over consecutive windows.

    Samples from index 1 on are grouped in blocks of ``batch_size``; a
    trailing short block uses its own mean and the t = 0 sample takes the
    level of the first block.
    """
    q = np.abs(np.asarray(q, dtype=float))
    sig = np.empty_like(q)
    for start in range(1, q.size, batch_size):
        block = slice(start, min(start + batch_size, q.size))
        sig[block] = rel_error * q[block].mean()
    sig[0] = sig[1] if q.size > 1 else rel_error * q[0]
    return sig


@dataclass
class SyntheticData:
    spec: TruthSpec
    boundary: BoundarySeries
    t0_true: np.ndarray
    clean: MeasurementSeries
    noisy: MeasurementSeries
    sigma_internal: np.ndarray = field(repr=False, default=None)
    sigma_external: np.ndarray = field(repr=False, default=None)

    def truth_record(self) -> dict:
        mesh = self.spec.fine_mesh
        return {
            "u_true": self.spec.u_value,
            "c_true": self.spec.c_value,
            "r_i_true": self.spec.r_i,
            "r_e_true": self.spec.r_e,
            "length": self.spec.length,
            "node_positions": mesh.node_positions.tolist(),
            "t0_true": self.t0_true.tolist(),
            "spec": self.spec.to_dict(),
        }


def gen_measurements(spec: TruthSpec, boundary: BoundarySeries, t0_true,
                     rng: RandomSource) -> Tuple[MeasurementSeries, FluxHistory]:
    """Noisy flux measurements over the campaign and the noiseless history."""
    mesh = spec.fine_mesh
    times = boundary.times[boundary.times >= -1e-9]
    times = times[times <= spec.campaign_days * DAY + 1e-6]
    clean = solve_hdm(spec.sample(t0_true, mesh), boundary, mesh, spec.sample_interval, times, 0.0)
    streams = as_streams(rng)
    gen = streams.generator("noise") if hasattr(streams, "generator") else streams
    noisy = []
    for q in (clean.q_internal, clean.q_external):
        sig = window_sigmas(q, spec.rel_error, int(spec.batch_size))
        noisy.append(q + sig * gen.standard_normal(q.size))
    ti, te = boundary.at(times)
    series = MeasurementSeries(times, ti, te, noisy[0], noisy[1],
                               rel_error=spec.rel_error if spec.rel_error > 0 else 0.05)
    return series, clean


def generate(spec: TruthSpec, seed: int) -> SyntheticData:
    """Full synthetic dataset as a pure function of ``(spec, seed)``."""
    streams = as_streams(int(seed)).child("synth")
    boundary = gen_boundary_temperatures(spec, streams)
    t0 = spin_up_t0(spec, boundary)
    noisy, clean = gen_measurements(spec, boundary, t0, streams)
    clean_series = MeasurementSeries(noisy.times, noisy.t_internal, noisy.t_external,
                                     clean.q_internal, clean.q_external, noisy.rel_error)
    return SyntheticData(spec, boundary, t0, clean_series, noisy,
                         window_sigmas(clean.q_internal, spec.rel_error, spec.batch_size),
                         window_sigmas(clean.q_external, spec.rel_error, spec.batch_size))


def layer_table(spec: TruthSpec) -> List[dict]:
    return [asdict(l) for l in spec.layers]
