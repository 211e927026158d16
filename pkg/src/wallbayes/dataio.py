"""CSV and JSON formats for datasets, snapshots and reports."""
from __future__ import annotations

import csv
import json
import os
from typing import Iterable, List, Optional, Sequence

import numpy as np

from .assimilation import MeasurementSeries, PosteriorSnapshot
from .errors import DataError
from .heat_model import BoundarySeries, build_mesh
from .priors import Ensemble, FieldPriorSpec, LatentMap, PriorConfig, ScalarPriorSpec

MEASUREMENT_COLUMNS = ("time_s", "t_internal_K", "t_external_K", "q_internal_Wm2", "q_external_Wm2")
BOUNDARY_COLUMNS = ("time_s", "t_internal_K", "t_external_K")
NA = "NA"


def fmt(x) -> str:
    """17 significant digits, enough to round-trip any double."""
    return format(float(x), ".17g")


def _ensure_dir(path):
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)


def write_table(path, header: Sequence[str], columns: Sequence[Sequence], na_rep: str = NA) -> None:
    """Write equally long columns as CSV with LF line endings."""
    _ensure_dir(path)
    n = len(columns[0]) if columns else 0
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for i in range(n):
            cells = []
            for col in columns:
                v = col[i]
                if v is None or (isinstance(v, float) and np.isnan(v)):
                    cells.append(na_rep)
                elif isinstance(v, (int, np.integer)) and not isinstance(v, bool):
                    cells.append(str(int(v)))
                elif isinstance(v, str):
                    cells.append(v)
                else:
                    cells.append(fmt(v))
            fh.write(",".join(cells) + "\n")


def _read_columns(path, required: Sequence[str]) -> dict:
    try:
        fh = open(path, "r", encoding="utf-8", newline="")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror}") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path} is empty", row=1) from None
        for name in required:
            if name not in header:
                raise DataError(f"{path}: missing column {name!r}", row=1, column=name)
        idx = {name: header.index(name) for name in required}
        cols = {name: [] for name in required}
        for row_no, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DataError(f"{path}: row {row_no} has {len(row)} fields, expected {len(header)}",
                                row=row_no)
            for name, i in idx.items():
                cell = row[i].strip()
                if cell == NA:
                    cols[name].append(np.nan)
                    continue
                try:
                    cols[name].append(float(cell))
                except ValueError:
                    raise DataError(f"{path}: row {row_no}, column {name!r}: not a number: {cell!r}",
                                    row=row_no, column=name) from None
    return {k: np.array(v, dtype=float) for k, v in cols.items()}


def write_measurements(path, series: MeasurementSeries) -> None:
    q_ext = series.q_external if series.q_external is not None else [None] * len(series)
    write_table(path, MEASUREMENT_COLUMNS,
                [series.times, series.t_internal, series.t_external, series.q_internal, q_ext])


def read_measurements(path, rel_error: float = 0.05) -> MeasurementSeries:
    """Parse a measurements CSV; an all-``NA`` external flux column means internal-only data."""
    cols = _read_columns(path, MEASUREMENT_COLUMNS)
    for name in MEASUREMENT_COLUMNS[:4]:
        bad = np.nonzero(~np.isfinite(cols[name]))[0]
        if bad.size:
            raise DataError(f"{path}: row {bad[0] + 2}, column {name!r}: missing value",
                            row=int(bad[0] + 2), column=name)
    q_ext = cols["q_external_Wm2"]
    missing = np.isnan(q_ext)
    if missing.all():
        q_ext = None
    elif missing.any():
        row = int(np.nonzero(missing)[0][0] + 2)
        raise DataError(f"{path}: row {row}, column 'q_external_Wm2': partially missing external flux",
                        row=row, column="q_external_Wm2")
    try:
        return MeasurementSeries(cols["time_s"], cols["t_internal_K"], cols["t_external_K"],
                                 cols["q_internal_Wm2"], q_ext, rel_error)
    except ValueError as exc:
        raise DataError(f"{path}: {exc}", column="time_s") from exc


def write_boundary(path, boundary: BoundarySeries) -> None:
    write_table(path, BOUNDARY_COLUMNS, [boundary.times, boundary.t_internal, boundary.t_external])


def read_boundary(path) -> BoundarySeries:
    cols = _read_columns(path, BOUNDARY_COLUMNS)
    try:
        return BoundarySeries(cols["time_s"], cols["t_internal_K"], cols["t_external_K"])
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from exc


def write_json(path, obj) -> None:
    _ensure_dir(path)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True, allow_nan=True)
        fh.write("\n")


def read_json(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON at line {exc.lineno}", row=exc.lineno) from exc


def prior_to_dict(prior: PriorConfig) -> dict:
    out = {}
    for name in ("kappa", "c", "t0"):
        s = getattr(prior, name)
        out[name] = {"nu": s.nu, "ell": s.ell, "sigma": s.sigma, "omega": s.omega, "kind": s.kind}
    for name in ("r_i", "r_e"):
        s = getattr(prior, name)
        out[name] = {"omega": s.omega, "sigma": s.sigma}
    return out


def prior_from_dict(d: dict) -> PriorConfig:
    parts = {name: FieldPriorSpec(**d[name]) for name in ("kappa", "c", "t0")}
    parts.update({name: ScalarPriorSpec(**d[name]) for name in ("r_i", "r_e")})
    return PriorConfig(**parts)


def ensemble_to_dict(ensemble: Ensemble) -> dict:
    fmap = ensemble.fmap
    return {
        "length": fmap.mesh.length,
        "n_elements": fmap.mesh.n_elements,
        "prior": prior_to_dict(fmap.config),
        "t0_mean": fmap.t0_mean.tolist(),
        "psi": ensemble.psi.tolist(),
    }


def ensemble_from_dict(d: dict) -> Ensemble:
    try:
        mesh = build_mesh(d["length"], int(d["n_elements"]))
        fmap = LatentMap(prior_from_dict(d["prior"]), np.asarray(d["t0_mean"], dtype=float), mesh)
        return Ensemble(np.asarray(d["psi"], dtype=float), fmap)
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"malformed ensemble record: {exc}") from exc


def snapshot_record(snapshot: PosteriorSnapshot, alpha_table: float, include_ensemble: bool = False,
                    extra: Optional[dict] = None) -> dict:
    rec = snapshot.to_dict(alpha_table)
    if include_ensemble:
        rec["ensemble"] = ensemble_to_dict(snapshot.ensemble)
    if extra:
        rec.update(extra)
    return rec


def write_rows(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    rows = list(rows)
    columns: List[list] = [[r[i] for r in rows] for i in range(len(header))]
    write_table(path, header, columns)
