"""CSV ingestion, JSON model documents, contour-grid export and bundled datasets."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .density import component_logpdfs, density_batch
from .errors import (
    DataFileNotFound,
    DimensionMismatch,
    EmptyFile,
    InputError,
    ParseError,
    RangeInvalid,
    SchemaVersionMismatch,
)
from .mvt import CdfSettings
from .params import CfustParams, DataMatrix, MixtureModel, validate_mixture
from .sampling import RngHandle, sample_mixture

SCHEMA_VERSION = 1
LEVEL_MODES = ("hdr", "grid")
# coarse fixed rule for ranking 1e5 draws by density
HDR_SETTINGS = CdfSettings(abs_tol=1e-4, max_points=1000, seed=0, adaptive=False)
# plot-grade accuracy for lattice densities when q >= 3
GRID_SETTINGS = CdfSettings(abs_tol=1e-4, max_points=10_000, seed=0)


# --------------------------------------------------------------------------
# CSV


def read_csv(path, has_header: bool = False, select_columns=None) -> DataMatrix:
    """Read a numeric comma-separated file into a DataMatrix.

    ``select_columns`` holds header names or 0-based indices.  Parse errors
    report the 1-based file line and column.
    """
    path = Path(path)
    if not path.is_file():
        raise DataFileNotFound(f"no such file: {path}")
    with path.open(newline="") as fh:
        rows = [(i, r) for i, r in enumerate(csv.reader(fh), start=1) if r and any(c.strip() for c in r)]
    header = None
    if has_header and rows:
        header = [c.strip() for c in rows[0][1]]
        rows = rows[1:]
    if not rows:
        raise EmptyFile(f"{path} has no data rows")
    width = len(rows[0][1])
    if select_columns is None:
        cols = list(range(width))
    else:
        cols = []
        for c in select_columns:
            if isinstance(c, str) and not c.lstrip("-").isdigit():
                if header is None or c not in header:
                    raise InputError(f"unknown column {c!r}")
                cols.append(header.index(c))
            else:
                cols.append(int(c))
        if any(c < 0 or c >= width for c in cols):
            raise InputError(f"column index out of range for {width} columns")
    out = np.empty((len(rows), len(cols)))
    for k, (line, row) in enumerate(rows):
        if len(row) != width:
            raise ParseError(f"line {line}: expected {width} fields, got {len(row)}", line, None)
        for m, c in enumerate(cols):
            try:
                out[k, m] = float(row[c])
            except ValueError:
                raise ParseError(f"line {line}, column {c + 1}: not a number: {row[c]!r}", line, c + 1) from None
    return DataMatrix(out)


def write_matrix(path, values, header=None):
    values = np.atleast_2d(np.asarray(values))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if header:
            w.writerow(header)
        for row in values:
            w.writerow([_fmt(v) for v in row])


def write_labels(path, clusters):
    write_matrix(path, np.asarray(clusters, dtype=int)[:, None], header=["cluster"])


def write_tau(path, tau):
    tau = np.asarray(tau)
    write_matrix(path, tau, header=[f"tau{h + 1}" for h in range(tau.shape[1])])


def _fmt(v):
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


# --------------------------------------------------------------------------
# model documents


def model_to_dict(model: MixtureModel, fit=None, seed=None) -> dict:
    doc = {
        "schema_version": SCHEMA_VERSION,
        "g": model.g,
        "p": model.p,
        "q": model.q,
        "pro": [float(x) for x in model.pro],
        "components": [
            {
                "mu": c.mu.tolist(),
                "sigma": c.sigma.tolist(),
                "delta": c.delta.tolist(),
                "dof": float(c.dof),
            }
            for c in model.components
        ],
    }
    if fit is not None:
        doc["fit"] = {
            "loglik": _finite_or_none(fit.loglik),
            "aic": _finite_or_none(fit.aic),
            "bic": _finite_or_none(fit.bic),
            "iterations": int(fit.iterations),
            "converged": bool(fit.converged),
            "criterion": fit.criterion,
            "seed": int(fit.seed if seed is None else seed),
        }
    return doc


def _finite_or_none(x):
    x = float(x)
    return x if math.isfinite(x) else None


def _field(obj, name, where):
    if not isinstance(obj, dict) or name not in obj:
        raise ParseError(f"missing field {name!r} in {where}")
    return obj[name]


def model_from_dict(doc) -> MixtureModel:
    version = _field(doc, "schema_version", "model document")
    if version != SCHEMA_VERSION:
        raise SchemaVersionMismatch(f"schema version {version} is not supported (expected {SCHEMA_VERSION})")
    comps = []
    for h, c in enumerate(_field(doc, "components", "model document")):
        where = f"component {h + 1}"
        try:
            comps.append(
                CfustParams(
                    np.asarray(_field(c, "mu", where), dtype=float),
                    np.asarray(_field(c, "sigma", where), dtype=float),
                    np.asarray(_field(c, "delta", where), dtype=float),
                    float(_field(c, "dof", where)),
                )
            )
        except (TypeError, ValueError) as exc:
            raise ParseError(f"{where}: {exc}") from None
    pro = np.asarray(_field(doc, "pro", "model document"), dtype=float)
    model = validate_mixture(MixtureModel(tuple(comps), pro))
    for key in ("g", "p", "q"):
        if key in doc and doc[key] != getattr(model, key):
            raise ParseError(f"field {key!r} = {doc[key]} disagrees with the parameters")
    return model


def write_model(path, model: MixtureModel, fit=None, seed=None):
    text = json.dumps(model_to_dict(model, fit, seed), indent=2)
    Path(path).write_text(text + "\n")


def read_model(path) -> MixtureModel:
    path = Path(path)
    if not path.is_file():
        raise DataFileNotFound(f"no such file: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON ({exc.msg})", exc.lineno, exc.colno) from None
    return model_from_dict(doc)


# --------------------------------------------------------------------------
# contour grids


@dataclass
class ContourGrid:
    axes: list  # one coordinate vector per dimension
    names: list  # "density" or "component<h>"
    values: np.ndarray  # (len(names), prod(grid))
    levels: dict = field(default_factory=dict)  # name -> thresholds

    @property
    def points(self) -> np.ndarray:
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.column_stack([m.ravel() for m in mesh])

    def write(self, path, levels_path=None):
        dims = len(self.axes)
        header = ["x", "y", "z"][:dims] + (["density"] if self.names == ["density"] else self.names)
        write_matrix(path, np.column_stack([self.points, self.values.T]), header)
        if levels_path is not None:
            with open(levels_path, "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["series", "index", "threshold"])
                for name in self.names:
                    for i, t in enumerate(self.levels.get(name, []), start=1):
                        w.writerow([name, i, _fmt(t)])


def marginal_model(model: MixtureModel, axes) -> MixtureModel:
    """Mixture of the CFUST marginals on the coordinates in ``axes``."""
    axes = list(axes)
    comps = tuple(
        CfustParams(c.mu[axes], c.sigma[np.ix_(axes, axes)], c.delta[axes, :], c.dof) for c in model.components
    )
    return MixtureModel(comps, model.pro)


def default_ranges(data, axes):
    vals = np.asarray(data.values if isinstance(data, DataMatrix) else data, dtype=float)[:, list(axes)]
    lo, hi = vals.min(axis=0), vals.max(axis=0)
    pad = 0.1 * np.where(hi > lo, hi - lo, 1.0)
    return [(float(a - b), float(c + b)) for a, c, b in zip(lo, hi, pad)]


def hdr_threshold(model: MixtureModel, mass: float, ndraws: int = 100_000, seed: int = 0, component=None):
    """Density level whose superlevel set holds probability ``mass``.

    Ranks ``ndraws`` seeded model draws by density and returns the
    (1 - mass) quantile of those densities.
    """
    if not 0.0 < mass < 1.0:
        raise InputError("mass must lie in (0, 1)")
    if component is None:
        draws = sample_mixture(ndraws, model, RngHandle(seed)).values
        dens = density_batch(draws, model, HDR_SETTINGS)
    else:
        single = MixtureModel((model.components[component],), np.array([1.0]))
        draws = sample_mixture(ndraws, single, RngHandle(seed)).values
        dens = density_batch(draws, single, HDR_SETTINGS)
    return float(np.quantile(dens, 1.0 - mass))


def contour_grid(
    model: MixtureModel,
    dims: int = 2,
    ranges=None,
    data=None,
    grid: int | None = None,
    components=None,
    nlevels: int = 10,
    levels=0.9,
    level_mode: str = "hdr",
    axes=None,
    settings: CdfSettings | None = None,
    ndraws: int = 100_000,
    seed: int = 0,
) -> ContourGrid:
    """Density values on a regular lattice plus contour thresholds.

    2-D grids get ``nlevels`` thresholds equally spaced strictly between 0
    and the grid maximum.  3-D grids get one threshold per entry of
    ``levels``: with ``level_mode="hdr"`` the density level enclosing that
    probability mass, with ``"grid"`` that quantile of the grid values.
    ``components`` (1-based) selects unweighted component densities.
    """
    if dims not in (2, 3):
        raise InputError("dims must be 2 or 3")
    if level_mode not in LEVEL_MODES:
        raise InputError(f"level_mode must be one of {LEVEL_MODES}")
    axes = list(range(dims)) if axes is None else list(axes)
    if len(axes) != dims:
        raise DimensionMismatch(f"need {dims} axes, got {len(axes)}")
    if model.p < dims or any(a < 0 or a >= model.p for a in axes):
        raise DimensionMismatch(f"model has p={model.p}, cannot draw axes {axes}")
    grid = (50 if dims == 2 else 20) if grid is None else int(grid)
    if grid < 2:
        raise RangeInvalid("grid must be at least 2")
    if ranges is None:
        if data is None:
            raise RangeInvalid("ranges are required when no data is given")
        ranges = default_ranges(data, axes)
    ranges = [tuple(map(float, r)) for r in ranges]
    if len(ranges) != dims or any(not (math.isfinite(a) and math.isfinite(b) and a < b) for a, b in ranges):
        raise RangeInvalid(f"need {dims} finite increasing ranges, got {ranges}")

    settings = settings or GRID_SETTINGS
    sub = model if axes == list(range(model.p)) else marginal_model(model, axes)
    coords = [np.linspace(a, b, grid) for a, b in ranges]
    out = ContourGrid(coords, [], np.empty((0, grid**dims)))
    pts = out.points
    if components is None:
        out.names = ["density"]
        out.values = density_batch(pts, sub, settings)[None, :]
        picks = [None]
    else:
        picks = [int(h) - 1 for h in components]
        if any(h < 0 or h >= model.g for h in picks):
            raise InputError(f"components must lie in 1..{model.g}")
        comp = np.exp(component_logpdfs(pts, sub, settings))
        out.names = [f"component{h + 1}" for h in picks]
        out.values = comp[:, picks].T

    lv = np.atleast_1d(np.asarray(levels, dtype=float))
    for name, pick, vals in zip(out.names, picks, out.values):
        if dims == 2:
            out.levels[name] = np.linspace(0.0, vals.max(), nlevels + 2)[1:-1]
        elif level_mode == "hdr":
            out.levels[name] = np.array([hdr_threshold(sub, m, ndraws, seed, pick) for m in lv])
        else:
            out.levels[name] = np.quantile(vals, lv)
    return out


# --------------------------------------------------------------------------
# bundled datasets


def _bundled(name):
    return resources.files("cfustmix").joinpath("data", name)


def load_iris(columns=None, species=None):
    """Iris measurements (150 x 4) and species names."""
    with resources.as_file(_bundled("iris.csv")) as path:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    names = np.array([r[4] for r in body])
    values = np.array([[float(x) for x in r[:4]] for r in body])
    if species is not None:
        keep = names == species
        values, names = values[keep], names[keep]
    if columns is not None:
        values = values[:, [header.index(c) for c in columns]]
    return values, names


def load_geyser():
    """Old Faithful waiting times and durations (299 x 2)."""
    with resources.as_file(_bundled("geyser.csv")) as path:
        return read_csv(path, has_header=True).values
