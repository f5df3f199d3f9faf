"""Balanced entity-by-year panels: CSV ingestion, interpolation, derived columns."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

MISSING_TOKENS = ("", "NA")


class PanelError(ValueError):
    """Raised for malformed or unbalanced panel input."""


@dataclass(frozen=True)
class PanelDataset:
    """Balanced panel of real-valued variables.

    Each variable is an ``(n_entities, n_years)`` float array. Missing cells
    hold NaN and are flagged in ``masks``. Instances are treated as immutable;
    every operation returns a new dataset.

    Parameters
    ----------
    entities : tuple of str
        Entity identifiers in row order.
    years : tuple of int
        Consecutive years in column order.
    variables : mapping
        Variable name -> 2-D array.
    masks : mapping, optional
        Variable name -> boolean array of missing cells. Derived from NaNs when
        omitted.
    """

    entities: tuple
    years: tuple
    variables: Mapping[str, np.ndarray]
    masks: Mapping[str, np.ndarray] = field(default=None)

    def __post_init__(self):
        entities = tuple(str(e) for e in self.entities)
        years = tuple(int(y) for y in self.years)
        if len(set(entities)) != len(entities):
            raise PanelError("duplicate entity identifiers")
        if years and list(years) != list(range(years[0], years[0] + len(years))):
            raise PanelError(f"years must be consecutive integers, got {years}")
        shape = (len(entities), len(years))
        variables = {}
        for name, values in self.variables.items():
            arr = np.array(values, dtype=np.float64)
            if arr.shape != shape:
                raise PanelError(f"variable {name!r} has shape {arr.shape}, expected {shape}")
            arr.setflags(write=False)
            variables[name] = arr
        masks = {}
        given = self.masks or {}
        for name, arr in variables.items():
            m = np.array(given[name], dtype=bool) if name in given else np.isnan(arr)
            m = m | np.isnan(arr)
            m.setflags(write=False)
            masks[name] = m
        object.__setattr__(self, "entities", entities)
        object.__setattr__(self, "years", years)
        object.__setattr__(self, "variables", variables)
        object.__setattr__(self, "masks", masks)

    @property
    def shape(self):
        return len(self.entities), len(self.years)

    @property
    def n_obs(self):
        return len(self.entities) * len(self.years)

    def __contains__(self, name):
        return name in self.variables

    def __getitem__(self, name) -> np.ndarray:
        try:
            return self.variables[name]
        except KeyError:
            raise KeyError(f"unknown variable {name!r}") from None

    def n_missing(self, name=None):
        names = [name] if name is not None else list(self.masks)
        return int(sum(self.masks[n].sum() for n in names))

    def with_variable(self, name, values, mask=None) -> PanelDataset:
        variables = dict(self.variables)
        masks = dict(self.masks)
        variables[name] = values
        if mask is None:
            masks.pop(name, None)
        else:
            masks[name] = mask
        return PanelDataset(self.entities, self.years, variables, masks)

    def with_variables(self, new: Mapping[str, np.ndarray]) -> PanelDataset:
        variables = dict(self.variables)
        masks = {k: v for k, v in self.masks.items() if k not in new}
        variables.update(new)
        return PanelDataset(self.entities, self.years, variables, masks)

    def select_entities(self, entities: Sequence[str]) -> PanelDataset:
        pos = {e: i for i, e in enumerate(self.entities)}
        try:
            rows = [pos[e] for e in entities]
        except KeyError as exc:
            raise PanelError(f"unknown entity {exc.args[0]!r}") from None
        return PanelDataset(
            tuple(entities), self.years,
            {k: v[rows] for k, v in self.variables.items()},
            {k: v[rows] for k, v in self.masks.items()},
        )

    def select_years(self, years: Sequence[int]) -> PanelDataset:
        pos = {y: i for i, y in enumerate(self.years)}
        cols = [pos[int(y)] for y in years]
        return PanelDataset(
            self.entities, tuple(years),
            {k: v[:, cols] for k, v in self.variables.items()},
            {k: v[:, cols] for k, v in self.masks.items()},
        )

    def require(self, names: Iterable[str], complete=True):
        for name in names:
            if name not in self.variables:
                raise PanelError(f"unknown variable {name!r}")
            if complete and self.masks[name].any():
                i, t = np.argwhere(self.masks[name])[0]
                raise PanelError(
                    f"variable {name!r} has {int(self.masks[name].sum())} missing cells, "
                    f"first at ({self.entities[i]!r}, {self.years[t]}); run fill_missing first")

    def long_index(self):
        """Entity and year codes for the row-major (entity, year) flattening."""
        ne, nt = self.shape
        return np.repeat(np.arange(ne), nt), np.tile(np.arange(nt), ne)


# --------------------------------------------------------------------------
# CSV
# --------------------------------------------------------------------------

def _parse_cell(raw, path, lineno, column):
    text = raw.strip()
    if text in MISSING_TOKENS:
        return math.nan
    try:
        value = float(text)
    except ValueError:
        raise PanelError(f"{path}:{lineno}: non-numeric value {raw!r} in column {column!r}") from None
    if not math.isfinite(value):
        raise PanelError(f"{path}:{lineno}: non-finite value {raw!r} in column {column!r}")
    return value


def load_csv(path, entity_col="entity", year_col="year", columns=None) -> PanelDataset:
    """Read a long-format panel CSV (one row per entity-year).

    Empty cells and the literal ``NA`` become masked-missing; any other
    non-numeric text is an error. Duplicate (entity, year) rows and entities
    missing a year are rejected.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise PanelError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        for col in (entity_col, year_col):
            if col not in header:
                raise PanelError(f"{path}: missing column {col!r}")
        ei, yi = header.index(entity_col), header.index(year_col)
        value_cols = [(j, h) for j, h in enumerate(header) if j not in (ei, yi)]
        if columns is not None:
            missing = set(columns) - {h for _, h in value_cols}
            if missing:
                raise PanelError(f"{path}: missing columns {sorted(missing)}")
            value_cols = [(j, h) for j, h in value_cols if h in set(columns)]

        cells = {}
        seen = {}
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise PanelError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            entity = row[ei].strip()
            try:
                year = int(row[yi].strip())
            except ValueError:
                raise PanelError(f"{path}:{lineno}: year {row[yi]!r} is not an integer") from None
            key = (entity, year)
            if key in seen:
                raise PanelError(
                    f"{path}: duplicate row for ({entity!r}, {year}) at lines {seen[key]} and {lineno}")
            seen[key] = lineno
            cells[key] = [_parse_cell(row[j], path, lineno, h) for j, h in value_cols]

    if not cells:
        raise PanelError(f"{path}: no data rows")
    entities = sorted({e for e, _ in cells})
    all_years = {y for _, y in cells}
    years = list(range(min(all_years), max(all_years) + 1))
    for e in entities:
        for y in years:
            if (e, y) not in cells:
                raise PanelError(f"{path}: unbalanced panel, entity {e!r} has no row for year {y}")

    data = np.empty((len(value_cols), len(entities), len(years)))
    for i, e in enumerate(entities):
        for t, y in enumerate(years):
            data[:, i, t] = cells[(e, y)]
    return PanelDataset(tuple(entities), tuple(years),
                        {h: data[k] for k, (_, h) in enumerate(value_cols)})


def _fmt(value):
    if math.isnan(value):
        return ""
    return format(value, ".10g")


def write_csv(data: PanelDataset, path, entity_col="entity", year_col="year", columns=None):
    names = list(columns) if columns is not None else list(data.variables)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([entity_col, year_col] + names)
        for i, e in enumerate(data.entities):
            for t, y in enumerate(data.years):
                w.writerow([e, y] + [_fmt(data.variables[n][i, t]) for n in names])


# --------------------------------------------------------------------------
# Interpolation
# --------------------------------------------------------------------------

@dataclass
class FillReport:
    """Counts of filled cells, split into interior and boundary fills."""

    interior: dict = field(default_factory=dict)
    boundary: dict = field(default_factory=dict)

    def add(self, variable, entity, interior, boundary):
        if interior:
            self.interior.setdefault(variable, {})[entity] = int(interior)
        if boundary:
            self.boundary.setdefault(variable, {})[entity] = int(boundary)

    def to_json(self):
        return json.dumps({"interior": self.interior, "boundary_flat_fill": self.boundary},
                          indent=2, sort_keys=True)


def fill_missing(data: PanelDataset, variable: str, report: FillReport | None = None) -> PanelDataset:
    """Linear interpolation along years within each entity.

    Interior gaps are interpolated; leading and trailing gaps take the nearest
    observed value. Observed cells are never modified.
    """
    values = np.array(data[variable])
    mask = data.masks[variable]
    x = np.arange(len(data.years), dtype=np.float64)
    for i, entity in enumerate(data.entities):
        miss = mask[i]
        if not miss.any():
            continue
        obs = ~miss
        if obs.sum() < 2:
            raise PanelError(
                f"cannot interpolate {variable!r} for entity {entity!r}: "
                f"fewer than two observed cells")
        values[i, miss] = np.interp(x[miss], x[obs], values[i, obs])
        first, last = np.flatnonzero(obs)[[0, -1]]
        boundary = int(miss[:first].sum() + miss[last + 1:].sum())
        if report is not None:
            report.add(variable, entity, int(miss.sum()) - boundary, boundary)
    return data.with_variable(variable, values)


# --------------------------------------------------------------------------
# Derived variables
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class VariableSpec:
    """Recipe for a derived column.

    ``transform`` is ``"none"`` (copy), ``"log"`` (natural log, strictly
    positive source) or ``"share"`` (source divided by ``denominator``).
    """

    name: str
    source: str
    transform: str = "none"
    denominator: str | None = None
    role: str = "auxiliary"

    def __post_init__(self):
        if self.transform not in ("none", "log", "share"):
            raise PanelError(f"unknown transform {self.transform!r}")
        if self.transform == "share" and not self.denominator:
            raise PanelError(f"share transform for {self.name!r} needs a denominator")
        if self.role not in ("outcome", "control", "indicator", "mediator", "auxiliary"):
            raise PanelError(f"unknown role {self.role!r}")


def _first_bad(data, bad):
    i, t = np.argwhere(bad)[0]
    return data.entities[i], data.years[t]


def derive_variable(data: PanelDataset, spec: VariableSpec) -> PanelDataset:
    data.require([spec.source], complete=False)
    src = data[spec.source]
    if spec.transform == "none":
        out = src.copy()
    elif spec.transform == "log":
        bad = ~np.isnan(src) & (src <= 0)
        if bad.any():
            e, y = _first_bad(data, bad)
            raise PanelError(f"log of non-positive {spec.source!r} at ({e!r}, {y})")
        out = np.log(src)
    else:
        data.require([spec.denominator], complete=False)
        den = data[spec.denominator]
        bad = ~np.isnan(den) & (den == 0)
        if bad.any():
            e, y = _first_bad(data, bad)
            raise PanelError(f"division by zero in {spec.denominator!r} at ({e!r}, {y})")
        out = src / den
    return data.with_variable(spec.name, out)


def ratio(data: PanelDataset, numerator: np.ndarray, denominator: np.ndarray, label: str) -> np.ndarray:
    """Cellwise ratio that reports the coordinates of any zero denominator."""
    bad = denominator == 0
    if bad.any():
        e, y = _first_bad(data, bad)
        raise PanelError(f"division by zero computing {label} at ({e!r}, {y})")
    return numerator / denominator


def stack_entities(*datasets: PanelDataset, suffixes: Sequence[str] | None = None) -> PanelDataset:
    """Concatenate panels over the same years, relabelling entities if needed."""
    years = datasets[0].years
    names = list(datasets[0].variables)
    entities = []
    for k, d in enumerate(datasets):
        if d.years != years or list(d.variables) != names:
            raise PanelError("datasets must share years and variables")
        sfx = suffixes[k] if suffixes else ""
        entities.extend(e + sfx for e in d.entities)
    return PanelDataset(
        tuple(entities), years,
        {n: np.vstack([d[n] for d in datasets]) for n in names},
        {n: np.vstack([d.masks[n] for d in datasets]) for n in names},
    )
