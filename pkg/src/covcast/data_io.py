"""Returns ingestion, sample splitting and artifact persistence.

The on-disk formats are deliberately plain: returns travel as comma-separated
text with a leading ``date`` column, fitted objects as JSON documents of the
form ``{"schema": ..., "version": ..., "payload": ...}``.  Floats are written
with full ``repr`` precision (17 significant digits) so persistence round-trips
are exact.
"""

import csv
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError


@dataclass
class ReturnsPanel:
    """A dated panel of asset returns.

    ``values`` has one row per date and one column per asset; entries are
    daily percentage log-returns.  Dates must be strictly increasing; the
    loader compares them as ISO-style strings.
    """

    dates: list
    assets: list
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2:
            raise DataError("returns panel values must be a 2-d array")
        t, p = self.values.shape
        if t < 1 or p < 1:
            raise DataError("returns panel must have at least one row and one column")
        if len(self.dates) != t:
            raise DataError("date index length does not match the number of rows")
        if len(self.assets) != p:
            raise DataError("asset list length does not match the number of columns")
        if not np.all(np.isfinite(self.values)):
            bad = np.argwhere(~np.isfinite(self.values))[0]
            raise DataError(
                f"non-finite return at date {self.dates[bad[0]]!r}, asset {self.assets[bad[1]]!r}"
            )
        for a, b in zip(self.dates, self.dates[1:]):
            if not str(b) > str(a):
                raise DataError(f"dates must be strictly increasing (saw {a!r} then {b!r})")

    @property
    def n_obs(self) -> int:
        return self.values.shape[0]

    @property
    def n_assets(self) -> int:
        return self.values.shape[1]


@dataclass
class SampleSplit:
    """In-sample / out-of-sample partition of a panel at a date boundary."""

    in_sample: ReturnsPanel
    out_sample: ReturnsPanel
    t_star: int


def load_returns_csv(path) -> ReturnsPanel:
    """Read a returns panel from ``path``.

    The file must be UTF-8 comma-separated text whose first header field is
    literally ``date``; remaining header fields name the assets.  Every data
    row needs one date plus one finite numeric value per asset.
    """
    if not os.path.exists(path):
        raise DataError(f"returns file not found: {path}")
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: file is empty") from None
        if not header or header[0].strip() != "date":
            raise DataError(f"{path}: first header column must be 'date'")
        assets = [h.strip() for h in header[1:]]
        if not assets:
            raise DataError(f"{path}: header names no assets")
        dates = []
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if len(row) == 1 and row[0].strip() == "":
                continue
            if len(row) != len(assets) + 1:
                raise DataError(
                    f"{path}: row {lineno} has {len(row)} fields, expected {len(assets) + 1}"
                )
            date = row[0].strip()
            vals = []
            for asset, cell in zip(assets, row[1:]):
                try:
                    x = float(cell)
                except ValueError:
                    raise DataError(
                        f"{path}: row {lineno}, asset {asset!r}: non-numeric value {cell!r}"
                    ) from None
                if not math.isfinite(x):
                    raise DataError(f"{path}: row {lineno}, asset {asset!r}: non-finite value")
                vals.append(x)
            dates.append(date)
            rows.append(vals)
    if not rows:
        raise DataError(f"{path}: no observations")
    if len(rows) < 2:
        raise DataError(f"{path}: need at least 2 observations, found {len(rows)}")
    return ReturnsPanel(dates=dates, assets=assets, values=np.array(rows, dtype=float))


def split_sample(panel: ReturnsPanel, ratio: float) -> SampleSplit:
    """Split a panel at ``t_star = floor(ratio * T)`` observations.

    The in-sample part keeps the first ``t_star`` rows and must contain at
    least two observations; the out-of-sample part must be non-empty.
    """
    if not 0.0 < ratio < 1.0:
        raise DataError(f"split ratio must lie in (0, 1), got {ratio}")
    t = panel.n_obs
    t_star = int(math.floor(ratio * t))
    if t_star < 2:
        raise DataError(f"in-sample window too short: floor({ratio} * {t}) = {t_star}")
    if t - t_star < 1:
        raise DataError("out-of-sample window is empty")
    head = ReturnsPanel(panel.dates[:t_star], list(panel.assets), panel.values[:t_star])
    tail = ReturnsPanel(panel.dates[t_star:], list(panel.assets), panel.values[t_star:])
    return SampleSplit(in_sample=head, out_sample=tail, t_star=t_star)


# ---------------------------------------------------------------------------
# Artifact persistence.
#
# Each persistable type registers itself under a schema name and version and
# provides ``to_payload`` / ``from_payload``.  Arrays are encoded with explicit
# shape metadata so a reader can validate before reconstructing.
# ---------------------------------------------------------------------------

_REGISTRY: dict = {}


def register_artifact(schema: str, version: int):
    """Class decorator wiring a dataclass into the artifact registry."""

    def deco(cls):
        cls.artifact_schema = schema
        cls.artifact_version = version
        _REGISTRY[schema] = (version, cls)
        return cls

    return deco


def registered_schemas() -> dict:
    return {name: ver for name, (ver, _) in _REGISTRY.items()}


def encode_array(a) -> dict:
    a = np.asarray(a, dtype=float)
    return {"shape": list(a.shape), "values": a.tolist()}


def decode_array(d) -> np.ndarray:
    a = np.asarray(d["values"], dtype=float)
    if list(a.shape) != list(d["shape"]):
        raise DataError(f"array shape metadata {d['shape']} does not match data {list(a.shape)}")
    return a


@register_artifact("cov_path", 1)
@dataclass
class CovPath:
    """A dated sequence of covariance matrices.

    Matrices are symmetrized on construction; positive semidefiniteness is the
    producer's contract.
    """

    dates: list
    assets: list
    matrices: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrices, dtype=float)
        if m.ndim != 3 or m.shape[1] != m.shape[2]:
            raise DataError("covariance path must be an (n, p, p) array")
        if len(self.dates) != m.shape[0]:
            raise DataError("covariance path date labels do not match its length")
        if len(self.assets) != m.shape[1]:
            raise DataError("covariance path asset labels do not match its dimension")
        self.matrices = 0.5 * (m + np.swapaxes(m, 1, 2))

    def __len__(self) -> int:
        return self.matrices.shape[0]

    def to_payload(self) -> dict:
        return {
            "dates": list(self.dates),
            "assets": list(self.assets),
            "matrices": encode_array(self.matrices),
        }

    @classmethod
    def from_payload(cls, payload: dict) -> "CovPath":
        return cls(
            dates=list(payload["dates"]),
            assets=list(payload["assets"]),
            matrices=decode_array(payload["matrices"]),
        )


def persist_artifact(obj, path) -> None:
    """Write a registered artifact as a JSON document."""
    schema = getattr(obj, "artifact_schema", None)
    if schema is None or schema not in _REGISTRY:
        raise DataError(f"object of type {type(obj).__name__} is not a registered artifact")
    doc = {
        "schema": schema,
        "version": obj.artifact_version,
        "payload": obj.to_payload(),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")


def load_artifact(path):
    """Read back an artifact written by :func:`persist_artifact`."""
    if not os.path.exists(path):
        raise DataError(f"artifact file not found: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}: not a valid artifact document ({exc})") from None
    for key in ("schema", "version", "payload"):
        if key not in doc:
            raise DataError(f"{path}: artifact document missing {key!r}")
    schema = doc["schema"]
    if schema not in _REGISTRY:
        raise DataError(f"{path}: unknown artifact schema {schema!r}")
    version, cls = _REGISTRY[schema]
    if doc["version"] != version:
        raise DataError(
            f"{path}: schema {schema!r} version mismatch (file {doc['version']}, supported {version})"
        )
    return cls.from_payload(doc["payload"])


# ---------------------------------------------------------------------------
# CSV writers shared by the simulation and reporting front ends.
# ---------------------------------------------------------------------------


def write_returns_csv(panel: ReturnsPanel, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["date"] + list(panel.assets))
        for date, row in zip(panel.dates, panel.values):
            writer.writerow([date] + [repr(float(x)) for x in row])


def write_vech_csv(path, dates, labels, matrices) -> None:
    """Write one vech(matrix) row per date; ``labels`` names the vech slots."""
    matrices = np.asarray(matrices, dtype=float)
    i, j = np.tril_indices(matrices.shape[1])
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["date"] + list(labels))
        for date, mat in zip(dates, matrices):
            writer.writerow([date] + [repr(float(x)) for x in mat[i, j]])


def write_curve_csv(path, pairs, header=("lambda", "score")) -> None:
    """Write an (x, y) curve as two-column CSV, e.g. a cross-validation path."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(header))
        for x, y in pairs:
            writer.writerow([repr(float(x)), repr(float(y))])


def write_table_csv(path, header, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(header))
        for row in rows:
            out = []
            for cell in row:
                if isinstance(cell, float):
                    out.append("" if math.isnan(cell) else f"{cell:.6g}")
                else:
                    out.append(cell)
            writer.writerow(out)
