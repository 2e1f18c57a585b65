"""Point clouds, exact nearest-neighbour search, normals and file I/O."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .errors import (
    DegenerateNeighborhood,
    EmptyCloud,
    NonFiniteValue,
    ParseError,
    TargetTooLarge,
)

log = logging.getLogger(__name__)

UNIT_TOLERANCE = 1e-6


def _readonly(a):
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class PointCloud:
    """Points with optional per-point normals and weights.

    A weight of 0 marks a rejected point (outlier, or a normal that could not
    be estimated); such points carry a zero normal.
    """

    points: np.ndarray
    normals: np.ndarray | None = None
    weights: np.ndarray | None = field(default=None)

    def __post_init__(self):
        pts = np.array(self.points, dtype=float).reshape(-1, 3)
        n = len(pts)
        weights = np.ones(n) if self.weights is None else np.array(self.weights, dtype=float).reshape(-1)
        if weights.shape != (n,):
            raise ValueError(f"{len(weights)} weights for {n} points")
        if np.any(weights < 0):
            raise ValueError("weights must be non-negative")
        normals = None
        if self.normals is not None:
            normals = np.array(self.normals, dtype=float).reshape(-1, 3)
            if normals.shape != (n, 3):
                raise ValueError(f"{len(normals)} normals for {n} points")
            active = weights > 0
            norms = np.linalg.norm(normals[active], axis=1)
            if np.any(np.abs(norms - 1.0) > UNIT_TOLERANCE):
                raise ValueError("normals of weighted points must be unit length")
            normals = _readonly(normals)
        object.__setattr__(self, "points", _readonly(pts))
        object.__setattr__(self, "normals", normals)
        object.__setattr__(self, "weights", _readonly(weights))

    def __len__(self):
        return len(self.points)

    @property
    def has_normals(self):
        return self.normals is not None

    def subset(self, index):
        index = np.asarray(index)
        return PointCloud(
            self.points[index],
            None if self.normals is None else self.normals[index],
            self.weights[index],
        )

    def transformed(self, T):
        return PointCloud(
            T.apply(self.points),
            None if self.normals is None else T.rotate(self.normals),
            self.weights,
        )


class NeighborIndex:
    """Exact nearest-neighbour queries over a cloud (k-d tree)."""

    def __init__(self, cloud: PointCloud, subset=None):
        if len(cloud) == 0:
            raise EmptyCloud("cannot index an empty cloud")
        self.cloud = cloud
        self.ids = np.arange(len(cloud)) if subset is None else np.asarray(subset)
        if len(self.ids) == 0:
            raise EmptyCloud("index subset is empty")
        self._tree = cKDTree(cloud.points[self.ids])

    def __len__(self):
        return len(self.ids)

    def nearest(self, p, workers=1):
        """Indices (into the cloud) and distances of the nearest point(s)."""
        dist, idx = self._tree.query(np.asarray(p, dtype=float), k=1, workers=workers)
        return self.ids[idx], dist

    def k_nearest(self, p, k, workers=1):
        dist, idx = self._tree.query(np.asarray(p, dtype=float), k=k, workers=workers)
        return self.ids[idx], dist


def build_index(cloud: PointCloud) -> NeighborIndex:
    return NeighborIndex(cloud)


def estimate_normals(cloud: PointCloud, k: int, viewpoint, min_cos_view=1e-3, workers=1) -> PointCloud:
    """PCA normals from the k nearest neighbours, oriented towards ``viewpoint``.

    Neighbourhoods of rank < 2 (collinear or coincident) get weight 0, as do
    points seen at grazing incidence where the sign cannot be trusted.  Raises
    DegenerateNeighborhood only when no point receives a valid normal.
    Normals are unreliable at creases; that is expected.
    """
    if k < 3:
        raise ValueError("k must be at least 3")
    n = len(cloud)
    if n < k + 1:
        raise ValueError(f"need at least k+1={k + 1} points, have {n}")
    tree = cKDTree(cloud.points)
    _, nbr = tree.query(cloud.points, k=k + 1, workers=workers)
    patches = cloud.points[nbr]
    centered = patches - patches.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", centered, centered) / (k + 1)
    evals, evecs = np.linalg.eigh(cov)
    normals = evecs[:, :, 0]
    scale = np.maximum(evals[:, 2], np.finfo(float).tiny)
    degenerate = (evals[:, 2] <= 0.0) | (evals[:, 1] <= 1e-12 * scale)

    to_view = np.asarray(viewpoint, dtype=float) - cloud.points
    dist = np.linalg.norm(to_view, axis=1)
    facing = np.einsum("ij,ij->i", normals, to_view)
    normals = np.where((facing < 0)[:, None], -normals, normals)
    grazing = np.abs(facing) <= min_cos_view * np.maximum(dist, np.finfo(float).tiny)

    invalid = degenerate | grazing
    if np.all(degenerate):
        raise DegenerateNeighborhood("every neighbourhood is rank < 2 (collinear points)")
    if np.any(invalid):
        log.info("estimate_normals: %d of %d points rejected", int(invalid.sum()), n)
    normals = np.where(invalid[:, None], 0.0, normals)
    weights = np.where(invalid, 0.0, cloud.weights)
    return PointCloud(cloud.points, normals, weights)


def random_downsample(cloud: PointCloud, n: int, seed=None) -> PointCloud:
    """Uniform subset without replacement, original order kept."""
    if n > len(cloud):
        raise TargetTooLarge(f"cannot draw {n} points from a cloud of {len(cloud)}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    index = np.sort(rng.choice(len(cloud), size=n, replace=False))
    return cloud.subset(index)


# -- file formats -----------------------------------------------------------

def _fmt(values):
    return " ".join(f"{v:.17g}" for v in values)


def write_cloud(cloud: PointCloud, path):
    """ASCII PLY (``.ply``) or CSV (anything else) with optional normals."""
    if not np.all(np.isfinite(cloud.points)) or (
        cloud.normals is not None and not np.all(np.isfinite(cloud.normals))
    ):
        raise NonFiniteValue("cloud contains non-finite values")
    path = Path(path)
    with_weights = bool(np.any(cloud.weights != 1.0))
    cols = [cloud.points]
    if cloud.normals is not None:
        cols.append(cloud.normals)
    if with_weights:
        cols.append(cloud.weights[:, None])
    data = np.hstack(cols) if cols else np.zeros((0, 3))
    if path.suffix.lower() == ".ply":
        header = [
            "ply",
            "format ascii 1.0",
            f"element vertex {len(cloud)}",
            "property double x",
            "property double y",
            "property double z",
        ]
        if cloud.normals is not None:
            header += ["property double nx", "property double ny", "property double nz"]
        if with_weights:
            header.append("property double weight")
        header.append("end_header")
        body = [_fmt(row) for row in data]
        path.write_text("\n".join(header + body) + "\n")
    else:
        names = ["x", "y", "z"]
        if cloud.normals is not None:
            names += ["nx", "ny", "nz"]
        if with_weights:
            names.append("weight")
        body = [",".join(f"{v:.17g}" for v in row) for row in data]
        path.write_text("\n".join([",".join(names)] + body) + "\n")


def _cloud_from_columns(names, rows, path):
    data = np.array(rows, dtype=float).reshape(-1, len(names))
    if not np.all(np.isfinite(data)):
        raise NonFiniteValue(f"{path}: non-finite value in cloud")
    col = {name: i for i, name in enumerate(names)}
    for required in ("x", "y", "z"):
        if required not in col:
            raise ParseError(f"missing property '{required}'", None, path)
    points = data[:, [col["x"], col["y"], col["z"]]]
    normals = None
    if all(k in col for k in ("nx", "ny", "nz")):
        normals = data[:, [col["nx"], col["ny"], col["nz"]]]
    weights = data[:, col["weight"]] if "weight" in col else None
    return PointCloud(points, normals, weights)


def _read_ply(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    try:
        text = raw.decode("ascii")
    except UnicodeDecodeError:
        text = None
    lines = (text or raw.decode("latin-1")).splitlines()
    if not lines or lines[0].strip() != "ply":
        raise ParseError("missing 'ply' magic", 1, path)
    names = []
    count = None
    end = None
    in_vertex = False
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split()
        if not parts:
            continue
        key = parts[0]
        if key == "format":
            if len(parts) < 2 or parts[1] != "ascii":
                raise ParseError(f"only ASCII PLY is supported (got '{line.strip()}')", lineno, path)
        elif key in ("comment", "obj_info"):
            continue
        elif key == "element":
            if len(parts) != 3:
                raise ParseError("malformed element line", lineno, path)
            in_vertex = parts[1] == "vertex"
            if in_vertex:
                try:
                    count = int(parts[2])
                except ValueError:
                    raise ParseError("vertex count is not an integer", lineno, path) from None
            elif int(parts[2]) != 0:
                raise ParseError(f"unsupported element '{parts[1]}'", lineno, path)
        elif key == "property":
            if len(parts) != 3:
                raise ParseError("malformed property line", lineno, path)
            if in_vertex:
                names.append(parts[2])
        elif key == "end_header":
            end = lineno
            break
        else:
            raise ParseError(f"unexpected header line '{line.strip()}'", lineno, path)
    if end is None:
        raise ParseError("missing end_header", len(lines), path)
    if count is None:
        raise ParseError("missing 'element vertex'", end, path)
    if text is None:
        raise ParseError("non-ASCII bytes in body", end + 1, path)
    rows = []
    for lineno, line in enumerate(lines[end:end + count], start=end + 1):
        parts = line.split()
        if len(parts) != len(names):
            raise ParseError(f"expected {len(names)} values, got {len(parts)}", lineno, path)
        try:
            rows.append([float(v) for v in parts])
        except ValueError as exc:
            raise ParseError(str(exc), lineno, path) from None
    if len(rows) != count:
        raise ParseError(f"expected {count} vertices, found {len(rows)}", len(lines), path)
    return _cloud_from_columns(names, rows, path)


def _read_csv(path):
    lines = Path(path).read_text().splitlines()
    if not lines:
        raise ParseError("empty file", 1, path)
    names = [h.strip() for h in lines[0].split(",")]
    if names[:3] != ["x", "y", "z"]:
        raise ParseError("header must start with x,y,z", 1, path)
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != len(names):
            raise ParseError(f"expected {len(names)} values, got {len(parts)}", lineno, path)
        try:
            rows.append([float(v) for v in parts])
        except ValueError as exc:
            raise ParseError(str(exc), lineno, path) from None
    return _cloud_from_columns(names, rows, path)


def read_cloud(path) -> PointCloud:
    if Path(path).suffix.lower() == ".ply":
        return _read_ply(path)
    return _read_csv(path)
