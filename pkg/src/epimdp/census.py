"""Census ingestion, age-band remapping, and compositional analytics.

Official population tables arrive in sixteen age bands; the epidemic model
wants four groups (children / adolescents / adults / elderly).  The 18-19
band straddles the adolescent-adult boundary and is ceiling-split into both
halves, which intentionally over-counts one person when the band is odd —
the error is bounded by one person per district and keeps the mapping
integer-valued.

District age structures are compared as compositions: points on the unit
simplex equipped with the Aitchison (log-ratio) geometry.  The selection
routine picks districts that are as mutually dissimilar as possible — hull
vertices of the projected composition cloud maximising the minimum pairwise
distance — plus the single district closest to the compositional mean.
"""

from __future__ import annotations

import csv
import itertools
import logging
from dataclasses import dataclass

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from epimdp.core import Census
from epimdp.errors import DataError, NumericalError

logger = logging.getLogger(__name__)

NOMIS_BANDS = (
    "0-4", "5-7", "8-9", "10-14", "15", "16-17", "18-19",
    "20-24", "25-29", "30-44", "45-59", "60-64",
    "65-74", "75-84", "85-89", "90+",
)
_ADOLESCENT_SLICE = slice(1, 6)   # 5-7 through 16-17
_STRADDLE_BAND = 6                # 18-19
_ADULT_SLICE = slice(7, 12)       # 20-24 through 60-64
_ELDERLY_SLICE = slice(12, 16)    # 65-74 through 90+

HULL_EXHAUSTIVE_LIMIT = 25
SELECTION_SIZE = 9


@dataclass(frozen=True)
class NomisCensusRow:
    """One district's population in the sixteen source age bands."""

    district_id: str
    bands: np.ndarray

    def __post_init__(self):
        bands = np.asarray(self.bands, dtype=np.float64)
        if bands.shape != (len(NOMIS_BANDS),):
            raise DataError(
                f"district {self.district_id!r}: expected {len(NOMIS_BANDS)} "
                f"age bands, got {bands.shape}"
            )
        if np.any(bands < 0):
            raise DataError(f"district {self.district_id!r}: negative band count")
        object.__setattr__(self, "bands", bands)

    @property
    def total(self) -> float:
        return float(self.bands.sum())


def map_nomis_to_eames(row: NomisCensusRow) -> Census:
    """Collapse the sixteen bands into the model's four age groups.

    The 18-19 band is split as ceil(n/2) into adolescents *and* adults, so
    an odd band inflates the district total by one person.
    """
    half = float(np.ceil(row.bands[_STRADDLE_BAND] / 2.0))
    counts = np.array(
        [
            row.bands[0],
            row.bands[_ADOLESCENT_SLICE].sum() + half,
            half + row.bands[_ADULT_SLICE].sum(),
            row.bands[_ELDERLY_SLICE].sum(),
        ]
    )
    return Census(district_id=row.district_id, counts=counts)


def load_census_csv(path) -> list[Census]:
    """Read a banded census table and return remapped four-group censuses."""
    try:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            try:
                header = next(reader)
            except StopIteration:
                raise DataError(f"{path}: empty census file") from None
            expected = ["district_id", *NOMIS_BANDS]
            if header != expected:
                raise DataError(
                    f"{path}: unexpected header {header[:4]}..., "
                    f"expected columns {expected[:4]}..."
                )
            rows = []
            for line in reader:
                if not line:
                    continue
                if len(line) != len(expected):
                    raise DataError(
                        f"{path}: district {line[0]!r} has {len(line) - 1} "
                        f"fields, expected {len(NOMIS_BANDS)}"
                    )
                try:
                    bands = np.array([float(v) for v in line[1:]])
                except ValueError as exc:
                    raise DataError(f"{path}: non-numeric count ({exc})") from exc
                rows.append(NomisCensusRow(line[0], bands))
    except OSError as exc:
        raise DataError(f"cannot read census file {path}: {exc}") from exc
    if not rows:
        raise DataError(f"{path}: no district rows")
    ids = [r.district_id for r in rows]
    if len(set(ids)) != len(ids):
        raise DataError(f"{path}: duplicate district ids")
    return [map_nomis_to_eames(r) for r in rows]


# -- compositional (simplex) analytics ---------------------------------


def closure(x) -> np.ndarray:
    """Rescale a positive vector onto the unit simplex."""
    x = np.asarray(x, dtype=np.float64)
    return x / x.sum()


def to_simplex(census: Census) -> np.ndarray:
    """A district's age composition as a strictly positive simplex point."""
    if np.any(census.counts <= 0):
        raise DataError(
            f"district {census.district_id!r} has an empty age group; "
            "compositions need strictly positive counts"
        )
    return closure(census.counts)


def _clr(p: np.ndarray) -> np.ndarray:
    logs = np.log(p)
    return logs - logs.mean(axis=-1, keepdims=True)


def aitchison_distance(p, q) -> float:
    """Log-ratio metric: ||clr(p) - clr(q)||_2."""
    diff = _clr(np.asarray(p, float)) - _clr(np.asarray(q, float))
    return float(np.sqrt((diff * diff).sum()))


def aitchison_mean(points) -> np.ndarray:
    """Componentwise geometric mean, closed back onto the simplex."""
    points = np.asarray(points, dtype=np.float64)
    if points.size == 0:
        raise ValueError("cannot average an empty set of compositions")
    return closure(np.exp(np.log(points).mean(axis=0)))


def perturb(p, r) -> np.ndarray:
    """Aitchison perturbation: componentwise product followed by closure."""
    return closure(np.asarray(p, float) * np.asarray(r, float))


def hull_vertices(points: np.ndarray, drop: int = 3) -> np.ndarray:
    """Sorted indices of the convex-hull vertices of the composition cloud.

    Compositions live on the affine hyperplane sum(x) = 1, so dropping any
    one coordinate is an affine bijection and the vertex set does not
    depend on which coordinate is dropped.
    """
    points = np.asarray(points, dtype=np.float64)
    proj = np.delete(points, drop, axis=1)
    try:
        hull = ConvexHull(proj)
    except QhullError as exc:
        raise NumericalError(f"degenerate composition cloud: {exc}") from exc
    return np.sort(hull.vertices)


def _pairwise_distances(points: np.ndarray) -> np.ndarray:
    clr = _clr(points)
    diff = clr[:, None, :] - clr[None, :, :]
    return np.sqrt((diff * diff).sum(axis=-1))


def _best_subset_exhaustive(dist: np.ndarray, k: int, chunk: int = 100_000):
    """The k-subset with the largest minimum pairwise distance (first wins ties)."""
    v = dist.shape[0]
    spread = dist.copy()
    np.fill_diagonal(spread, np.inf)
    best_score = -np.inf
    best = None
    combos = itertools.combinations(range(v), k)
    while True:
        block = np.array(list(itertools.islice(combos, chunk)), dtype=np.intp)
        if block.size == 0:
            break
        scores = spread[block[:, :, None], block[:, None, :]].min(axis=(1, 2))
        i = int(np.argmax(scores))
        if scores[i] > best_score:
            best_score = float(scores[i])
            best = block[i].copy()
    return best, best_score


def _best_subset_greedy(dist: np.ndarray, k: int):
    """Farthest-point heuristic used when the hull is too big to enumerate."""
    spread = dist.copy()
    np.fill_diagonal(spread, -np.inf)
    start = np.unravel_index(np.argmax(spread), spread.shape)
    chosen = [int(start[0]), int(start[1])]
    while len(chosen) < k:
        closest = dist[:, chosen].min(axis=1)
        closest[chosen] = -np.inf
        chosen.append(int(np.argmax(closest)))
    chosen = np.sort(np.array(chosen, dtype=np.intp))
    sub = dist[np.ix_(chosen, chosen)].copy()
    np.fill_diagonal(sub, np.inf)
    return chosen, float(sub.min())


def select_representative_districts(censuses) -> list[str]:
    """Pick up to ten districts spanning the observed age compositions.

    Returns the district closest to the compositional mean, followed by the
    hull-vertex subset (size 9 where possible) maximising the minimum
    pairwise Aitchison distance.  Districts with an empty age group cannot
    be placed on the simplex and are skipped with a warning.
    """
    usable, points = [], []
    for c in censuses:
        if np.any(c.counts <= 0):
            logger.warning(
                "district %s has an empty age group; excluded from "
                "compositional analytics", c.district_id,
            )
            continue
        usable.append(c)
        points.append(closure(c.counts))
    if len(usable) < 10:
        raise DataError(
            f"representative selection needs at least 10 usable districts, "
            f"have {len(usable)}"
        )
    points = np.asarray(points)
    ids = [c.district_id for c in usable]

    mean = aitchison_mean(points)
    to_mean = np.array([aitchison_distance(p, mean) for p in points])

    vertices = hull_vertices(points)
    if len(vertices) < SELECTION_SIZE:
        logger.warning(
            "composition hull has only %d vertices; returning all of them",
            len(vertices),
        )
        picked = vertices
    else:
        dist = _pairwise_distances(points[vertices])
        if len(vertices) <= HULL_EXHAUSTIVE_LIMIT:
            local, _ = _best_subset_exhaustive(dist, SELECTION_SIZE)
        else:
            logger.warning(
                "composition hull has %d vertices (> %d); falling back to "
                "greedy farthest-point selection",
                len(vertices), HULL_EXHAUSTIVE_LIMIT,
            )
            local, _ = _best_subset_greedy(dist, SELECTION_SIZE)
        picked = vertices[local]

    picked_ids = {ids[i] for i in picked}
    for i in np.argsort(to_mean, kind="stable"):
        if ids[i] not in picked_ids:
            center = ids[i]
            break
    else:  # pragma: no cover - needs every district on the hull
        center = ids[int(np.argmin(to_mean))]
    return [center] + sorted(ids[i] for i in picked)
