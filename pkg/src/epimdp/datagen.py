"""Synthetic census, mobility and contact-matrix generator.

Real census and commuter data are not bundled, so experiments run on
synthetic districts drawn here.  The generator produces:

- age compositions from a Dirichlet centred on a plausible age structure,
  with district populations log-normal around a configurable median;
- census files in the banded format of UK-style census tables (the four
  model age groups are split back into bands using flat within-group age
  densities, so the band-to-group mapping round-trips approximately);
- commuter fluxes from a gravity kernel (flux proportional to
  N_a * N_b / distance^2 over random planar coordinates), sparsified to a
  target density, with a guard that keeps at least one inbound edge per
  district so every district remains reachable;
- one fixed term/holiday contact-matrix pair, documented below.

The default contact matrices are synthetic but shaped like survey-based
ones: school-age mixing dominates during term (adolescent-adolescent 16
contacts/day), and closing schools removes most of it (down to 2.5) while
slightly raising adolescent-adult home contact.  The resulting dominant
eigenvalue drops to ~0.57 of the term value, so closures push the
effective reproduction number below one for moderate epidemics.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from epimdp.census import NOMIS_BANDS
from epimdp.core import Census, ContactMatrix

DEFAULT_AGE_FRACTIONS = np.array([0.10, 0.14, 0.48, 0.28])

DEFAULT_TERM_MATRIX = np.array(
    [
        [4.0, 1.5, 2.5, 0.5],
        [1.5, 16.0, 3.5, 0.5],
        [2.5, 3.5, 6.0, 1.5],
        [0.5, 0.5, 1.5, 3.0],
    ]
)

DEFAULT_HOLIDAY_MATRIX = np.array(
    [
        [2.0, 1.0, 2.7, 0.5],
        [1.0, 2.5, 4.0, 0.6],
        [2.7, 4.0, 6.0, 1.5],
        [0.5, 0.6, 1.5, 3.0],
    ]
)

# Flat within-group year weights used to split the four groups into bands.
_ADOLESCENT_YEARS = 14.0  # ages 5..18
_ADULT_YEARS = 46.0       # ages 19..64
_ELDERLY_WEIGHTS = np.array([0.45, 0.35, 0.13, 0.07])  # 65-74, 75-84, 85-89, 90+

_MIN_DISTANCE_KM = 2.0


@dataclass(frozen=True)
class SyntheticSpec:
    """Parameters of the synthetic-data generator."""

    districts: int
    pop_median: float = 2e5
    pop_sigma: float = 0.5
    age_concentration: float = 150.0
    density: float = 0.05
    flux_mean: float = 2.5e-5
    area_km: float = 100.0

    def __post_init__(self):
        if self.districts < 1:
            raise ValueError("need at least one district")
        if not 0.0 < self.density <= 1.0:
            raise ValueError(f"density must lie in (0, 1], got {self.density}")
        if min(self.pop_median, self.flux_mean, self.area_km,
               self.age_concentration) <= 0 or self.pop_sigma < 0:
            raise ValueError("generator scales must be positive")


@dataclass(frozen=True)
class SyntheticData:
    censuses: list
    mobility: np.ndarray
    term: ContactMatrix
    holiday: ContactMatrix
    coordinates: np.ndarray


def _split_into_bands(counts: np.ndarray) -> np.ndarray:
    """Split (children, adolescents, adults, elderly) into the 16 bands."""
    children, adol, adults, elderly = counts
    a = adol / _ADOLESCENT_YEARS   # adolescents per year of age
    d = adults / _ADULT_YEARS      # adults per year of age
    bands = np.array(
        [
            children,
            3 * a, 2 * a, 5 * a, a, 2 * a,  # 5-7, 8-9, 10-14, 15, 16-17
            a + d,                          # 18-19 straddles the group boundary
            5 * d, 5 * d, 15 * d, 15 * d, 5 * d,
            *(elderly * _ELDERLY_WEIGHTS),
        ]
    )
    return np.rint(bands)


def generate(spec: SyntheticSpec, seed: int) -> SyntheticData:
    """Draw a full synthetic dataset; identical output for identical seeds."""
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0xDA7A]))
    p = spec.districts

    fractions = rng.dirichlet(DEFAULT_AGE_FRACTIONS * spec.age_concentration, size=p)
    populations = spec.pop_median * np.exp(rng.normal(0.0, spec.pop_sigma, size=p))
    censuses = []
    for k in range(p):
        counts = np.rint(fractions[k] * populations[k])
        counts = np.maximum(counts, 1.0)  # simplex analytics need strict positivity
        censuses.append(Census(f"D{k:03d}", counts))

    coords = rng.uniform(0.0, spec.area_km, size=(p, 2))
    mobility = np.zeros((p, p))
    if p > 1:
        totals = np.array([c.total for c in censuses])
        diff = coords[:, None, :] - coords[None, :, :]
        dist = np.maximum(np.sqrt((diff**2).sum(axis=2)), _MIN_DISTANCE_KM)
        raw = totals[:, None] * totals[None, :] / dist**2
        np.fill_diagonal(raw, 0.0)

        keep = np.zeros((p, p), dtype=bool)
        n_keep = int(np.ceil(spec.density * p * (p - 1)))
        flat = raw.ravel().copy()
        order = np.argsort(flat)[::-1]
        keep.ravel()[order[:n_keep]] = True
        np.fill_diagonal(keep, False)
        # Reachability guard: every district keeps its strongest inbound edge.
        for j in range(p):
            if not keep[:, j].any():
                keep[np.argmax(raw[:, j]), j] = True

        mobility[keep] = raw[keep]
        mobility *= spec.flux_mean / mobility[keep].mean()

    return SyntheticData(
        censuses=censuses,
        mobility=mobility,
        term=ContactMatrix(DEFAULT_TERM_MATRIX, "term"),
        holiday=ContactMatrix(DEFAULT_HOLIDAY_MATRIX, "holiday"),
        coordinates=coords,
    )


def write_files(data: SyntheticData, outdir) -> dict:
    """Write census/mobility/contact files; returns {'census': path, ...}."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    paths = {
        "census": outdir / "census.csv",
        "mobility": outdir / "mobility.csv",
        "contacts": outdir / "contacts.txt",
    }

    with open(paths["census"], "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["district_id", *NOMIS_BANDS])
        for census in data.censuses:
            bands = _split_into_bands(census.counts)
            writer.writerow([census.district_id, *(str(int(b)) for b in bands)])

    ids = [c.district_id for c in data.censuses]
    with open(paths["mobility"], "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["origin", *ids])
        for k, row in enumerate(data.mobility):
            writer.writerow([ids[k], *(repr(float(v)) for v in row)])

    with open(paths["contacts"], "w") as fh:
        fh.write("# school-term contact matrix (contacts/day, rows: children,")
        fh.write(" adolescents, adults, elderly)\n")
        for row in data.term.values:
            fh.write(" ".join(repr(float(v)) for v in row) + "\n")
        fh.write("# school-holiday contact matrix\n")
        for row in data.holiday.values:
            fh.write(" ".join(repr(float(v)) for v in row) + "\n")

    return paths
