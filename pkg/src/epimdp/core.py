"""Shared domain types and reproduction-number algebra.

Age structure is fixed at four groups (children, adolescents, adults,
elderly) indexed 0..3 in that order everywhere in the package.  Contact
matrices hold mean daily contact frequencies between those groups; the
basic reproduction number of the age-structured model scales with the
dominant eigenvalue (spectral radius) of the contact matrix, which is what
ties ``r0``, ``beta`` and ``gamma`` together.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from epimdp.errors import DataError, NumericalError

N_AGES = 4

# Power iteration controls for spectral_radius().
_POWER_TOL = 1e-10
_POWER_MAX_ITER = 10_000


class AgeGroup(enum.IntEnum):
    """The four age groups; the integer value is the array index."""

    CHILDREN = 0      # 0-4 years
    ADOLESCENTS = 1   # 5-18 years
    ADULTS = 2        # 19-64 years
    ELDERLY = 3       # 65+ years


def _as_matrix(m) -> np.ndarray:
    """Coerce a ContactMatrix or array-like into a validated (4, 4) float array."""
    values = m.values if isinstance(m, ContactMatrix) else np.asarray(m, dtype=np.float64)
    if values.shape != (N_AGES, N_AGES):
        raise ValueError(f"expected a {N_AGES}x{N_AGES} matrix, got shape {values.shape}")
    if not np.all(np.isfinite(values)):
        raise ValueError("contact matrix entries must be finite")
    if np.any(values < 0.0):
        raise ValueError("contact matrix entries must be nonnegative")
    return values


@dataclass(frozen=True)
class ContactMatrix:
    """Mean contact frequency (contacts/day) between age groups.

    ``values[i, j]`` is the mean number of daily contacts one individual of
    row group ``i`` has with individuals of column group ``j``.  ``label``
    distinguishes the school-term matrix from the school-holiday one.
    """

    values: np.ndarray
    label: str = "term"

    def __post_init__(self):
        values = _as_matrix(self.values)
        values = values.copy()
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def adult_adult(self) -> float:
        """Adult-to-adult entry, the one driving inter-patch coupling."""
        return float(self.values[AgeGroup.ADULTS, AgeGroup.ADULTS])

    def scaled(self, factor: float) -> "ContactMatrix":
        return ContactMatrix(self.values * factor, self.label)


@dataclass(frozen=True)
class Census:
    """Population counts per age group for one district."""

    district_id: str
    counts: np.ndarray

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.float64)
        if counts.shape != (N_AGES,):
            raise DataError(f"census needs {N_AGES} age-group counts, got shape {counts.shape}")
        if np.any(counts < 0) or not np.all(np.isfinite(counts)):
            raise DataError(f"census counts for {self.district_id!r} must be finite and >= 0")
        if counts.sum() <= 0:
            raise DataError(f"census for {self.district_id!r} has zero total population")
        counts = counts.copy()
        counts.setflags(write=False)
        object.__setattr__(self, "counts", counts)

    @property
    def total(self) -> float:
        return float(self.counts.sum())


@dataclass(frozen=True)
class EpiParams:
    """Epidemiological rate parameters shared by every patch.

    Attributes:
        r0: basic reproduction number (dimensionless).
        beta: transmission probability per contact.
        gamma: recovery rate, 1/day (1/gamma = mean infectious period).
        zeta: latency rate, 1/day (1/zeta = mean latent period).
        mu: exponent on the susceptible-adult pool in the inter-patch
            coupling, in [0, 1].
        mu_scale: the scaling factor relating mu to log(r0).
    """

    r0: float
    beta: float
    gamma: float
    zeta: float
    mu: float = 0.0
    mu_scale: float = 0.6

    def __post_init__(self):
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError(f"beta must lie in [0, 1], got {self.beta}")
        if self.gamma <= 0 or self.zeta <= 0:
            raise ValueError("gamma and zeta must be positive rates")
        if not 0.0 <= self.mu <= 1.0:
            raise ValueError(f"mu must lie in [0, 1], got {self.mu}")


@dataclass(frozen=True)
class SeirState:
    """Continuous-valued SEIR compartments per age group for one district."""

    s: np.ndarray
    e: np.ndarray
    i: np.ndarray
    r: np.ndarray

    def __post_init__(self):
        for name in ("s", "e", "i", "r"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if arr.shape != (N_AGES,):
                raise ValueError(f"compartment {name!r} must have shape ({N_AGES},)")
            if np.any(arr < 0) or not np.all(np.isfinite(arr)):
                raise ValueError(f"compartment {name!r} must be finite and nonnegative")
            arr = arr.copy()
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @classmethod
    def from_array(cls, stacked: np.ndarray) -> "SeirState":
        """Build from a (4, 4) array laid out [S, E, I, R] x age group."""
        return cls(stacked[0], stacked[1], stacked[2], stacked[3])

    def as_array(self) -> np.ndarray:
        """Stack into a (4, 4) array laid out [S, E, I, R] x age group."""
        return np.stack([self.s, self.e, self.i, self.r])

    def group_totals(self) -> np.ndarray:
        return self.s + self.e + self.i + self.r

    @classmethod
    def susceptible(cls, census: Census) -> "SeirState":
        """Fully susceptible state matching a census."""
        zeros = np.zeros(N_AGES)
        return cls(census.counts.astype(np.float64), zeros, zeros, zeros)


def spectral_radius(m) -> float:
    """Dominant eigenvalue of a nonnegative matrix via power iteration.

    A small positive diagonal shift is applied before iterating; for a
    nonnegative matrix this moves every eigenvalue by the same amount while
    breaking the periodicity that can make plain power iteration oscillate
    (e.g. on cyclic permutation matrices), so the iteration always converges
    to the shifted dominant eigenvalue.

    Args:
        m: ContactMatrix or (4, 4) array-like with nonnegative entries.

    Returns:
        The spectral radius, converged to relative tolerance 1e-10 or after
        10,000 iterations, whichever comes first.

    Raises:
        NumericalError: if the matrix is identically zero.
    """
    a = _as_matrix(m)
    peak = a.max()
    if peak == 0.0:
        raise NumericalError("degenerate contact matrix (all entries zero)")

    shift = 0.05 * peak
    shifted = a + shift * np.eye(N_AGES)
    x = np.full(N_AGES, 0.5)  # strictly positive start reaches every block
    estimate = 0.0
    for _ in range(_POWER_MAX_ITER):
        y = shifted @ x
        norm = np.linalg.norm(y)
        x = y / norm
        if abs(norm - estimate) <= _POWER_TOL * max(norm, 1e-300):
            estimate = norm
            break
        estimate = norm
    return float(estimate - shift)


def beta_for_r0(m, gamma: float, r0: float) -> float:
    """Transmission probability that yields a target reproduction number.

    Inverts r0 = (beta / gamma) * rho(m), where rho is the spectral radius
    of the contact matrix.
    """
    if r0 <= 0:
        raise ValueError(f"r0 must be positive, got {r0}")
    if gamma <= 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    return r0 * gamma / spectral_radius(m)


def make_reciprocal(m, census: Census) -> ContactMatrix:
    """Correct a contact matrix so total contacts balance between groups.

    Returns m' with ``m'_ij = (m_ij * N_i + m_ji * N_j) / (2 * N_i)``, the
    symmetric total-contact average, which satisfies the balance identity
    ``m'_ij * N_i = m'_ji * N_j`` exactly and is idempotent.
    """
    a = _as_matrix(m)
    n = census.counts
    if np.any(n <= 0):
        raise DataError(
            f"reciprocity correction needs positive population in every age group "
            f"(district {census.district_id!r})"
        )
    total = a * n[:, None]  # total contacts group i -> j per day
    balanced = 0.5 * (total + total.T)
    corrected = balanced / n[:, None]
    label = m.label if isinstance(m, ContactMatrix) else "term"
    return ContactMatrix(corrected, label)


def load_contact_matrices(path) -> tuple[ContactMatrix, ContactMatrix]:
    """Load term and holiday contact matrices from a text file.

    The file holds two 4x4 blocks (term first, then holiday) of
    whitespace-separated rows; ``#`` starts a comment.
    """
    rows = []
    try:
        with open(path) as fh:
            for lineno, line in enumerate(fh, start=1):
                body = line.split("#", 1)[0].strip()
                if not body:
                    continue
                parts = body.split()
                if len(parts) != N_AGES:
                    raise DataError(
                        f"{path}:{lineno}: expected {N_AGES} entries per row, got {len(parts)}"
                    )
                try:
                    rows.append([float(v) for v in parts])
                except ValueError as exc:
                    raise DataError(f"{path}:{lineno}: non-numeric entry ({exc})") from exc
    except OSError as exc:
        raise DataError(f"cannot read contact-matrix file {path}: {exc}") from exc
    if len(rows) != 2 * N_AGES:
        raise DataError(
            f"{path}: expected {2 * N_AGES} matrix rows (term block then holiday block), "
            f"got {len(rows)}"
        )
    term = ContactMatrix(np.array(rows[:N_AGES]), "term")
    holiday = ContactMatrix(np.array(rows[N_AGES:]), "holiday")
    return term, holiday
