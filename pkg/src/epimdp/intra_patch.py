"""Single-district age-structured SEIR stepping, deterministic and stochastic.

The deterministic step is explicit Euler on the SEIR flows; the stochastic
step adds one Wiener increment per transition flow per age group (the
chemical-Langevin form), so a flow ``f = rate * dt`` becomes
``f + sqrt(max(f, 0)) * Z`` with ``Z`` standard normal.  All flows are
computed from the pre-step state and clamped to their source compartment
before being applied simultaneously, which makes population conservation
and nonnegativity exact by construction regardless of noise.

The hot loop lives in ``seir_step_days``, a numba kernel that advances a
whole stack of districts (axis 0) for several days at once.  Everything
else in the package — the metapopulation model, the MDP environment, the
exhaustive policy search — funnels through this one kernel.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numba import njit, prange

from epimdp.core import ContactMatrix, EpiParams, SeirState
from epimdp.errors import DataError

# Compartment indices along axis -2 of stacked state arrays.
COMP_S, COMP_E, COMP_I, COMP_R = 0, 1, 2, 3


@dataclass(frozen=True)
class StepParams:
    """Everything one Euler(-Maruyama) step needs besides the state."""

    dt: float
    params: EpiParams
    matrix: ContactMatrix  # already reciprocity-corrected for this district

    def __post_init__(self):
        if not 0.0 < self.dt <= 1.0:
            raise ValueError(f"dt must lie in (0, 1], got {self.dt}")


@njit(cache=True, parallel=True)
def seir_step_days(y, n, active, m, beta, gamma, zeta, dt, nsub, ndays, noise, stochastic):
    """Advance stacked SEIR states in place for ``ndays * nsub`` substeps.

    Args:
        y: (P, 4, 4) state, [S, E, I, R] x age group per patch; modified in place.
        n: (P, 4) per-group population (constant).
        active: (P,) uint8; inactive patches are left untouched (frozen).
        m: (P, 4, 4) contact matrix in effect for each patch.
        beta, gamma, zeta: shared epidemiological rates.
        dt: substep length in days; nsub: substeps per day; ndays: days.
        noise: (ndays, nsub, P, 3, 4) standard normals when stochastic,
            otherwise any dummy array (never read).
        stochastic: whether to add the Wiener increments.
    """
    npatch = y.shape[0]
    for p in prange(npatch):
        if active[p] == 0:
            continue
        phi = np.empty(4)
        for d in range(ndays):
            for k in range(nsub):
                for g in range(4):
                    acc = 0.0
                    for j in range(4):
                        acc += m[p, g, j] * y[p, COMP_I, j] / n[p, j]
                    phi[g] = beta * acc
                for g in range(4):
                    s = y[p, COMP_S, g]
                    e = y[p, COMP_E, g]
                    i = y[p, COMP_I, g]
                    f_se = phi[g] * s * dt
                    f_ei = zeta * e * dt
                    f_ir = gamma * i * dt
                    if stochastic:
                        f_se += np.sqrt(max(f_se, 0.0)) * noise[d, k, p, 0, g]
                        f_ei += np.sqrt(max(f_ei, 0.0)) * noise[d, k, p, 1, g]
                        f_ir += np.sqrt(max(f_ir, 0.0)) * noise[d, k, p, 2, g]
                    # Clamp every flow to its source (pre-step value).
                    f_se = min(max(f_se, 0.0), s)
                    f_ei = min(max(f_ei, 0.0), e)
                    f_ir = min(max(f_ir, 0.0), i)
                    y[p, COMP_S, g] = s - f_se
                    y[p, COMP_E, g] = e + f_se - f_ei
                    y[p, COMP_I, g] = i + f_ei - f_ir
                    y[p, COMP_R, g] = y[p, COMP_R, g] + f_ir


def force_of_infection(state: SeirState, matrix, beta: float) -> np.ndarray:
    """Per-group infection rate phi_i = sum_j beta * M_ij * I_j / N_j (1/day)."""
    m = matrix.values if isinstance(matrix, ContactMatrix) else np.asarray(matrix, float)
    n = state.group_totals()
    if np.any(n <= 0.0):
        raise DataError("empty age group: force of infection needs N_j > 0 for every group")
    return beta * (m @ (state.i / n))


def _run_single(state: SeirState, sp: StepParams, noise: np.ndarray | None) -> SeirState:
    y = state.as_array()[None, :, :].copy()
    n = state.group_totals()
    if np.any(n <= 0.0):
        raise DataError("empty age group: stepping needs N_j > 0 for every group")
    n = n[None, :]
    active = np.ones(1, dtype=np.uint8)
    m = sp.matrix.values[None, :, :]
    stochastic = noise is not None
    if noise is None:
        noise = np.zeros((1, 1, 1, 3, 4))
    else:
        noise = noise.reshape(1, 1, 1, 3, 4)
    seir_step_days(
        y, n, active, m,
        sp.params.beta, sp.params.gamma, sp.params.zeta,
        sp.dt, 1, 1, noise, stochastic,
    )
    return SeirState.from_array(y[0])


def step_deterministic(state: SeirState, sp: StepParams) -> SeirState:
    """One explicit Euler step; per-group population is conserved exactly."""
    return _run_single(state, sp, None)


def step_stochastic(state: SeirState, sp: StepParams, rng: np.random.Generator) -> SeirState:
    """One Euler-Maruyama step with independent noise per transition per group."""
    noise = rng.standard_normal((3, 4))
    return step_with_noise(state, sp, noise)


def step_with_noise(state: SeirState, sp: StepParams, noise: np.ndarray) -> SeirState:
    """One stochastic step with the (3, 4) noise block supplied by the caller.

    Row order of ``noise``: S->E, E->I, I->R transitions.  With all-zero
    noise this reduces exactly to ``step_deterministic``.
    """
    noise = np.asarray(noise, dtype=np.float64)
    if noise.shape != (3, 4):
        raise ValueError(f"noise must have shape (3, 4), got {noise.shape}")
    return _run_single(state, sp, noise)


def matrix_for_week(
    schedule: Sequence[bool],
    week: int,
    term: ContactMatrix,
    holiday: ContactMatrix,
) -> ContactMatrix:
    """Holiday matrix when schools are closed that week, term matrix otherwise."""
    if not 0 <= week < len(schedule):
        raise ValueError(f"week {week} outside schedule of length {len(schedule)}")
    return holiday if schedule[week] else term
