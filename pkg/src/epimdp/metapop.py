"""Metapopulation coupling: arrival process, daily advancement, simulation.

Every district (patch) runs the intra-patch SEIR model once "infected".
Uninfected patches are epidemiologically frozen; what decides their fate is
a non-homogeneous Poisson arrival process whose daily intensity combines
the infectious pressure of all currently infected patches:

    intensity_p(t) = sum_{p' infected} flux[p', p] * beta
                     * (S_adults_p)^mu * I_adults_p' * M_adult_adult_p'

sampled once at the end of every day.  Arrival times come from the
time-scale transformation: the cumulative intensity (trapezoid integral of
the piecewise-linear interpolant through the daily samples) is compared
against a running sum of unit-rate exponential draws, and the patch becomes
infected on the first day the integral crosses the threshold.  A patch is
infected at most once per run.

In deterministic mode the intra-patch noise is switched off and the
exponential thresholds are replaced by their expected value (1.0), giving
the reproducible trajectory the exhaustive policy search optimises over.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from epimdp.core import AgeGroup, Census, SeirState, beta_for_r0, make_reciprocal
from epimdp.errors import ConfigError, DataError
from epimdp.intra_patch import COMP_E, COMP_I, COMP_S, seir_step_days

DAYS_PER_WEEK = 7
_ADULT = int(AgeGroup.ADULTS)


def calibrate_mu(r0: float, s: float) -> float:
    """Coupling exponent mu = ln(r0) * s, clamped to [0, 1].

    Raises:
        ConfigError: for r0 <= 1, where there is no sustained spread to
            calibrate against.
    """
    if r0 <= 1.0:
        raise ConfigError(f"mu calibration needs r0 > 1, got {r0}")
    return float(min(max(math.log(r0) * s, 0.0), 1.0))


def cumulative_intensity(samples, t: int | None = None) -> float:
    """Trapezoid integral of the piecewise-linear intensity through day t.

    ``samples[k]`` is the intensity at integer day k (day 0 included).
    """
    samples = np.asarray(samples, dtype=np.float64)
    if t is None:
        t = len(samples) - 1
    if not 0 <= t < len(samples):
        raise ValueError(f"day {t} outside sampled range 0..{len(samples) - 1}")
    s = samples[: t + 1]
    return float(0.5 * (s[:-1] + s[1:]).sum())


@dataclass
class ArrivalProcess:
    """Scalar reference implementation of one patch's arrival process.

    The model runs a vectorised equivalent internally; this object exists
    for direct use and for testing the trigger logic in isolation.
    ``last_lambda`` is the day-0 intensity sample (0 for a patch that sees
    no infectious pressure before the first simulated day).
    """

    threshold: float
    last_lambda: float = 0.0
    cum: float = 0.0
    day: int = 0
    infection_day: int | None = None

    @classmethod
    def fresh(cls, rng: np.random.Generator, last_lambda: float = 0.0) -> "ArrivalProcess":
        return cls(threshold=float(rng.exponential()), last_lambda=last_lambda)


def maybe_infect(proc: ArrivalProcess, lam: float, rng: np.random.Generator) -> bool:
    """Feed one end-of-day intensity sample; True when the arrival fires.

    On a trigger the next unit-exponential increment is drawn and added to
    the threshold; since patches infect only once it is never consumed, but
    drawing it keeps the stream aligned with the textbook algorithm.
    """
    proc.day += 1
    proc.cum += 0.5 * (proc.last_lambda + lam)
    proc.last_lambda = lam
    if proc.infection_day is None and proc.cum >= proc.threshold:
        proc.infection_day = proc.day
        proc.threshold += float(rng.exponential())
        return True
    return False


@dataclass(frozen=True)
class PatchRuntime:
    """Read-only snapshot of one patch inside a running model."""

    state: SeirState
    infected: bool
    infection_day: int | None
    threshold: float
    cum_intensity: float
    budget_remaining: int | None = None


class Trajectory:
    """Daily compartment totals plus per-patch and per-week bookkeeping."""

    def __init__(self, daily, initial, final, infection_day, closures, rewards, controlled):
        self.daily = daily                # (days+1, 4, 4) aggregate [S,E,I,R] x group
        self.initial = initial            # (P, 4, 4)
        self.final = final                # (P, 4, 4)
        self.infection_day = infection_day  # (P,), -1 = never infected
        self.closures = closures          # (weeks, n_controlled) bool
        self.rewards = rewards            # (weeks,) unscaled, controlled patches
        self.controlled = tuple(controlled)

    @property
    def n_days(self) -> int:
        return self.daily.shape[0] - 1

    @property
    def n_weeks(self) -> int:
        return self.n_days // DAYS_PER_WEEK

    @property
    def daily_incidence(self) -> np.ndarray:
        s_tot = self.daily[:, COMP_S, :].sum(axis=1)
        return s_tot[:-1] - s_tot[1:]

    @property
    def weekly_incidence(self) -> np.ndarray:
        return self.daily_incidence.reshape(self.n_weeks, DAYS_PER_WEEK).sum(axis=1)

    @property
    def attack_rate(self) -> float:
        s0 = self.daily[0, COMP_S, :].sum()
        s1 = self.daily[-1, COMP_S, :].sum()
        return float((s0 - s1) / self.daily[0].sum())

    def controlled_attack_rate(self) -> float:
        if not self.controlled:
            raise ValueError("trajectory has no controlled patches")
        idx = list(self.controlled)
        s0 = self.initial[idx, COMP_S, :].sum()
        s1 = self.final[idx, COMP_S, :].sum()
        return float((s0 - s1) / self.initial[idx].sum())

    @property
    def peak_day(self) -> int:
        return int(np.argmax(self.daily_incidence))

    @property
    def peak_incidence(self) -> float:
        return float(self.daily_incidence.max())

    @property
    def conservation_drift(self) -> float:
        """Worst relative drift of the global population total."""
        totals = self.daily.sum(axis=(1, 2))
        return float(np.abs(totals - totals[0]).max() / totals[0])

    def infected_mask_by_day(self) -> np.ndarray:
        days = np.arange(self.n_days + 1)[:, None]
        known = self.infection_day >= 0
        return (known[None, :]) & (days >= self.infection_day[None, :])

    def summary(self) -> dict:
        return {
            "attack_rate": self.attack_rate,
            "peak_day": self.peak_day,
            "peak_incidence": self.peak_incidence,
            "total_reward": float(self.rewards.sum()),
            "infection_day": {
                f"patch_{k}": int(d) for k, d in enumerate(self.infection_day)
            },
            "patches_infected": int((self.infection_day >= 0).sum()),
        }

    def to_csv(self, path) -> None:
        groups = [g.name.lower() for g in AgeGroup]
        comps = ["s", "e", "i", "r"]
        header = ["day"] + [f"{c}_{g}" for c in comps for g in groups]
        header += ["new_infections", "infected_patches"]
        incidence = np.append(self.daily_incidence, np.nan)
        n_inf = self.infected_mask_by_day().sum(axis=1)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for d in range(self.n_days + 1):
                row = [d] + [repr(float(v)) for v in self.daily[d].ravel()]
                row += ["" if np.isnan(incidence[d]) else repr(float(incidence[d]))]
                row += [int(n_inf[d])]
                writer.writerow(row)


class Model:
    """A running metapopulation simulation (mutable; one per run)."""

    def __init__(self, config, seed, deterministic: bool = False, record_daily: bool = True):
        self.config = config
        self.deterministic = bool(deterministic)
        self.record_daily = bool(record_daily)
        p = config.n_patches

        self.n = np.stack([c.counts for c in config.censuses])  # (P, 4)
        self.term_m = np.stack(
            [make_reciprocal(config.term, c).values for c in config.censuses]
        )
        self.holiday_m = np.stack(
            [make_reciprocal(config.holiday, c).values for c in config.censuses]
        )
        aggregate = Census("_all", self.n.sum(axis=0))
        if config.beta is not None:
            self.beta = float(config.beta)
        else:
            self.beta = beta_for_r0(
                make_reciprocal(config.term, aggregate), config.gamma, config.r0
            )
        if config.mu is not None:
            self.mu = float(config.mu)
        elif p == 1:
            self.mu = 0.0  # coupling exponent is moot without neighbours
        else:
            self.mu = calibrate_mu(config.r0, config.mu_scale)

        seq = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
        noise_seq, arrival_seq = seq.spawn(2)
        self.noise_rng = np.random.Generator(np.random.Philox(noise_seq))
        self.arrival_rng = np.random.Generator(np.random.Philox(arrival_seq))

        self.y = np.zeros((p, 4, 4))
        self.y[:, COMP_S, :] = self.n
        self.active = np.zeros(p, dtype=np.uint8)
        self.infection_day = np.full(p, -1, dtype=np.int64)
        k = config.seed_patch
        seed_inf = min(config.initial_infected, self.y[k, COMP_S, _ADULT])
        self.y[k, COMP_S, _ADULT] -= seed_inf
        self.y[k, COMP_I, _ADULT] += seed_inf
        self.active[k] = 1
        self.infection_day[k] = 0
        self._all_active = bool(self.active.all())

        if self.deterministic:
            self.threshold = np.ones(p)
        else:
            self.threshold = self.arrival_rng.exponential(size=p)
        self.cum_lambda = np.zeros(p)
        self.lambda_last = np.zeros(p)
        n_days = config.horizon_weeks * DAYS_PER_WEEK
        self.lambda_history = np.zeros((n_days + 1, p))

        self.day = 0
        self.week = 0
        self.current_m = self.term_m.copy()
        self._holiday_set = frozenset(config.holiday_weeks)
        self._dummy_noise = np.zeros((1, 1, 1, 3, 4))

        self.initial = self.y.copy()
        if self.record_daily:
            self.daily = np.zeros((n_days + 1, 4, 4))
            self.daily[0] = self.y.sum(axis=0)
        self._closures = []
        self._rewards = []

    # -- introspection -------------------------------------------------

    @property
    def n_patches(self) -> int:
        return self.config.n_patches

    def patch(self, p: int, budget_remaining: int | None = None) -> PatchRuntime:
        day = int(self.infection_day[p])
        return PatchRuntime(
            state=SeirState.from_array(self.y[p]),
            infected=bool(self.active[p]),
            infection_day=None if day < 0 else day,
            threshold=float(self.threshold[p]),
            cum_intensity=float(self.cum_lambda[p]),
            budget_remaining=budget_remaining,
        )

    def susceptible_total(self, patches=None) -> float:
        if patches is None:
            return float(self.y[:, COMP_S, :].sum())
        return float(self.y[list(patches), COMP_S, :].sum())

    # -- dynamics ------------------------------------------------------

    def begin_week(self, closed_mask=None) -> np.ndarray:
        """Fix each patch's contact matrix for the coming week."""
        p = self.n_patches
        closed = np.zeros(p, dtype=bool)
        if closed_mask is not None:
            closed |= np.asarray(closed_mask, dtype=bool)
        if self.week in self._holiday_set:
            closed[:] = True
        self.current_m = np.where(closed[:, None, None], self.holiday_m, self.term_m)
        return closed

    def advance_week(self, closed_mask=None) -> None:
        """Apply a closure mask, then advance seven days."""
        if self.week >= self.config.horizon_weeks:
            raise ValueError("model already ran its full horizon")
        closed = self.begin_week(closed_mask)
        self._closures.append(closed)
        cfg = self.config
        nsub = cfg.steps_per_day
        if self.deterministic:
            noise = None
        else:
            noise = self.noise_rng.standard_normal((DAYS_PER_WEEK, nsub, self.n_patches, 3, 4))
        if self._all_active and not self.record_daily:
            # Fast path: no arrivals to evaluate, no rows to record.
            seir_step_days(
                self.y, self.n, self.active, self.current_m,
                self.beta, cfg.gamma, cfg.zeta, cfg.dt, nsub, DAYS_PER_WEEK,
                self._dummy_noise if noise is None else noise,
                not self.deterministic,
            )
            self.day += DAYS_PER_WEEK
        else:
            for d in range(DAYS_PER_WEEK):
                self._advance_day(None if noise is None else noise[d])
        self.week += 1

    def _advance_day(self, noise_day) -> None:
        cfg = self.config
        nsub = cfg.steps_per_day
        seir_step_days(
            self.y, self.n, self.active, self.current_m,
            self.beta, cfg.gamma, cfg.zeta, cfg.dt, nsub, 1,
            self._dummy_noise if noise_day is None else noise_day[None],
            not self.deterministic,
        )
        self.day += 1
        if not self._all_active:
            self._arrival_step()
        if self.record_daily:
            self.daily[self.day] = self.y.sum(axis=0)

    def advance_day(self) -> None:
        """Advance one day, drawing this day's noise (standalone use)."""
        if self.deterministic:
            self._advance_day(None)
        else:
            nsub = self.config.steps_per_day
            self._advance_day(
                self.noise_rng.standard_normal((nsub, self.n_patches, 3, 4))
            )

    def intensities(self) -> np.ndarray:
        """End-of-day arrival intensity for every patch (0 where infected)."""
        strength = (
            self.y[:, COMP_I, _ADULT] * self.current_m[:, _ADULT, _ADULT] * self.active
        )
        incoming = self.config.mobility.T @ strength
        lam = self.beta * np.power(self.y[:, COMP_S, _ADULT], self.mu) * incoming
        return np.where(self.active == 0, lam, 0.0)

    def _arrival_step(self) -> None:
        lam = self.intensities()
        self.lambda_history[self.day] = lam
        self.cum_lambda += 0.5 * (self.lambda_last + lam)
        self.lambda_last = lam
        triggered = (self.active == 0) & (self.cum_lambda >= self.threshold)
        for p_idx in np.flatnonzero(triggered):
            self.active[p_idx] = 1
            self.infection_day[p_idx] = self.day
            inoc = min(self.config.arrival_inoculum, self.y[p_idx, COMP_S, _ADULT])
            self.y[p_idx, COMP_S, _ADULT] -= inoc
            self.y[p_idx, COMP_E, _ADULT] += inoc
            if not self.deterministic:
                self.threshold[p_idx] += self.arrival_rng.exponential()
        if triggered.any():
            self._all_active = bool(self.active.all())

    def record_week_reward(self, controlled, s_before: float) -> float:
        reward = -(s_before - self.susceptible_total(controlled))
        self._rewards.append(reward)
        return reward

    def finish(self, controlled=()) -> Trajectory:
        if not self.record_daily:
            raise ValueError("model was built with record_daily=False")
        weeks = len(self._closures)
        controlled = tuple(controlled)
        if controlled:
            closures = np.array([c[list(controlled)] for c in self._closures], dtype=bool)
        else:
            closures = np.zeros((weeks, 0), dtype=bool)
        rewards = np.array(self._rewards if self._rewards else [0.0] * weeks)
        if rewards.shape[0] != weeks:
            rewards = np.zeros(weeks)
        return Trajectory(
            daily=self.daily[: self.day + 1].copy(),
            initial=self.initial,
            final=self.y.copy(),
            infection_day=self.infection_day.copy(),
            closures=closures,
            rewards=rewards,
            controlled=controlled,
        )


def patch_intensity(model: Model, p: int) -> float:
    """Arrival intensity of one uninfected patch (scalar reference path)."""
    if model.active[p]:
        raise ValueError(f"patch {p} is already infected")
    acc = 0.0
    for q in range(model.n_patches):
        if model.active[q]:
            acc += (
                model.config.mobility[q, p]
                * model.y[q, COMP_I, _ADULT]
                * model.current_m[q, _ADULT, _ADULT]
            )
    return float(model.beta * model.y[p, COMP_S, _ADULT] ** model.mu * acc)


def simulate(
    config,
    closures=None,
    seed: int = 0,
    controlled=(),
    deterministic: bool = False,
) -> Trajectory:
    """Run a full multi-week simulation and return its trajectory.

    Args:
        config: the experiment configuration.
        closures: (horizon_weeks, len(controlled)) closed-school flags per
            week per controlled patch, or None for schools open throughout.
            Budget feasibility is the caller's responsibility.
        seed: master seed; identical (config, closures, seed) triples give
            bitwise-identical trajectories.
        controlled: patch indices the closure columns refer to.
        deterministic: switch off intra-patch noise and replace the arrival
            thresholds by their expected value.
    """
    controlled = tuple(controlled)
    weeks = config.horizon_weeks
    if closures is None:
        closures = np.zeros((weeks, len(controlled)), dtype=bool)
    closures = np.asarray(closures, dtype=bool)
    if closures.shape != (weeks, len(controlled)):
        raise ConfigError(
            f"closure schedule shape {closures.shape} does not match "
            f"({weeks}, {len(controlled)})"
        )
    model = Model(config, seed, deterministic=deterministic)
    mask = np.zeros(config.n_patches, dtype=bool)
    for week in range(weeks):
        mask[:] = False
        if controlled:
            mask[list(controlled)] = closures[week]
        s_before = model.susceptible_total(controlled) if controlled else 0.0
        model.advance_week(mask)
        if controlled:
            model.record_week_reward(controlled, s_before)
    return model.finish(controlled)


def load_mobility_csv(path) -> tuple[list[str], np.ndarray]:
    """Read a mobility matrix: header of district ids, one row per origin."""
    try:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            try:
                header = next(reader)
            except StopIteration:
                raise DataError(f"{path}: empty mobility file") from None
            ids = header[1:]
            rows = {}
            for line in reader:
                if not line:
                    continue
                if len(line) != len(ids) + 1:
                    raise DataError(
                        f"{path}: row for {line[0]!r} has {len(line) - 1} entries, "
                        f"expected {len(ids)}"
                    )
                try:
                    rows[line[0]] = [float(v) for v in line[1:]]
                except ValueError as exc:
                    raise DataError(f"{path}: non-numeric flux ({exc})") from exc
    except OSError as exc:
        raise DataError(f"cannot read mobility file {path}: {exc}") from exc
    missing = [i for i in ids if i not in rows]
    if missing:
        raise DataError(f"{path}: missing origin rows for {missing[:5]}")
    matrix = np.array([rows[i] for i in ids])
    if np.any(matrix < 0):
        raise DataError(f"{path}: fluxes must be nonnegative")
    return ids, matrix


def write_summary(trajectory: Trajectory, path) -> None:
    Path(path).write_text(json.dumps(trajectory.summary(), indent=2) + "\n")
