"""Weekly school-closure MDP over a set of controlled districts.

Each step covers one simulated week.  The agent chooses open/close per
controlled district; a close only takes effect while that district still
has closure budget, otherwise the week silently runs as open.  Uncontrolled
districts always use the term contact matrix (unless the config's exogenous
holiday calendar closes everything).

Observations concatenate, per controlled district, the sixteen compartment
values (S, E, I, R by age group, each normalized by the district's
population) plus the remaining budget fraction — 17 numbers per district.
The reward is the scaled negative susceptible loss over the controlled
districts; the unscaled value rides along in the step info.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from epimdp.errors import ConfigError
from epimdp.metapop import Model, Trajectory

OBS_PER_PATCH = 17


@dataclass(frozen=True)
class EnvConfig:
    """Model plus control problem: which districts, how much budget."""

    model: object  # ModelConfig
    controlled: tuple
    budget_weeks: int

    def __post_init__(self):
        controlled = tuple(int(p) for p in self.controlled)
        if not controlled:
            raise ConfigError("need at least one controlled district")
        if len(set(controlled)) != len(controlled):
            raise ConfigError("controlled districts must be unique")
        p = self.model.n_patches
        bad = [c for c in controlled if not 0 <= c < p]
        if bad:
            raise ConfigError(f"controlled district indices {bad} out of range")
        if not 0 <= self.budget_weeks <= self.model.horizon_weeks:
            raise ConfigError(
                f"budget must lie in [0, {self.model.horizon_weeks}] weeks, "
                f"got {self.budget_weeks}"
            )
        object.__setattr__(self, "controlled", controlled)

    @classmethod
    def for_districts(cls, model, district_ids, budget_weeks: int) -> "EnvConfig":
        controlled = tuple(model.district_index(d) for d in district_ids)
        return cls(model=model, controlled=controlled, budget_weeks=budget_weeks)

    @property
    def n_controlled(self) -> int:
        return len(self.controlled)

    @property
    def obs_size(self) -> int:
        return OBS_PER_PATCH * self.n_controlled

    @property
    def horizon_weeks(self) -> int:
        return self.model.horizon_weeks


class SchoolClosureEnv:
    """reset/step environment; one instance simulates one episode at a time."""

    def __init__(self, config: EnvConfig, deterministic: bool = False,
                 record_daily: bool = False):
        self.config = config
        self.deterministic = bool(deterministic)
        self.record_daily = bool(record_daily)
        self._controlled = np.array(config.controlled, dtype=np.intp)
        self._pops = np.array(
            [config.model.censuses[p].total for p in config.controlled]
        )
        self._reward_scale = 1.0 / self._pops.sum()
        self._model: Model | None = None
        self.week = 0
        self.done = True
        self.budgets = np.zeros(config.n_controlled, dtype=np.int64)
        self.history: list[dict] = []

    # -- episode lifecycle ----------------------------------------------

    def reset(self, seed) -> np.ndarray:
        self._model = Model(
            self.config.model, seed,
            deterministic=self.deterministic,
            record_daily=self.record_daily,
        )
        self.budgets = np.full(self.config.n_controlled, self.config.budget_weeks,
                               dtype=np.int64)
        self.week = 0
        self.done = False
        self.history = []
        return self._observe()

    def step(self, actions):
        """Apply one week of open/close choices.

        Args:
            actions: length-|controlled| vector; truthy means "close".

        Returns:
            (observation, reward, done, info): the reward is scaled by the
            controlled population; ``info["reward_unscaled"]`` has the raw
            susceptible loss, ``info["closed"]`` the closures that actually
            took effect after budget accounting.
        """
        if self.done or self._model is None:
            raise ConfigError("step() called on a finished episode; reset first")
        actions = np.asarray(actions).astype(bool).ravel()
        if actions.shape != (self.config.n_controlled,):
            raise ConfigError(
                f"expected {self.config.n_controlled} actions, got {actions.shape}"
            )
        effective = actions & (self.budgets > 0)
        self.budgets = self.budgets - effective.astype(np.int64)

        closed_mask = np.zeros(self.config.model.n_patches, dtype=bool)
        closed_mask[self._controlled[effective]] = True

        model = self._model
        s_before = model.susceptible_total(self.config.controlled)
        model.advance_week(closed_mask)
        unscaled = model.record_week_reward(self.config.controlled, s_before)
        reward = unscaled * self._reward_scale

        self.week += 1
        self.done = self.week >= self.config.horizon_weeks
        info = {
            "reward_unscaled": unscaled,
            "closed": effective.copy(),
            "budgets": self.budgets.copy(),
        }
        self.history.append(
            {
                "week": self.week - 1,
                "actions": actions.astype(int).tolist(),
                "closed": effective.astype(int).tolist(),
                "reward": reward,
                "reward_unscaled": unscaled,
                "budgets": self.budgets.tolist(),
            }
        )
        return self._observe(), float(reward), self.done, info

    def _observe(self) -> np.ndarray:
        model = self._model
        states = model.y[self._controlled]  # (n_c, 4 compartments, 4 groups)
        normalized = states / self._pops[:, None, None]
        budget_frac = (
            self.budgets / self.config.budget_weeks
            if self.config.budget_weeks > 0
            else np.zeros_like(self.budgets, dtype=np.float64)
        )
        per_patch = np.concatenate(
            [normalized.reshape(self.config.n_controlled, 16),
             budget_frac[:, None]],
            axis=1,
        )
        return per_patch.ravel()

    # -- reporting --------------------------------------------------------

    def trajectory(self) -> Trajectory:
        if self._model is None:
            raise ConfigError("no episode has been run")
        if not self.record_daily:
            raise ConfigError(
                "daily curves were not recorded; build the env with record_daily=True"
            )
        return self._model.finish(self.config.controlled)

    def attack_rate(self) -> float:
        """Attack rate over the controlled districts for the finished episode."""
        if self._model is None or not self.done:
            raise ConfigError("episode still in progress")
        model = self._model
        idx = list(self.config.controlled)
        s0 = model.initial[idx, 0, :].sum()
        s1 = model.y[idx, 0, :].sum()
        return float((s0 - s1) / self._pops.sum())

    def write_log(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["week", "actions", "closed", "reward",
                             "reward_unscaled", "budgets"])
            for row in self.history:
                writer.writerow(
                    [
                        row["week"],
                        "".join(map(str, row["actions"])),
                        "".join(map(str, row["closed"])),
                        repr(row["reward"]),
                        repr(row["reward_unscaled"]),
                        " ".join(map(str, row["budgets"])),
                    ]
                )

    def summary(self) -> dict:
        returns = episode_return([row["reward"] for row in self.history])
        return {
            "weeks": self.week,
            "episode_return": returns,
            "episode_return_unscaled": episode_return(
                [row["reward_unscaled"] for row in self.history]
            ),
            "closures_used": [
                int(self.config.budget_weeks - b) for b in self.budgets
            ],
            "attack_rate": self.attack_rate() if self.done else None,
        }

    def write_summary(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.summary(), fh, indent=2)
            fh.write("\n")


def episode_return(rewards) -> float:
    """Sum of weekly rewards; zero for an empty episode."""
    rewards = np.asarray(rewards, dtype=np.float64)
    return float(rewards.sum()) if rewards.size else 0.0
