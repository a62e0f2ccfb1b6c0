"""Experiment configuration: the one object every pipeline starts from.

A ModelConfig bundles the data (censuses, mobility, contact matrices) with
the epidemiological and scheduling parameters of one experiment.  It can be
built directly, from a synthetic-generator spec, or from a JSON config file
(see ``load_config``).  Derived quantities — the transmission probability
matching the requested reproduction number, and the inter-patch coupling
exponent — are computed lazily by the model, not stored here, unless the
config explicitly overrides them.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from epimdp import datagen
from epimdp.core import Census, ContactMatrix, load_contact_matrices
from epimdp.errors import ConfigError

DEFAULT_GAMMA = 1 / 1.8  # recovery rate, 1/day
DEFAULT_ZETA = 1.0       # latency rate, 1/day (one-day latent period)
DEFAULT_WEEKS = 43


@dataclass(frozen=True)
class ModelConfig:
    """All parameters of one metapopulation experiment."""

    censuses: tuple
    mobility: np.ndarray
    term: ContactMatrix
    holiday: ContactMatrix
    r0: float = 1.8
    gamma: float = DEFAULT_GAMMA
    zeta: float = DEFAULT_ZETA
    mu_scale: float = 0.6
    mu: float | None = None       # None: calibrated as ln(r0) * mu_scale
    beta: float | None = None     # None: derived from r0 and the aggregate matrix
    dt: float = 0.25
    horizon_weeks: int = DEFAULT_WEEKS
    seed_patch: int = 0
    initial_infected: float = 10.0   # infectious adults placed in the seed patch
    arrival_inoculum: float = 1.0    # adults moved S->E when a patch gets infected
    holiday_weeks: tuple = ()        # exogenous calendar closures, all patches

    def __post_init__(self):
        object.__setattr__(self, "censuses", tuple(self.censuses))
        if not self.censuses:
            raise ConfigError("config needs at least one district census")
        p = len(self.censuses)
        mobility = np.asarray(self.mobility, dtype=np.float64)
        if mobility.shape != (p, p):
            raise ConfigError(
                f"mobility matrix shape {mobility.shape} does not match {p} districts"
            )
        if np.any(mobility < 0) or not np.all(np.isfinite(mobility)):
            raise ConfigError("mobility fluxes must be finite and nonnegative")
        mobility = mobility.copy()
        mobility.setflags(write=False)
        object.__setattr__(self, "mobility", mobility)
        if self.r0 <= 0 or self.gamma <= 0 or self.zeta <= 0:
            raise ConfigError("r0, gamma and zeta must all be positive")
        if self.mu is not None and not 0.0 <= self.mu <= 1.0:
            raise ConfigError(f"mu override must lie in [0, 1], got {self.mu}")
        if self.beta is not None and not 0.0 < self.beta <= 1.0:
            raise ConfigError(f"beta override must lie in (0, 1], got {self.beta}")
        if not 0.0 < self.dt <= 1.0 or abs(round(1.0 / self.dt) * self.dt - 1.0) > 1e-9:
            raise ConfigError(f"dt must divide one day evenly, got {self.dt}")
        if self.horizon_weeks < 1:
            raise ConfigError("horizon must be at least one week")
        if not 0 <= self.seed_patch < p:
            raise ConfigError(f"seed_patch {self.seed_patch} out of range for {p} districts")
        if self.initial_infected < 0 or self.arrival_inoculum < 0:
            raise ConfigError("seeding sizes must be nonnegative")
        object.__setattr__(self, "holiday_weeks", tuple(int(w) for w in self.holiday_weeks))
        for w in self.holiday_weeks:
            if not 0 <= w < self.horizon_weeks:
                raise ConfigError(f"holiday week {w} outside horizon {self.horizon_weeks}")

    @property
    def n_patches(self) -> int:
        return len(self.censuses)

    @property
    def steps_per_day(self) -> int:
        return round(1.0 / self.dt)

    def district_index(self, district_id: str) -> int:
        for k, census in enumerate(self.censuses):
            if census.district_id == district_id:
                return k
        raise ConfigError(f"unknown district id {district_id!r}")

    def single_district(self, patch: int, **overrides) -> "ModelConfig":
        """Extract one district as an isolated single-patch config."""
        census = self.censuses[patch]
        kwargs = dict(
            censuses=(census,),
            mobility=np.zeros((1, 1)),
            seed_patch=0,
        )
        kwargs.update(overrides)
        return replace(self, **kwargs)


def from_synthetic(spec: datagen.SyntheticSpec, seed: int, **overrides) -> ModelConfig:
    """Build a config directly from the synthetic generator (no files)."""
    data = datagen.generate(spec, seed)
    return ModelConfig(
        censuses=tuple(data.censuses),
        mobility=data.mobility,
        term=data.term,
        holiday=data.holiday,
        **overrides,
    )


_MODEL_KEYS = {
    "r0", "gamma", "zeta", "mu_scale", "mu", "beta", "dt", "horizon_weeks",
    "seed_patch", "initial_infected", "arrival_inoculum", "holiday_weeks",
}
_SYNTH_KEYS = {
    "districts", "pop_median", "pop_sigma", "age_concentration",
    "density", "flux_mean", "area_km",
}


def load_config(path) -> tuple[ModelConfig, dict]:
    """Load a JSON config file.

    Exactly one of ``data`` (paths to census/mobility/contacts files) or
    ``synthetic`` (generator parameters plus a ``seed``) must be present.
    Returns the ModelConfig plus the remaining experiment keys (controlled
    districts or community id, budget, output directory, ...).
    """
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")

    has_data = "data" in raw
    has_synth = "synthetic" in raw
    if has_data == has_synth:
        raise ConfigError("config must contain exactly one of 'data' or 'synthetic'")

    kwargs = {}
    for key in _MODEL_KEYS & raw.keys():
        kwargs[key] = raw[key]
    if "holiday_weeks" in kwargs and kwargs["holiday_weeks"] is not None:
        kwargs["holiday_weeks"] = tuple(kwargs["holiday_weeks"])

    if has_synth:
        synth = dict(raw["synthetic"])
        seed = synth.pop("seed", 0)
        unknown = set(synth) - _SYNTH_KEYS
        if unknown:
            raise ConfigError(f"unknown synthetic keys: {sorted(unknown)}")
        try:
            spec = datagen.SyntheticSpec(**synth)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad synthetic spec: {exc}") from exc
        config = from_synthetic(spec, seed, **kwargs)
    else:
        data = raw["data"]
        for key in ("census", "mobility", "contacts"):
            if key not in data:
                raise ConfigError(f"'data' section is missing the {key!r} path")
        base = path.parent
        from epimdp.census import load_census_csv  # deferred: census imports core only
        from epimdp.metapop import load_mobility_csv

        censuses = load_census_csv(base / data["census"])
        ids, mobility = load_mobility_csv(base / data["mobility"])
        by_id = {c.district_id: c for c in censuses}
        missing = [i for i in ids if i not in by_id]
        if missing:
            raise ConfigError(f"mobility file references unknown districts: {missing[:5]}")
        term, holiday = load_contact_matrices(base / data["contacts"])
        config = ModelConfig(
            censuses=tuple(by_id[i] for i in ids),
            mobility=mobility,
            term=term,
            holiday=holiday,
            **kwargs,
        )

    extras = {k: v for k, v in raw.items() if k not in _MODEL_KEYS | {"data", "synthetic"}}
    return config, extras


def config_digest(config: ModelConfig) -> str:
    """Stable hash of a config, used in run manifests."""
    payload = {
        "censuses": [[c.district_id, c.counts.tolist()] for c in config.censuses],
        "mobility": np.asarray(config.mobility).tolist(),
        "term": config.term.values.tolist(),
        "holiday": config.holiday.values.tolist(),
    }
    for key in sorted(_MODEL_KEYS):
        value = getattr(config, key)
        payload[key] = list(value) if isinstance(value, tuple) else value
    blob = json.dumps(payload, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]
