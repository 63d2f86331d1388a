"""Run configuration: strict JSON parsing and seed derivation.

Every key is required except ``base_seed`` (default 0) and the per-component
seeds ``gen.seed`` and ``sim.seed``, which are derived from ``base_seed`` when
absent. Unknown keys are errors.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace
from importlib import resources
from pathlib import Path
from typing import Any, Mapping

from fairlend.datagen import GenConfig
from fairlend.errors import ConfigError
from fairlend.experiments import ScenarioGrid
from fairlend.longterm import PolicyRecipe, SimulationConfig
from fairlend.metrics import EconomicParams, WeightSpec
from fairlend.model import TrainHyperparams

LABEL_SOURCES = ("true", "observed")
IMPACT_SCHEMAS = ("unaware", "baseline")
_U64 = 2**64


def derive_seed(base_seed: int, key: str) -> int:
    """Stable 64-bit seed for a named task; independent of Python's hash seed."""
    digest = hashlib.blake2b(f"{base_seed}:{key}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little")


@dataclass(frozen=True)
class AnalysisConfig:
    threshold_step: float = 0.01
    profit_weights: tuple[float, ...] = (0.3, 0.5, 0.7, 0.9)
    eo_labels: str = "observed"
    impact_schema: str = "unaware"
    impact_threshold: float = 0.5
    simulate_recipes: tuple[str, ...] = ("baseline", "demographic_parity:race")

    def __post_init__(self) -> None:
        object.__setattr__(self, "profit_weights", tuple(float(w) for w in self.profit_weights))
        object.__setattr__(self, "simulate_recipes", tuple(self.simulate_recipes))
        if not 0.0 < self.threshold_step <= 0.5:
            raise ConfigError("analysis.threshold_step", "must lie in (0, 0.5]")
        if not self.profit_weights:
            raise ConfigError("analysis.profit_weights", "must be nonempty")
        for w in self.profit_weights:
            if not 0.0 <= w <= 1.0:
                raise ConfigError("analysis.profit_weights", f"weight {w} outside [0, 1]")
        if self.eo_labels not in LABEL_SOURCES:
            raise ConfigError("analysis.eo_labels", f"must be one of {LABEL_SOURCES}")
        if self.impact_schema not in IMPACT_SCHEMAS:
            raise ConfigError("analysis.impact_schema", f"must be one of {IMPACT_SCHEMAS}")
        if not 0.0 <= self.impact_threshold <= 1.0:
            raise ConfigError("analysis.impact_threshold", "must lie in [0, 1]")
        if not self.simulate_recipes:
            raise ConfigError("analysis.simulate_recipes", "must be nonempty")
        for text in self.simulate_recipes:
            try:
                PolicyRecipe.parse(text)
            except ValueError as exc:
                raise ConfigError("analysis.simulate_recipes", str(exc)) from None

    @property
    def weights(self) -> tuple[WeightSpec, ...]:
        return tuple(WeightSpec(w) for w in self.profit_weights)


@dataclass(frozen=True)
class RunConfig:
    gen: GenConfig = field(default_factory=GenConfig)
    split_fraction: float = 0.7
    hp: TrainHyperparams = field(default_factory=TrainHyperparams)
    econ_default: EconomicParams = field(default_factory=EconomicParams)
    grid: ScenarioGrid = field(default_factory=ScenarioGrid)
    sim: SimulationConfig = field(default_factory=SimulationConfig)
    analysis: AnalysisConfig = field(default_factory=AnalysisConfig)
    eval_labels: str = "true"
    output_dir: str = "out"
    base_seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 < self.split_fraction < 1.0:
            raise ConfigError("split_fraction", "must lie strictly between 0 and 1")
        if self.eval_labels not in LABEL_SOURCES:
            raise ConfigError("eval_labels", f"must be one of {LABEL_SOURCES}")
        if not isinstance(self.base_seed, int) or isinstance(self.base_seed, bool) or not 0 <= self.base_seed < _U64:
            raise ConfigError("base_seed", "must be an unsigned 64-bit integer")
        if not isinstance(self.output_dir, str) or not self.output_dir:
            raise ConfigError("output_dir", "must be a nonempty path")

    @property
    def split_seed(self) -> int:
        return derive_seed(self.base_seed, "split")

    def with_overrides(
        self, *, seed: int | None = None, out: str | None = None, labels: str | None = None
    ) -> RunConfig:
        """Apply command-line overrides; a new ``seed`` also re-derives the component seeds."""
        cfg = self
        if seed is not None:
            cfg = _reseed(replace(cfg, base_seed=seed))
        if out is not None:
            cfg = replace(cfg, output_dir=out)
        if labels is not None:
            cfg = replace(cfg, eval_labels=labels)
        return cfg

    def to_dict(self) -> dict:
        return {
            "gen": self.gen.to_dict(),
            "split_fraction": self.split_fraction,
            "hp": asdict(self.hp),
            "econ_default": asdict(self.econ_default),
            "grid": self.grid.to_dict(),
            "sim": {
                "n_cycles": self.sim.n_cycles,
                "credit_improvement": self.sim.credit_improvement,
                "retrain_each_cycle": self.sim.retrain_each_cycle,
                "econ": asdict(self.sim.econ),
                "seed": self.sim.seed,
            },
            "analysis": {
                "threshold_step": self.analysis.threshold_step,
                "profit_weights": list(self.analysis.profit_weights),
                "eo_labels": self.analysis.eo_labels,
                "impact_schema": self.analysis.impact_schema,
                "impact_threshold": self.analysis.impact_threshold,
                "simulate_recipes": list(self.analysis.simulate_recipes),
            },
            "eval_labels": self.eval_labels,
            "output_dir": self.output_dir,
            "base_seed": self.base_seed,
        }

    def digest(self) -> str:
        """SHA-256 of the canonical JSON form of the resolved config.

        ``output_dir`` is excluded: where results land does not change them.
        """
        content = {k: v for k, v in self.to_dict().items() if k != "output_dir"}
        canonical = json.dumps(content, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode()).hexdigest()


def _reseed(cfg: RunConfig) -> RunConfig:
    return replace(
        cfg,
        gen=replace(cfg.gen, seed=derive_seed(cfg.base_seed, "gen")),
        sim=replace(cfg.sim, seed=derive_seed(cfg.base_seed, "sim")),
    )


def _section(data: Mapping, key: str, path: str = "") -> Mapping:
    full = f"{path}{key}"
    if key not in data:
        raise ConfigError(full, "missing required key")
    value = data[key]
    if not isinstance(value, Mapping):
        raise ConfigError(full, "must be an object")
    return value


def _strict(data: Mapping, allowed: set[str], required: set[str], path: str) -> None:
    prefix = f"{path}." if path else ""
    unknown = sorted(set(data) - allowed)
    if unknown:
        raise ConfigError(f"{prefix}{unknown[0]}", "unknown key")
    missing = sorted(required - set(data))
    if missing:
        raise ConfigError(f"{prefix}{missing[0]}", "missing required key")


def _build(cls, data: Mapping, path: str, optional: set[str] = frozenset(), **extra):
    names = {f.name for f in fields(cls)} - set(extra)
    _strict(data, names, names - set(optional), path)
    try:
        return cls(**dict(data), **extra)
    except ConfigError as exc:
        field_name = exc.field if exc.field.startswith(f"{path}.") else f"{path}.{exc.field}"
        raise ConfigError(field_name, exc.message) from None
    except (TypeError, ValueError) as exc:
        raise ConfigError(path, str(exc)) from None


def parse_run_config(data: Any) -> RunConfig:
    if not isinstance(data, Mapping):
        raise ConfigError("<root>", "config must be a JSON object")
    top = {f.name for f in fields(RunConfig)}
    _strict(data, top, top - {"base_seed"}, "")
    base_seed = data.get("base_seed", 0)
    if not isinstance(base_seed, int) or isinstance(base_seed, bool) or not 0 <= base_seed < _U64:
        raise ConfigError("base_seed", "must be an unsigned 64-bit integer")

    gen_data = dict(_section(data, "gen"))
    gen_data.setdefault("seed", derive_seed(base_seed, "gen"))
    gen = _build(GenConfig, gen_data, "gen")

    sim_data = dict(_section(data, "sim"))
    sim_data.setdefault("seed", derive_seed(base_seed, "sim"))
    sim_econ = _build(EconomicParams, _section(sim_data, "econ", "sim."), "sim.econ")
    sim_data.pop("econ")
    sim = _build(SimulationConfig, sim_data, "sim", econ=sim_econ)

    try:
        return RunConfig(
            gen=gen,
            split_fraction=_number(data["split_fraction"], "split_fraction"),
            hp=_build(TrainHyperparams, _section(data, "hp"), "hp"),
            econ_default=_build(EconomicParams, _section(data, "econ_default"), "econ_default"),
            grid=_build(ScenarioGrid, _section(data, "grid"), "grid"),
            sim=sim,
            analysis=_build(AnalysisConfig, _section(data, "analysis"), "analysis"),
            eval_labels=data["eval_labels"],
            output_dir=data["output_dir"],
            base_seed=base_seed,
        )
    except TypeError as exc:
        raise ConfigError("<root>", str(exc)) from None


def _number(value: Any, name: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(name, "must be a number")
    return float(value)


def load_run_config(path: str | Path | None = None) -> RunConfig:
    """Parse a config file, or the shipped default config when ``path`` is None."""
    if path is None:
        text = resources.files("fairlend").joinpath("default_config.json").read_text()
        source = "default_config.json"
    else:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError("--config", f"cannot read {path}: {exc.strerror}") from None
        source = str(path)
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("<root>", f"{source} is not valid JSON: {exc.msg} at line {exc.lineno}") from None
    return parse_run_config(data)
