"""Experiment configuration: YAML files layered over the shipped reference preset."""
from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path
from typing import Any

import yaml

from rlcat.channel import LowSinrRegion, MnoProfile, RateModel, ScenarioConfig, default_scenario
from rlcat.harness import ConfigError, SimSettings, TraceSet
from rlcat.qlearn import RlParams
from rlcat.schemes import SCHEMES, ProbSchemeParams
from rlcat.trace import DIRECTIONS, GeoPosition

PRESETS = ("reference",)
# sections whose children are user-named rather than fixed keys
_OPEN_SECTIONS = {("profiles",)}


def load_preset(name: str = "reference") -> dict:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}")
    text = resources.files("rlcat").joinpath(f"presets/{name}.preset").read_text()
    return yaml.safe_load(text)


def _merge(base: dict, override: dict, path: tuple = ()) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        where = ".".join(map(str, path + (key,)))
        if path in _OPEN_SECTIONS:
            if not isinstance(value, dict):
                raise ConfigError(f"{where}: expected a mapping")
            out[key] = _merge(out.get(key, {}), value, path + (key,))
            continue
        if path and path[0] == "profiles" and len(path) == 2:
            if key not in DIRECTIONS:
                raise ConfigError(f"unknown key {where!r}")
            if not isinstance(value, dict):
                raise ConfigError(f"{where}: expected a mapping")
            # field-wise so a file can override a single value of a shipped profile
            out[key] = {**out.get(key, {}), **value}
            continue
        if key not in base:
            raise ConfigError(f"unknown key {where!r}")
        if isinstance(base[key], dict) and isinstance(value, dict):
            out[key] = _merge(base[key], value, path + (key,))
        else:
            out[key] = copy.deepcopy(value)
    return out


def _positions(raw, field_name):
    try:
        return tuple(GeoPosition(float(x), float(y)) for x, y in raw)
    except (TypeError, ValueError):
        raise ConfigError(f"{field_name}: expected a list of [x, y] pairs") from None


@dataclass(frozen=True)
class ExperimentConfig:
    raw: dict

    # ---- construction

    @classmethod
    def from_dict(cls, overrides: dict | None = None, preset: str = "reference") -> ExperimentConfig:
        raw = _merge(load_preset(preset), overrides or {})
        cfg = cls(raw)
        cfg.validate()
        return cfg

    def with_overrides(self, overrides: dict) -> ExperimentConfig:
        cfg = ExperimentConfig(_merge(self.raw, overrides))
        cfg.validate()
        return cfg

    def validate(self) -> None:
        """Build every typed object once so invariant violations surface with their field name."""
        self.profiles()
        for key in self.run_keys():
            self.profile(*key)
        for s in self.schemes:
            if s not in SCHEMES:
                raise ConfigError(f"schemes: unknown scheme {s!r}")
        for section in ("seed", "epochs"):
            if not isinstance(self.raw[section], int):
                raise ConfigError(f"{section}: expected an integer")
        if self.epochs < 1:
            raise ConfigError("epochs: must be >= 1")
        self.scenario()
        for key in self.run_keys():
            self.settings(*key)
        for w in self.raw["sweep"]["w_values"]:
            if not 0 <= w <= 1:
                raise ConfigError(f"sweep.w_values: w={w} outside [0, 1]")
        if self.raw["sweep"]["scheme"] not in ("rl-cat", "rl-pcat"):
            raise ConfigError("sweep.scheme: must be rl-cat or rl-pcat")
        if self.raw["blackspots"]["scheme"] not in SCHEMES:
            raise ConfigError("blackspots.scheme: unknown scheme")
        if not self.raw["blackspots"]["cell_width"] > 0:
            raise ConfigError("blackspots.cell_width: must be positive")
        pred = self.raw["predictor"]
        if pred["kind"] not in ("noisy_oracle", "tree_file"):
            raise ConfigError(f"predictor.kind: unknown kind {pred['kind']!r}")
        if (pred["kind"] == "tree_file") != (pred["tree_path"] is not None):
            raise ConfigError("predictor.tree_path: required iff kind is tree_file")

    # ---- accessors

    @property
    def seed(self) -> int:
        return self.raw["seed"]

    @property
    def epochs(self) -> int:
        return self.raw["epochs"]

    @property
    def schemes(self) -> list[str]:
        return list(self.raw["schemes"])

    @property
    def output_dir(self) -> Path:
        return Path(self.raw["output_dir"])

    def profiles(self) -> dict[tuple[str, str], MnoProfile]:
        out = {}
        for name, dirs in self.raw["profiles"].items():
            for direction, vals in dirs.items():
                try:
                    out[(str(name), direction)] = MnoProfile(str(name), direction, **vals)
                except TypeError as e:
                    raise ConfigError(f"profiles.{name}.{direction}: {e}") from None
                except ValueError as e:
                    raise ConfigError(f"profiles.{name}.{direction}: {e}") from None
        return out

    def profile(self, mno: str, direction: str) -> MnoProfile:
        try:
            return self.profiles()[(mno, direction)]
        except KeyError:
            raise ConfigError(f"runs: profile {mno}/{direction} is not defined") from None

    def run_keys(self) -> list[tuple[str, str]]:
        return [(str(r["mno"]), r["direction"]) for r in self.raw["runs"]]

    def scenario(self) -> ScenarioConfig:
        sc = dict(self.raw["scenario"])
        name = sc.pop("name")
        overrides: dict[str, Any] = {}
        for key, value in sc.items():
            if value is None:
                continue
            if key in ("enb_positions", "waypoints"):
                value = _positions(value, f"scenario.{key}")
            elif key == "low_sinr_regions":
                try:
                    value = tuple(LowSinrRegion(**r) for r in value)
                except TypeError as e:
                    raise ConfigError(f"scenario.low_sinr_regions: {e}") from None
            overrides[key] = value
        try:
            return default_scenario(name, **overrides)
        except ValueError as e:
            raise ConfigError(f"scenario: {e}") from None

    def trace_set(self) -> TraceSet:
        t = self.raw["traces"]
        if t["n_train"] < 1 or t["n_eval"] < 1:
            raise ConfigError("traces: n_train and n_eval must be >= 1")
        return TraceSet(self.scenario(), t["n_train"], t["n_eval"])

    def settings(self, mno: str, direction: str) -> SimSettings:
        profile = self.profile(mno, direction)
        rl = dict(self.raw["rl"])
        env = self.raw["environment"]
        pred = self.raw["predictor"]
        try:
            rl_params = RlParams(alpha=rl["alpha"], w=rl["w"], s_star=profile.s_star, s_max=profile.s_max,
                                 dt_max=rl["dt_max"], omega=rl["omega"], tau=rl["tau"], lam=rl["lam"])
        except ValueError as e:
            raise ConfigError(f"rl: {e}") from None
        try:
            cat = ProbSchemeParams(**self.raw["cat"])
            ml = dict(self.raw["ml_cat"])
            if ml["phi_max"] is None:
                ml["phi_max"] = profile.s_max
            ml_cat = ProbSchemeParams(**ml)
        except (TypeError, ValueError) as e:
            raise ConfigError(f"cat/ml_cat: {e}") from None
        if not rl["dt_bin_width"] >= 1:
            raise ConfigError("rl.dt_bin_width: must be >= 1")
        try:
            return SimSettings(
                profile=profile, rl=rl_params, periodic_interval=self.raw["periodic"]["interval"],
                cat=cat, ml_cat=ml_cat, gen_rate=env["gen_rate"],
                rate_model=RateModel(env["sinr_mid"], env["sinr_scale"], env["half_payload"]),
                env_noise_std=env["noise_std"], map_cell_width=rl["map_cell_width"],
                dt_bin_width=rl["dt_bin_width"], pos_noise_std=pred["pos_noise_std"],
                epsilon_greedy=rl["epsilon_greedy"], idle_update_on_tx=rl["idle_update_on_tx"],
                tx_update_on_idle=rl["tx_update_on_idle"],
                deferred_counterfactual=rl["deferred_counterfactual"],
                tree_path=pred["tree_path"] if pred["kind"] == "tree_file" else None)
        except ValueError as e:
            raise ConfigError(f"settings for {profile.key}: {e}") from None

    def digest(self) -> str:
        blob = json.dumps(self.raw, sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()


def load_config(path: str | Path | None = None, preset: str = "reference") -> ExperimentConfig:
    """Load a YAML config layered over ``preset``; with no path, the preset itself."""
    overrides = {}
    if path is not None:
        try:
            overrides = yaml.safe_load(Path(path).read_text()) or {}
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e}") from None
        except yaml.YAMLError as e:
            raise ConfigError(f"malformed config {path}: {e}") from None
        if not isinstance(overrides, dict):
            raise ConfigError("config file must be a mapping")
    return ExperimentConfig.from_dict(overrides, preset)


def override_seed(cfg: ExperimentConfig, seed: int) -> ExperimentConfig:
    return replace(cfg, raw={**cfg.raw, "seed": seed})
