"""Experiment configuration: a sectioned key = value file (TOML syntax).

Parsing is strict: unknown sections or keys fail with the offending
location named, and cross-section dimension consistency is checked before
anything runs. The serializer emits the same restricted subset the parser
accepts, so configurations round-trip exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

try:
    import tomllib as _toml
except ModuleNotFoundError:  # python < 3.11
    import tomli as _toml


class ConfigError(ValueError):
    """Invalid experiment configuration (bad key, value, or combination)."""


_SECTIONS = {
    "system": {"name", "mu", "n_x", "control_dim", "forcing"},
    "sampling": {"n_trajectories", "n_steps", "dt", "seed", "param_configs"},
    "dictionary": {"type", "observable", "n_psi", "hidden_widths", "residual",
                   "seed", "normalize"},
    "model": {"variant", "hidden_widths", "fixed_first_row", "max_degree", "seed"},
    "training": {"epochs", "batch_size", "learning_rate", "decay_patience",
                 "decay_factor", "ridge", "validation_fraction", "seed",
                 "tolerance", "dict_steps", "checkpoint_cadence",
                 "head_refit_every", "head_refit_samples"},
    "evaluation": {"n_trajectories", "n_steps", "seed", "param_configs",
                   "resubstitute", "nearest_neighbor"},
    "control": {"target_rows", "lam", "horizon", "n_total", "reference_levels",
                "reference_switch", "u_min", "u_max", "max_iter", "tol",
                "x0_constant"},
    "controllability": {"n_samples", "seed", "svd_threshold"},
    "sweep": None,  # free-form dotted keys -> value lists
}

_MODEL_VARIANTS = ("pknn", "m0", "m1-rbf", "m1-nn", "m2", "m3", "m4-rbf", "m4-nn")


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated view over the sectioned configuration mapping."""

    raw: dict

    def section(self, name: str, required=False) -> dict:
        if name not in self.raw:
            if required:
                raise ConfigError(f"missing required section [{name}]")
            return {}
        return self.raw[name]

    def get(self, section: str, key: str, default=None, required=False):
        sec = self.section(section, required=required and default is None)
        if key not in sec:
            if required:
                raise ConfigError(f"missing required key {section}.{key}")
            return default
        return sec[key]


def loads(text: str) -> ExperimentConfig:
    try:
        raw = _toml.loads(text)
    except _toml.TOMLDecodeError as exc:
        raise ConfigError(f"config syntax error: {exc}") from exc
    _validate(raw)
    return ExperimentConfig(raw=raw)


def load(path) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return loads(fh.read())


def _validate(raw: dict):
    for section, body in raw.items():
        if section not in _SECTIONS:
            raise ConfigError(f"unknown section [{section}]")
        if not isinstance(body, dict):
            raise ConfigError(f"[{section}] must be a table")
        allowed = _SECTIONS[section]
        if allowed is None:
            continue
        for key in body:
            if key not in allowed:
                raise ConfigError(f"unknown key {section}.{key}")
    if "system" in raw:
        name = raw["system"].get("name")
        if name not in ("duffing", "vdpm", "fhn", "kdv"):
            raise ConfigError(f"system.name must be one of duffing/vdpm/fhn/kdv, "
                              f"got {name!r}")
    if "model" in raw:
        variant = raw["model"].get("variant")
        if variant not in _MODEL_VARIANTS:
            raise ConfigError(f"model.variant must be one of {_MODEL_VARIANTS}, "
                              f"got {variant!r}")
    if "dictionary" in raw:
        dtype = raw["dictionary"].get("type", "trainable")
        if dtype not in ("trainable", "rbf", "prefix"):
            raise ConfigError(f"dictionary.type must be trainable/rbf/prefix, got {dtype!r}")


# -- serialization ----------------------------------------------------------------


def _format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, str):
        escaped = v.replace("\\", "\\\\").replace('"', '\\"')
        return f'"{escaped}"'
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_format_value(x) for x in v) + "]"
    raise ConfigError(f"cannot serialize value of type {type(v).__name__}")


def _format_key(k: str) -> str:
    if k.replace("_", "").replace("-", "").isalnum() and "." not in k:
        return k
    return _format_value(k)


def dumps(config: ExperimentConfig) -> str:
    lines = []
    for section, body in config.raw.items():
        lines.append(f"[{section}]")
        for key, value in body.items():
            lines.append(f"{_format_key(key)} = {_format_value(value)}")
        lines.append("")
    return "\n".join(lines)


# -- object builders ------------------------------------------------------------


def build_system(config: ExperimentConfig):
    from . import dynamics

    sec = config.section("system", required=True)
    name = sec["name"]
    if name == "duffing":
        return dynamics.Duffing()
    if name == "vdpm":
        return dynamics.VanDerPolMathieu(mu=float(sec.get("mu", 1.0)))
    if name == "fhn":
        return dynamics.FitzHughNagumo(n_x=int(sec.get("n_x", 10)),
                                       control_dim=int(sec.get("control_dim", 1)))
    if name == "kdv":
        return dynamics.ForcedKdV(n_x=int(sec.get("n_x", 128)),
                                  forcing=sec.get("forcing", "sin"))
    raise ConfigError(f"unknown system {name!r}")


def build_sampling(config: ExperimentConfig, section="sampling", seed_override=None):
    from .dynamics import SamplingSpec

    sec = config.section(section, required=True)
    seed = int(sec.get("seed", 0)) if seed_override is None else int(seed_override)
    try:
        return SamplingSpec(
            n_trajectories=int(sec["n_trajectories"]),
            n_steps=int(sec["n_steps"]),
            dt=float(sec["dt"]) if "dt" in sec else float(config.get("sampling", "dt", required=True)),
            seed=seed,
            param_configs=(int(sec["param_configs"]) if "param_configs" in sec else None),
        )
    except KeyError as exc:
        raise ConfigError(f"missing required key {section}.{exc.args[0]}") from None
    except ValueError as exc:
        raise ConfigError(f"[{section}]: {exc}") from None


def _observable_for(config: ExperimentConfig, system):
    from .dictionaries import IdentityObservable, KdvIntegralsObservable

    kind = config.get("dictionary", "observable", default=None)
    if kind is None:
        kind = "kdv_integrals" if system.name == "kdv" else "identity"
    if kind == "identity":
        return IdentityObservable(system.state_dim)
    if kind == "kdv_integrals":
        return KdvIntegralsObservable(system.state_dim)
    raise ConfigError(f"unknown dictionary.observable {kind!r}")


def build_dictionary(config: ExperimentConfig, system, dataset=None):
    """Construct the dictionary named by the config.

    ``dataset`` supplies normalization statistics and RBF center ranges;
    required for rbf dictionaries and for normalize = true.
    """
    from .dictionaries import PrefixDictionary, RbfDictionary, TrainableDictionary
    from .networks import NetworkSpec

    sec = config.section("dictionary", required=True)
    obs = _observable_for(config, system)
    dtype = sec.get("type", "trainable")
    variant = config.get("model", "variant", default="pknn")
    if variant == "m0":
        dtype = "prefix"

    if dtype == "prefix":
        return PrefixDictionary(obs)

    n_psi = int(sec.get("n_psi", 0))
    tail = n_psi - 1 - obs.n_y
    if tail < 1:
        raise ConfigError(f"dictionary.n_psi = {n_psi} leaves no room for a tail "
                          f"beyond the constant and {obs.n_y} observables")

    if dtype == "rbf":
        if dataset is None:
            raise ConfigError("rbf dictionaries need a dataset for center placement")
        return RbfDictionary.from_data(obs, dataset.states.reshape(-1, system.state_dim),
                                       n_centers=tail, seed=int(sec.get("seed", 0)))

    spec = NetworkSpec(system.state_dim, tuple(sec.get("hidden_widths", [64, 64])),
                       tail, residual=bool(sec.get("residual", True)))
    shift = scale = None
    if bool(sec.get("normalize", False)):
        if dataset is None:
            raise ConfigError("normalize = true needs a dataset for statistics")
        flat = dataset.states.reshape(-1, system.state_dim)
        scale = 1.0 / np.maximum(flat.std(axis=0), 1e-8)
    return TrainableDictionary(obs, spec, seed=int(sec.get("seed", 0)),
                               shift=shift, scale=scale)


def build_model(config: ExperimentConfig, system, dictionary):
    """Construct the operator model skeleton for gradient-trained variants."""
    from .operators import NetworkK

    sec = config.section("model", required=True)
    variant = sec.get("variant", "pknn")
    if variant == "pknn":
        return NetworkK.build(
            dictionary.n_psi, system.param_dim,
            tuple(sec.get("hidden_widths", [64])),
            fixed_first_row=bool(sec.get("fixed_first_row", True)),
            seed=int(sec.get("seed", 0)),
        )
    return None  # least-squares and alternating variants are built by fitting


def build_training(config: ExperimentConfig, seed_override=None):
    from .training import TrainingConfig

    sec = dict(config.section("training"))
    if seed_override is not None:
        sec["seed"] = int(seed_override)
    try:
        return TrainingConfig(**sec)
    except TypeError as exc:
        raise ConfigError(f"[training]: {exc}") from None
    except ValueError as exc:
        raise ConfigError(f"[training]: {exc}") from None
