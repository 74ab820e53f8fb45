"""TOML run configuration.

Relative paths are resolved against the directory of the config file.
See ``configs/run.toml`` in the repository for a complete file.
"""
from __future__ import annotations

import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .data import SimSpec
from .impute import PmmMethod
from .prior import PriorSpec, flat_mean_prior
from .sampler import ChainConfig


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    data: Path
    p: int | None
    d: int | None
    prior: dict
    mcmc: ChainConfig
    methods: list[PmmMethod]
    level: float = 0.95
    out: Path = Path("out")
    emit: dict = field(default_factory=lambda: {"draws": False, "replicates": False,
                                                "diagnostics": True})

    def build_prior(self, p: int, q: int) -> PriorSpec:
        return build_prior(self.prior, p, q)


def _matrix(block: dict, key: str, base: Path, shape):
    if key in block:
        return np.array(block[key], dtype=float).reshape(shape)
    if f"{key}_csv" in block:
        return np.loadtxt(base / block[f"{key}_csv"], delimiter=",", ndmin=2).reshape(shape)
    return np.zeros(shape)


def build_prior(block: dict, p: int, q: int, base: Path = Path(".")) -> PriorSpec:
    kind = block.get("kind", "jeffreys")
    nu0 = float(block.get("nu0", 0.0))
    if kind == "jeffreys":
        return flat_mean_prior(p, q, nu0=nu0)
    if kind == "custom":
        base = Path(block.get("_base", base))
        return PriorSpec(
            A=_matrix(block, "A", base, (p, p)),
            nu0=nu0,
            alpha0=_matrix(block, "alpha0", base, (p, q)),
            M=_matrix(block, "M", base, (q, q)),
        )
    raise ConfigError(f"prior.kind must be 'jeffreys' or 'custom', got {kind!r}")


def parse_method(entry: dict) -> PmmMethod:
    entry = dict(entry)
    tag = entry.pop("type", None) or entry.pop("tag", None)
    if tag is None:
        raise ConfigError(f"method entry without 'type': {entry}")
    flags = entry.pop("mcr_flags", None)
    try:
        return PmmMethod(
            tag=tag,
            phi=entry.pop("phi", None),
            delta=entry.pop("delta", None),
            variant=entry.pop("variant", None),
            mcr_flags=flags,
            name=entry.pop("name", None),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def read_toml(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    with path.open("rb") as fh:
        try:
            return tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None


def load_run_config(path) -> RunConfig:
    path = Path(path)
    raw = read_toml(path)
    base = path.parent
    if "data" not in raw:
        raise ConfigError("config needs a 'data' path")
    mc = raw.get("mcmc", {})
    try:
        chain = ChainConfig(
            n_draws=int(mc.get("m", mc.get("n_draws", 100))),
            burn_in=int(mc.get("burn_in", 10_000)),
            thin=int(mc.get("thin", 100)),
            seed=int(mc.get("seed", 0)),
            algorithm=str(mc.get("algorithm", "MDA")),
            augmented_scheme=str(mc.get("augmented_scheme", "fda")),
        )
    except ValueError as exc:
        raise ConfigError(f"mcmc: {exc}") from None
    methods = [parse_method(m) for m in raw.get("methods", [{"type": "MAR"}])]
    if not methods:
        raise ConfigError("at least one method is required")
    prior = dict(raw.get("prior", {"kind": "jeffreys"}))
    prior["_base"] = str(base)
    emit = {"draws": False, "replicates": False, "diagnostics": True}
    emit.update({k: bool(v) for k, v in raw.get("emit", {}).items()})
    level = float(raw.get("analysis", {}).get("level", 0.95))
    if not 0 < level < 1:
        raise ConfigError("analysis.level must lie in (0, 1)")
    return RunConfig(
        data=base / raw["data"],
        p=raw.get("p"),
        d=raw.get("d"),
        prior=prior,
        mcmc=chain,
        methods=methods,
        level=level,
        out=base / raw.get("out", "out"),
        emit=emit,
    )


def load_sim_spec(path) -> tuple[SimSpec, int | None]:
    raw = read_toml(path)
    try:
        spec = SimSpec(
            alpha=raw["alpha"],
            Sigma=raw["Sigma"],
            n_control=int(raw["n_control"]),
            n_active=int(raw["n_active"]),
            covariate_mean=raw.get("covariate_mean", []),
            covariate_sd=raw.get("covariate_sd", []),
            dropout=raw.get("dropout"),
            intermittent=float(raw.get("intermittent", 0.0)),
        )
    except KeyError as exc:
        raise ConfigError(f"simulation spec missing {exc.args[0]!r}") from None
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    seed = raw.get("seed")
    return spec, None if seed is None else int(seed)
