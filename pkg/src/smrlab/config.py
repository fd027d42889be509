"""
Experiment configuration: a flat dataclass loaded from TOML.

Example::

    experiment = "converge"
    dim = 1
    levels = [3, 4, 5, 6]
    reference_level = 8
    p = 4.0
    q = 4.0
    alpha = [0.25, 0.0]
    [noise]
    profiles = ["sin(1)", "sin(2)", "sin(3)"]
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Optional

try:                                   # Python >= 3.11
    import tomllib as _toml
except ModuleNotFoundError:            # pragma: no cover - depends on interpreter
    import tomli as _toml

from .errors import ConfigurationError
from .fields import parse_field
from .spde import EXP_EULER, IMPLICIT_EULER, NoiseModel

__all__ = ["EXPERIMENTS", "NoiseSpec", "ExperimentConfig", "load_config", "default_config"]

EXPERIMENTS = ("converge", "uniformity", "calculus_check", "smr", "oracle")


@dataclass(frozen=True)
class NoiseSpec:
    """Noise profiles by catalog id plus an optional piecewise constant ``psi``."""

    profiles: tuple = ("sin(1)", "sin(2)", "sin(3)")
    psi_breaks: Optional[tuple] = None
    psi_values: Optional[tuple] = None

    @property
    def N(self) -> int:
        return len(self.profiles)

    def build(self, dim: int, scale: float = 1.0) -> NoiseModel:
        prof = tuple(scale * parse_field(s, dim) for s in self.profiles)
        return NoiseModel(prof, self.psi_breaks, self.psi_values)


@dataclass(frozen=True)
class ExperimentConfig:
    """Parameters of one experiment run.

    Keys not used by an experiment are ignored by it. ``alpha`` lists the
    exponents of the negative-norm sup errors (``converge``) or of the
    fractional-power consistency checks (``calculus_check``).
    ``consistency_z`` lists resolvent points as ``(modulus, argument / pi)``
    pairs; the default is ``z = -1`` and ``z = 1e3 exp(3 pi i / 4)``.
    """

    experiment: str = "converge"
    dim: int = 1
    levels: tuple = (3, 4, 5, 6)
    reference_level: int = 8
    p: float = 4.0
    q: float = 4.0
    alpha: tuple = (0.25, 0.0)
    theta: float = math.pi / 4
    T: float = 1.0
    n_steps: int = 512
    M_paths: int = 64
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    seed: int = 20240611
    output_dir: str = "out"
    scheme: str = EXP_EULER
    q_list: tuple = (2.0, 4.0)
    bip_t: tuple = (1.0, 2.0, 4.0)
    z_radii: tuple = (0.1, 1.0, 10.0, 1e3, 1e5)
    restarts: int = 8
    taus: tuple = (1 / 64, 1 / 128, 1 / 256)
    mr_levels: tuple = (3, 4, 5, 6)
    nodes: tuple = (16, 32, 64)
    dunford_levels: tuple = (2, 4, 6)
    consistency_z: tuple = ((1.0, 1.0), (1e3, 0.75))
    threads: int = 1

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigurationError(f"unknown experiment {self.experiment!r}")
        if self.dim not in (1, 2, 3):
            raise ConfigurationError("dim must be 1, 2 or 3")
        if not self.levels or list(self.levels) != sorted(set(self.levels)):
            raise ConfigurationError("levels must be strictly ascending")
        if min(self.levels) < 0:
            raise ConfigurationError("levels must be >= 0")
        if self.experiment == "converge" and self.reference_level <= max(self.levels):
            raise ConfigurationError("reference_level must exceed every level")
        if self.p < 1 or self.q < 1:
            raise ConfigurationError("p and q must be >= 1")
        if not (0 < self.theta < math.pi / 2):
            raise ConfigurationError("theta must lie in (0, pi/2)")
        if self.T <= 0 or self.n_steps < 1 or self.M_paths < 1 or self.restarts < 1:
            raise ConfigurationError("T, n_steps, M_paths and restarts must be positive")
        if self.scheme not in (EXP_EULER, IMPLICIT_EULER):
            raise ConfigurationError(f"unknown scheme {self.scheme!r}")
        if self.threads < 1:
            raise ConfigurationError("threads must be >= 1")
        if self.noise.N < 1:
            raise ConfigurationError("noise needs at least one profile")
        self.noise.build(self.dim)          # validates profile ids and the psi schedule

    def scope_notes(self) -> list:
        """Which parameters fall outside the ranges covered by the theory."""
        notes = []
        if not self.p > 2:
            notes.append(f"p = {self.p} is outside (2, inf)")
        if not self.q >= 2:
            notes.append(f"q = {self.q} is outside [2, inf)")
        for a in self.alpha:
            if self.experiment == "converge" and not (0 <= a <= 1 / self.p):
                notes.append(f"alpha = {a} is outside [0, 1/p]")
        return notes

    def replace(self, **kw) -> "ExperimentConfig":
        return dataclasses.replace(self, **kw)

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


_TUPLE_KEYS = ("levels", "alpha", "q_list", "bip_t", "z_radii", "taus", "mr_levels", "nodes",
               "dunford_levels")


def _coerce(d: dict) -> dict:
    known = {f.name for f in dataclasses.fields(ExperimentConfig)}
    unknown = set(d) - known
    if unknown:
        raise ConfigurationError(f"unknown configuration keys: {sorted(unknown)}")
    out = dict(d)
    for k in _TUPLE_KEYS:
        if k in out:
            v = out[k]
            out[k] = tuple(v) if isinstance(v, (list, tuple)) else (v,)
    if "consistency_z" in out:
        out["consistency_z"] = tuple(tuple(float(a) for a in pair) for pair in out["consistency_z"])
    if "noise" in out and isinstance(out["noise"], dict):
        n = dict(out["noise"])
        bad = set(n) - {"profiles", "psi_breaks", "psi_values"}
        if bad:
            raise ConfigurationError(f"unknown noise keys: {sorted(bad)}")
        for k in list(n):
            if n[k] is not None:
                n[k] = tuple(n[k])
        out["noise"] = NoiseSpec(**n)
    return out


def default_config(experiment: str, **overrides) -> ExperimentConfig:
    """Defaults for one experiment, with keyword overrides."""
    base = _DEFAULTS.get(experiment, {})
    return ExperimentConfig(**_coerce({"experiment": experiment, **base, **overrides}))


def load_config(path=None, experiment: Optional[str] = None, **overrides) -> ExperimentConfig:
    """Read a TOML file (optional) and apply overrides.

    The experiment named on the command line wins over the file's key, and
    defaults for that experiment fill the remaining keys.
    """
    data = {}
    if path is not None:
        try:
            with open(path, "rb") as fh:
                data = _toml.load(fh)
        except OSError as exc:
            raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
        except _toml.TOMLDecodeError as exc:
            raise ConfigurationError(f"invalid TOML in {path}: {exc}") from exc
    exp = experiment or data.get("experiment", "converge")
    data.pop("experiment", None)
    try:
        return default_config(exp, **{**data, **overrides})
    except TypeError as exc:
        raise ConfigurationError(str(exc)) from exc


# per-experiment defaults reproduce the standard runs
_DEFAULTS = {
    "converge": dict(dim=1, levels=(3, 4, 5, 6), reference_level=8, M_paths=64, n_steps=512,
                     alpha=(0.25, 0.0)),
    "uniformity": dict(dim=1, levels=(3, 4, 5, 6, 7), q=4.0),
    "calculus_check": dict(dim=1, levels=(4, 5, 6, 7), reference_level=10,
                           alpha=(0.25, 0.5, 1.0)),
    "smr": dict(dim=1, levels=(3, 4, 5), M_paths=128, n_steps=256),
    "oracle": dict(dim=1, levels=(3,), M_paths=10000, n_steps=1024),
}
