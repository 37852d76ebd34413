"""Flat INI-style experiment configuration.

Sections [model], [portfolio], [payoff], [numerics], [outputs]; vectors and
matrices are bracketed JSON-style lists.  Volatility structure is given either
as per-asset vols plus a correlation matrix (factored internally), an explicit
loading matrix, or one of the seeded generators used by the shipped presets:

    correlation = random(seed=3, base=0.2)      # noisy correlation, eigenvalue-clipped
    sigma = upper_random(diag=20, seed=5)       # Bachelier upper-triangular mixing
    weights = random(seed=7, total=25)          # uniform [1/2, 3/2], rescaled to sum
"""

from __future__ import annotations

import configparser
import hashlib
import io
import json
import re
from dataclasses import dataclass, field, asdict

import numpy as np

from .model import ModelKind, ModelSpec, Portfolio, PutPayoff, correlation_to_sigma
from .rng import derive_seed

_GEN_RE = re.compile(r"^\s*(\w+)\s*\((.*)\)\s*$")


class ConfigError(ValueError):
    """Malformed or inconsistent experiment configuration."""


def _parse_generator(text: str):
    m = _GEN_RE.match(text)
    if not m:
        return None
    name, args = m.group(1), m.group(2)
    kwargs = {}
    for part in args.split(","):
        part = part.strip()
        if not part:
            continue
        if "=" not in part:
            raise ConfigError(f"generator argument {part!r} must be key=value")
        k, v = part.split("=", 1)
        kwargs[k.strip()] = float(v) if "." in v or "e" in v.lower() else int(v)
    return name, kwargs


def _parse_list(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"cannot parse list value {text!r}") from exc


@dataclass
class ExperimentConfig:
    """Parsed experiment description; build() turns it into model objects."""

    # model (required)
    kind: str = ""
    r: float = 0.0
    T: float = 0.0
    x0: list = field(default_factory=list)
    vols: list | None = None
    correlation: list | str | None = None
    sigma: list | str | None = None
    # portfolio (required)
    weights: list | str = ""
    # payoff
    strikes: list = field(default_factory=list)
    # numerics
    nt_tiers: list = field(default_factory=lambda: [512, 1024, 2048, 4096])
    c_coupling: float = 16.0
    m_paths: int = 100_000
    m_pilot: int = 100
    pilot_steps: int = 512
    surface_degree: int = 3
    surface_slices: int = 16
    surface_abscissae: int = 24
    surface_floor: float | str = "auto"
    expansion_coords: str = "auto"
    newton_tol: float = 1e-10
    newton_max_iter: int = 50
    ci_level: float = 0.95
    seed: int = 1
    # outputs
    out_dir: str = ""
    export_value_grids: bool = False
    appendix_check: bool = False

    def validate(self) -> None:
        if self.kind not in ("bachelier", "black-scholes"):
            raise ConfigError(f"model kind must be bachelier or black-scholes, got {self.kind!r}")
        if not self.x0:
            raise ConfigError("model x0 is required")
        if not self.T > 0:
            raise ConfigError("model T must be positive")
        if not self.weights:
            raise ConfigError("portfolio weights are required")
        if not self.strikes:
            raise ConfigError("at least one strike is required")
        tiers = list(self.nt_tiers)
        if any(b <= a for a, b in zip(tiers, tiers[1:])):
            raise ConfigError("nt_tiers must be strictly increasing")
        if self.sigma is None and self.vols is None:
            raise ConfigError("provide either sigma or vols+correlation")
        if self.vols is not None and self.correlation is None:
            raise ConfigError("vols given without a correlation matrix")

    # -- realized objects ---------------------------------------------------

    def build_model(self) -> ModelSpec:
        self.validate()
        kind = ModelKind(self.kind)
        x0 = np.array(self.x0, dtype=float)
        d = x0.size
        if self.sigma is not None:
            sig = self._build_sigma(d)
        else:
            vols = np.array(self.vols, dtype=float)
            corr = self._build_correlation(d)
            if vols.size != d:
                raise ConfigError(f"{vols.size} vols for {d} assets")
            sig = correlation_to_sigma(vols, corr)
        try:
            return ModelSpec(kind=kind, r=self.r, sigma=sig, x0=x0, T=self.T)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def build_portfolio(self) -> Portfolio:
        if isinstance(self.weights, str):
            gen = _parse_generator(self.weights)
            if gen is None:
                raise ConfigError(f"cannot parse weights {self.weights!r}")
            name, kw = gen
            if name != "random":
                raise ConfigError(f"unknown weights generator {name!r}")
            d = len(self.x0)
            total = float(kw.get("total", d))
            rng = np.random.Generator(np.random.Philox(key=derive_seed(int(kw["seed"]), "weights")))
            w = rng.uniform(0.5, 1.5, size=d)
            w *= total / w.sum()
            return Portfolio(w)
        return Portfolio(np.array(self.weights, dtype=float))

    def build_payoffs(self) -> list[PutPayoff]:
        return [PutPayoff(float(k)) for k in self.strikes]

    def floor_value(self, model: ModelSpec, p: Portfolio) -> float | None:
        if self.surface_floor == "auto":
            return None
        return float(self.surface_floor)

    def coords_value(self):
        return None if self.expansion_coords == "auto" else self.expansion_coords

    def _build_sigma(self, d: int) -> np.ndarray:
        if isinstance(self.sigma, str):
            gen = _parse_generator(self.sigma)
            if gen is None:
                raise ConfigError(f"cannot parse sigma {self.sigma!r}")
            name, kw = gen
            if name != "upper_random":
                raise ConfigError(f"unknown sigma generator {name!r}")
            rng = np.random.Generator(np.random.Philox(key=derive_seed(int(kw["seed"]), "sigma")))
            sig = np.diag(np.full(d, float(kw["diag"])))
            iu = np.triu_indices(d, 1)
            sig[iu] = rng.standard_normal(iu[0].size)
            return sig
        sig = np.array(self.sigma, dtype=float)
        if sig.shape[0] != d:
            raise ConfigError(f"sigma has {sig.shape[0]} rows for {d} assets")
        return sig

    def _build_correlation(self, d: int) -> np.ndarray:
        if isinstance(self.correlation, str):
            gen = _parse_generator(self.correlation)
            if gen is None:
                raise ConfigError(f"cannot parse correlation {self.correlation!r}")
            name, kw = gen
            if name != "random":
                raise ConfigError(f"unknown correlation generator {name!r}")
            return random_correlation(d, int(kw["seed"]), float(kw.get("base", 0.2)))
        corr = np.array(self.correlation, dtype=float)
        if corr.shape != (d, d):
            raise ConfigError(f"correlation shape {corr.shape} for {d} assets")
        return corr


def random_correlation(d: int, seed: int, base: float, clip: float = 1e-3) -> np.ndarray:
    """Identity plus symmetric off-diagonal noise, projected to a correlation matrix.

    Eigenvalues are clipped at `clip` before renormalizing the diagonal to one.
    """
    rng = np.random.Generator(np.random.Philox(key=derive_seed(seed, "correlation")))
    a = rng.standard_normal((d, d))
    noise = base * 0.5 * (a + a.T)
    np.fill_diagonal(noise, 0.0)
    c = np.eye(d) + noise
    ev, vec = np.linalg.eigh(c)
    c = (vec * np.maximum(ev, clip)) @ vec.T
    dinv = 1.0 / np.sqrt(np.diag(c))
    c = c * np.outer(dinv, dinv)
    np.fill_diagonal(c, 1.0)
    return 0.5 * (c + c.T)


# -- text round trip ---------------------------------------------------------

_SECTIONS = {
    "model": ["kind", "r", "T", "x0", "vols", "correlation", "sigma"],
    "portfolio": ["weights"],
    "payoff": ["strikes"],
    "numerics": ["nt_tiers", "c_coupling", "m_paths", "m_pilot", "pilot_steps",
                 "surface_degree", "surface_slices", "surface_abscissae",
                 "surface_floor", "expansion_coords", "newton_tol",
                 "newton_max_iter", "ci_level", "seed"],
    "outputs": ["out_dir", "export_value_grids", "appendix_check"],
}

_LIST_KEYS = {"x0", "vols", "correlation", "sigma", "weights", "strikes", "nt_tiers"}
_INT_KEYS = {"m_paths", "m_pilot", "pilot_steps", "surface_degree", "surface_slices",
             "surface_abscissae", "newton_max_iter", "seed"}
_FLOAT_KEYS = {"r", "T", "c_coupling", "newton_tol", "ci_level"}
_BOOL_KEYS = {"appendix_check", "export_value_grids"}


def parse_config(text: str) -> ExperimentConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#",))
    cp.optionxform = str  # keys are case-sensitive (T vs t)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config: {exc}") from exc
    cfg = ExperimentConfig()
    known = {k: sec for sec, keys in _SECTIONS.items() for k in keys}
    for sec in cp.sections():
        if sec not in _SECTIONS:
            raise ConfigError(f"unknown section [{sec}]")
        for key, raw in cp.items(sec):
            if key not in known or known[key] != sec:
                raise ConfigError(f"unknown key {key!r} in section [{sec}]")
            setattr(cfg, key, _parse_value(key, raw.strip()))
    cfg.validate()
    return cfg


def _parse_value(key: str, raw: str):
    if key in _LIST_KEYS:
        if raw.startswith("["):
            return _parse_list(raw)
        return raw  # generator expression or symbolic value
    if key in _INT_KEYS:
        return int(raw)
    if key in _FLOAT_KEYS:
        return float(raw)
    if key in _BOOL_KEYS:
        return raw.lower() in ("1", "true", "yes")
    if key == "surface_floor":
        return raw if raw == "auto" else float(raw)
    return raw


def serialize_config(cfg: ExperimentConfig) -> str:
    out = io.StringIO()
    values = asdict(cfg)
    for sec, keys in _SECTIONS.items():
        lines = []
        for key in keys:
            val = values[key]
            if val is None or val == "" or (key in _BOOL_KEYS and not val):
                continue
            lines.append(f"{key} = {_format_value(val)}")
        if lines:
            out.write(f"[{sec}]\n")
            out.write("\n".join(lines))
            out.write("\n\n")
    return out.getvalue()


def _format_value(val) -> str:
    if isinstance(val, bool):
        return "true" if val else "false"
    if isinstance(val, (list, tuple)):
        return json.dumps(val)
    return str(val)


def config_hash(cfg: ExperimentConfig) -> str:
    return hashlib.sha256(serialize_config(cfg).encode("utf-8")).hexdigest()[:16]


def load_config(path) -> ExperimentConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return parse_config(fh.read())
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
