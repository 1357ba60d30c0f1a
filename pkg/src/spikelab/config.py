"""Line-oriented run configuration: `[section]` headers and `key = value`.

Unknown sections or keys are hard errors; reproducibility beats leniency.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ConfigError
from .potential import PotentialSpec, angular_samples

_SCHEMA = {
    "radial": {"dr": float, "r": float, "tail_tol": float},
    "corrections": {"dx": float, "r": float, "tail_tol": float},
    "gp": {"n": int, "r": float, "el_tol": float, "max_iter": int},
    "potential": {"p": float, "delta": float, "h0": str, "g": str},
    "sweep": {"ratios": str, "workers": int, "seed": int},
    "uniqueness": {"ratio": float, "n_starts": int, "n": int, "r": float},
    "tolerances": {"slope_tol": float, "prefactor_rtol": float,
                   "mu_final_dev": float, "cstar_rtol": float,
                   "profile_rtol": float, "remainder_order_tol": float,
                   "remainder_order": float, "unique_tol": float,
                   "location_rtol": float},
    "output": {"dir": str, "dump_fields": str},
}

_DEFAULTS = {
    "radial": {"dr": 0.005, "r": 20.0, "tail_tol": 1e-8},
    "corrections": {"dx": 0.05, "r": 16.0, "tail_tol": 1e-6},
    "gp": {"n": 512, "r": 3.0, "el_tol": 3e-9, "max_iter": 200000},
    "potential": {"p": 2.0, "delta": 0.0, "h0": "one", "g": "const:1"},
    "sweep": {"ratios": "0.9, 0.97, 0.99, 0.997", "workers": 1, "seed": 12345},
    "uniqueness": {"ratio": 0.95, "n_starts": 8, "n": 256, "r": 4.5},
    "tolerances": {"slope_tol": 0.02, "prefactor_rtol": 0.05,
                   "mu_final_dev": 0.05, "cstar_rtol": 0.15,
                   "profile_rtol": 0.15, "remainder_order_tol": 0.3,
                   "remainder_order": 2.0, "unique_tol": 1e-6,
                   "location_rtol": 0.05},
    "output": {"dir": "out", "dump_fields": "false"},
}


@dataclass
class RunConfig:
    values: dict = field(default_factory=dict)

    def __getitem__(self, key):
        section, name = key
        return self.values[section][name]

    def ratios(self) -> list[float]:
        out = [float(s) for s in str(self[("sweep", "ratios")]).split(",") if s.strip()]
        if not out:
            raise ConfigError("sweep ratios list is empty")
        if any(r >= 1.0 or r < 0.0 for r in out):
            raise ConfigError("all sweep values a/a* must lie in [0, 1)")
        if sorted(out) != out:
            raise ConfigError("sweep ratios must be increasing")
        return out

    def dump_fields(self) -> bool:
        return str(self[("output", "dump_fields")]).lower() in ("true", "1", "yes")

    def potential_spec(self) -> PotentialSpec:
        p = self[("potential", "p")]
        delta = self[("potential", "delta")]
        h0 = str(self[("potential", "h0")]).strip()
        if h0.startswith("inline:"):
            samples = np.array([float(s) for s in h0[len("inline:"):].split(",")])
            if samples.size < 8:
                raise ConfigError("inline angular sample list too short")
        else:
            try:
                samples = angular_samples(h0)
            except ValueError as exc:
                raise ConfigError(str(exc)) from None
        gspec = str(self[("potential", "g")]).strip()
        kwargs = {}
        if gspec.startswith("const:"):
            kwargs["g0"] = float(gspec[len("const:"):])
        elif gspec.startswith("taylor:"):
            body = gspec[len("taylor:"):]
            m_part, coeff_part = body.split(",", 1)
            if not m_part.startswith("m=") or not coeff_part.startswith("coeffs=["):
                raise ConfigError(f"malformed envelope spec {gspec!r}")
            m = int(m_part[2:])
            coeffs = [float(s) for s in coeff_part[len("coeffs=["):].rstrip("]").split(",")]
            kwargs["envelope_order"] = m
            kwargs["envelope_coeffs"] = np.array(coeffs)
        else:
            raise ConfigError(f"unknown envelope spec {gspec!r}")
        try:
            return PotentialSpec(p=p, h0_samples=samples, delta=delta, **kwargs)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def validate(self):
        self.ratios()
        for name in _SCHEMA["tolerances"]:
            if self[("tolerances", name)] <= 0:
                raise ConfigError(f"tolerance {name} must be positive")
        self.potential_spec()
        return self

    def lines(self) -> list[str]:
        out = []
        for section in sorted(self.values):
            out.append(f"[{section}]")
            for key in sorted(self.values[section]):
                out.append(f"{key} = {self.values[section][key]}")
        return out


def default_config() -> RunConfig:
    vals = {s: dict(kv) for s, kv in _DEFAULTS.items()}
    return RunConfig(values=vals)


def parse_config(text: str) -> RunConfig:
    cfg = default_config()
    section = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            if section not in _SCHEMA:
                raise ConfigError(f"line {lineno}: unknown section [{section}]")
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {raw!r}")
        if section is None:
            raise ConfigError(f"line {lineno}: key outside any [section]")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in _SCHEMA[section]:
            raise ConfigError(f"line {lineno}: unknown key {key!r} in [{section}]")
        caster = _SCHEMA[section][key]
        try:
            cfg.values[section][key] = caster(value) if caster is not str else value
        except ValueError:
            raise ConfigError(f"line {lineno}: cannot parse {value!r} as "
                              f"{caster.__name__}") from None
    return cfg.validate()


def load_config(path: Optional[str]) -> RunConfig:
    if path is None:
        return default_config().validate()
    with open(path) as fh:
        return parse_config(fh.read())
