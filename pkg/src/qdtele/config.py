"""TOML run configuration with strict key checking.

Every section and key is optional; missing values fall back to the defaults
in ``DEFAULTS`` (the calibrated source of the reference experiment).
"""
from __future__ import annotations

import copy
import math
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import tomli

from .bsm import BsmSpec
from .engine import Scenario
from .source import CalibrationError, CalibrationTargets, SourceParams, calibrate
from .taglab.coincidences import ChannelMap, CoincidenceConfig
from .taglab.synth import ROLES, SynthRun

DEFAULTS: dict[str, dict[str, Any]] = {
    "source": {
        "v": 0.55,
        "s_ueV": 1.8,
        "tau_x_ns": 0.23,
        "tau_ss_ns": math.inf,
        "tau_hv_ns": None,
        "t2star_ns": 1.4,
        "k": None,
        "g2_x": 0.011,
        "g2_xx": 0.020,
        "fidelity_phi_plus": 0.89,
        "concurrence": 0.79,
    },
    "bsm": {"setup": "bs", "tagged": "psi_minus"},
    "filter": {"v_filtered": None},
    "sweep": {"v_min": 0.0, "v_max": 1.0, "steps": 101, "workers": 1},
    "synth": {
        "seed": None,
        "duration_s": 1e6 / 160e6,
        "pair_rate_hz": 160e6,
        "efficiency": 0.65,
        "jitter_ps": 400.0,
        "dark_rate_hz": 0.0,
        "resolution_ps": 10,
        "inputs": ["H", "V", "D", "R"],
        "workers": 1,
    },
    "coincidence": {"bsm_window_ps": 600, "histogram_span_ps": 100_000, "bin_ps": 100},
    "channels": {"bsm1_h": 0, "bsm1_v": 1, "bsm2_h": 2, "bsm2_v": 3, "tomo_t": 4, "tomo_r": 5},
    "io": {"out_dir": "out", "tags_dir": None, "format": "binary"},
}

_TIME_KEYS = {"tau_x_ns", "tau_ss_ns", "tau_hv_ns", "t2star_ns"}
# closed ranges checked per key so errors point at the offending line
_SOURCE_RANGES = {
    "v": (0.0, 1.0), "k": (0.0, 1.0), "g2_x": (0.0, 1.0), "g2_xx": (0.0, 1.0),
    "fidelity_phi_plus": (0.0, 1.0), "concurrence": (0.0, 1.0), "s_ueV": (0.0, math.inf),
}


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None, path: str | None = None):
        where = ""
        if path:
            where = f"{path}:{line}: " if line else f"{path}: "
        elif line:
            where = f"line {line}: "
        super().__init__(where + message)
        self.line = line


def _locate(text: str, section: str, key: str | None = None) -> int | None:
    cur = None
    for i, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        m = re.match(r"^\[\s*([^\]]+?)\s*\]", line)
        if m:
            cur = m.group(1)
            if key is None and cur == section:
                return i
            continue
        if key is not None and cur == section and re.match(rf"^{re.escape(key)}\s*=", line):
            return i
    return None


def _coerce(section: str, key: str, value: Any) -> Any:
    if key in _TIME_KEYS and isinstance(value, str) and value.strip().lower() in ("inf", "infinity"):
        return math.inf
    return value


@dataclass
class RunConfig:
    data: dict[str, dict[str, Any]]
    path: str | None = None
    text: str = ""

    @classmethod
    def load(cls, path: str | Path | None = None, overrides: list[str] | None = None) -> "RunConfig":
        data = copy.deepcopy(DEFAULTS)
        text = ""
        if path is not None:
            text = Path(path).read_text()
            try:
                raw = tomli.loads(text)
            except tomli.TOMLDecodeError as exc:
                m = re.search(r"line (\d+)", str(exc))
                raise ConfigError(f"invalid TOML: {exc}", int(m.group(1)) if m else None, str(path)) from None
            cfg = cls(data, str(path), text)
            cfg._merge(raw)
        else:
            cfg = cls(data)
        for item in overrides or []:
            cfg._override(item)
        cfg.validate()
        return cfg

    def _merge(self, raw: dict[str, Any]) -> None:
        for section, values in raw.items():
            if section not in self.data:
                raise ConfigError(f"unknown section [{section}]", _locate(self.text, section), self.path)
            if not isinstance(values, dict):
                raise ConfigError(f"[{section}] must be a table", _locate(self.text, section), self.path)
            for key, value in values.items():
                if key not in self.data[section]:
                    raise ConfigError(f"unknown key '{key}' in [{section}]", _locate(self.text, section, key), self.path)
                self.data[section][key] = _coerce(section, key, value)

    def _override(self, item: str) -> None:
        """Apply ``section.key=value`` with the value parsed as a TOML literal."""
        m = re.match(r"^\s*(\w+)\.(\w+)\s*=(.*)$", item)
        if not m:
            raise ConfigError(f"override {item!r} is not of the form section.key=value")
        section, key, literal = m.groups()
        try:
            value = tomli.loads(f"x = {literal.strip()}")["x"]
        except tomli.TOMLDecodeError:
            value = literal.strip()
        if section not in self.data or key not in self.data[section]:
            raise ConfigError(f"unknown override key {section}.{key}")
        self.data[section][key] = _coerce(section, key, value)

    def set(self, section: str, key: str, value: Any) -> None:
        if value is not None:
            self.data[section][key] = value

    def _err(self, section: str, key: str, msg: str) -> ConfigError:
        return ConfigError(f"[{section}] {key}: {msg}", _locate(self.text, section, key), self.path)

    def validate(self) -> None:
        src = self.data["source"]
        for key, (lo, hi) in _SOURCE_RANGES.items():
            val = src[key]
            if val is not None and not lo <= float(val) <= hi:
                raise self._err("source", key, f"must be in [{lo:g}, {hi:g}], got {val}")
        for key in _TIME_KEYS:
            val = src[key]
            if val is not None and not float(val) > 0:
                raise self._err("source", key, f"must be positive, got {val}")
        try:
            self.source_params()
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"[source] {exc}", _locate(self.text, "source"), self.path) from None
        try:
            self.bsm_spec()
        except ValueError as exc:
            raise ConfigError(f"[bsm] {exc}", _locate(self.text, "bsm"), self.path) from None
        vf = self.data["filter"]["v_filtered"]
        if vf is not None and not 0.0 <= float(vf) <= 1.0:
            raise self._err("filter", "v_filtered", "must be in [0, 1]")
        sw = self.data["sweep"]
        if int(sw["steps"]) < 2:
            raise self._err("sweep", "steps", "needs at least 2 grid points")
        try:
            self.coincidence_config()
            self.channel_map()
        except ValueError as exc:
            raise ConfigError(str(exc), None, self.path) from None
        if self.data["io"]["format"] not in ("binary", "csv"):
            raise self._err("io", "format", "must be 'binary' or 'csv'")

    def source_params(self) -> SourceParams:
        s = self.data["source"]
        if s["k"] is not None and (s["g2_x"] is not None and s["g2_x"] != DEFAULTS["source"]["g2_x"]):
            raise ValueError("give either k or g2_x/g2_xx, not both")
        common = dict(v=float(s["v"]), s_ueV=float(s["s_ueV"]), tau_x_ns=float(s["tau_x_ns"]), t2star_ns=float(s["t2star_ns"]))
        if s["tau_hv_ns"] is None and s["fidelity_phi_plus"] is not None:
            if not math.isinf(float(s["tau_ss_ns"])):
                raise ValueError("calibration from fidelity_phi_plus assumes tau_ss_ns = inf")
            targets = CalibrationTargets(
                fidelity_phi_plus=float(s["fidelity_phi_plus"]),
                concurrence=s["concurrence"],
                g2_x=float(s["g2_x"] or 0.0),
                g2_xx=float(s["g2_xx"] or 0.0),
            )
            try:
                p = calibrate(targets, **common)
            except CalibrationError as exc:
                raise ValueError(str(exc)) from None
            if s["k"] is not None:
                raise ValueError("k is derived from g2_x/g2_xx when calibrating; drop k or set tau_hv_ns")
            return p
        if s["k"] is not None:
            k = float(s["k"])
        else:
            k = (1.0 - float(s["g2_x"] or 0.0)) * (1.0 - float(s["g2_xx"] or 0.0))
        tau_hv = math.inf if s["tau_hv_ns"] is None else float(s["tau_hv_ns"])
        return SourceParams(k=k, tau_ss_ns=float(s["tau_ss_ns"]), tau_hv_ns=tau_hv, **common)

    def bsm_spec(self) -> BsmSpec:
        b = self.data["bsm"]
        return BsmSpec(b["setup"], b["tagged"])

    def scenario(self, filtered: bool = True) -> Scenario:
        p = self.source_params()
        vf = self.data["filter"]["v_filtered"]
        if filtered and vf is not None:
            p = p.with_visibility(float(vf))
        return Scenario(p, self.bsm_spec())

    def coincidence_config(self) -> CoincidenceConfig:
        return CoincidenceConfig(**{k: int(v) for k, v in self.data["coincidence"].items()})

    def channel_map(self) -> ChannelMap:
        return ChannelMap(**{k: int(v) for k, v in self.data["channels"].items()})

    def synth_run(self) -> SynthRun:
        s = self.data["synth"]
        if s["seed"] is None:
            raise ConfigError("[synth] seed is required for synthesis", _locate(self.text, "synth"), self.path)
        eff = s["efficiency"]
        if isinstance(eff, dict):
            unknown = set(eff) - set(ROLES)
            if unknown:
                raise self._err("synth", "efficiency", f"unknown detector roles {sorted(unknown)}")
            effs = {r: float(eff.get(r, 0.65)) for r in ROLES}
        else:
            effs = {r: float(eff) for r in ROLES}
        try:
            return SynthRun(
                seed=int(s["seed"]),
                duration_s=float(s["duration_s"]),
                pair_rate_hz=float(s["pair_rate_hz"]),
                efficiencies=effs,
                jitter_ps=float(s["jitter_ps"]),
                dark_rate_hz=float(s["dark_rate_hz"]),
                resolution_ps=int(s["resolution_ps"]),
            )
        except ValueError as exc:
            raise ConfigError(f"[synth] {exc}", _locate(self.text, "synth"), self.path) from None


def defaults_help() -> str:
    lines = []
    for section, values in DEFAULTS.items():
        lines.append(f"[{section}]")
        for k, v in values.items():
            lines.append(f"  {k} = {v!r}")
    return "\n".join(lines)
