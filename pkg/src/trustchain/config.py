"""Experiment configuration: dataclass schema, YAML loading, strict keys.

Every section maps onto a dataclass; unknown keys are rejected so that a typo
never silently falls back to a default.

Schema (all keys optional, defaults shown by ``trustchain config-defaults``)::

    seed: int
    scenario:
      rooms: [{name, origin: [x, y], size: [w, h]}, ...]
      sensor_grid: {cols, rows, spacing, margin}
      rssi: {rssi_d0, d0, alpha, alpha_wall, sigma, rssi_floor}
      target_track: [[x, y, t], ...]
      malicious_track: [[x, y, t], ...]
      malicious_sensors: {ROOM: [sensor index, ...]}
      malicious_confidence: consistent | max
      divergence_min_m: float
    trust: {support_threshold, neighbor_radius, conf_threshold, evid_threshold,
            delta_rep_high, delta_rep_low, initial_sensor_rep,
            penalize_low_conf_runs, low_conf_run_length}
    policy: {gamma0, gamma1, delta, rep_min, rep_max, delta_r, beta, t_block_s}
    network:
      n_blocks, extra_validators, validators_per_block, initial_gateway_rep,
      freeze_reputation, isolation_after, lying_validators, lying_flood,
      malicious_gateways: {ROOM: {tamper, n_invalid_per_block, from_block, to_block}}
    latency:
      sensor_to_gateway: {dist: fixed|uniform|exponential, a, b}
      overlay_link: {dist, a, b}
      sig_check_s, trust_recompute_s
"""

from __future__ import annotations

import dataclasses
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import yaml

from .consensus import ValidationPolicy
from .data_trust import TrustParams
from .scenario import ConfigError, Room, RssiModel, SensorGrid


def _build(cls, data: Optional[dict], where: str):
    if isinstance(data, cls):
        return data
    data = dict(data or {})
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(unknown)}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


@dataclass(frozen=True)
class Delay:
    dist: str = "fixed"
    a: float = 0.0
    b: float = 0.0

    def __post_init__(self):
        if self.dist not in ("fixed", "uniform", "exponential"):
            raise ConfigError(f"unknown delay distribution {self.dist!r}")
        if self.a < 0 or self.b < 0:
            raise ConfigError("delays must be non-negative")

    def sample(self, rng: random.Random) -> float:
        if self.dist == "fixed":
            return self.a
        if self.dist == "uniform":
            return rng.uniform(self.a, self.b)
        return self.a + rng.expovariate(1.0 / self.b) if self.b > 0 else self.a


@dataclass(frozen=True)
class LatencyModel:
    sensor_to_gateway: Delay = Delay("fixed", 0.005)
    overlay_link: Delay = Delay("fixed", 0.020)
    sig_check_s: float = 50e-6
    trust_recompute_s: float = 20e-6

    def __post_init__(self):
        if self.sig_check_s < 0 or self.trust_recompute_s < 0:
            raise ConfigError("processing costs must be non-negative")


@dataclass(frozen=True)
class GatewayAttack:
    tamper: str = "forge_trust"
    n_invalid_per_block: int = 1
    from_block: int = 0
    to_block: Optional[int] = None   # exclusive; None = forever

    def active(self, k: int) -> bool:
        return k >= self.from_block and (self.to_block is None or k < self.to_block)


@dataclass(frozen=True)
class NetworkConfig:
    n_blocks: int = 30
    extra_validators: int = 13
    validators_per_block: Optional[int] = None
    initial_gateway_rep: float = 3.0
    freeze_reputation: bool = False
    isolation_after: int = 3
    lying_validators: int = 0
    lying_flood: int = 3
    malicious_gateways: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.n_blocks < 0 or self.extra_validators < 0 or self.lying_validators < 0:
            raise ConfigError("counts must be non-negative")
        if self.lying_validators > self.extra_validators:
            raise ConfigError("lying validators are drawn from the extra validators")
        if self.validators_per_block is not None and self.validators_per_block < 1:
            raise ConfigError("validators_per_block must be at least 1")


ROOM_W, ROOM_H = 40.0, 30.0

# Target walks into ROOM1 and across it; the fabricated track follows it for
# the first minute, then heads for the opposite side of the room.
DEFAULT_TARGET = ((-5.0, 15.0, 0.0), (20.0, 15.0, 60.0), (35.0, 25.0, 120.0), (35.0, 5.0, 180.0))
DEFAULT_MALICIOUS = ((-5.0, 15.0, 0.0), (20.0, 15.0, 60.0), (5.0, 25.0, 120.0), (5.0, 5.0, 180.0))
DEFAULT_MALICIOUS_SENSORS = (2, 5, 9, 14, 16, 20, 27, 31, 33, 38, 42, 45)


@dataclass(frozen=True)
class ScenarioConfig:
    rooms: tuple = (
        {"name": "ROOM1", "origin": [0.0, 0.0], "size": [ROOM_W, ROOM_H]},
        {"name": "ROOM2", "origin": [ROOM_W, 0.0], "size": [ROOM_W, ROOM_H]},
        {"name": "ROOM3", "origin": [2 * ROOM_W, 0.0], "size": [ROOM_W, ROOM_H]},
    )
    sensor_grid: SensorGrid = SensorGrid()
    rssi: RssiModel = RssiModel()
    target_track: tuple = DEFAULT_TARGET
    malicious_track: tuple = DEFAULT_MALICIOUS
    malicious_sensors: dict = field(default_factory=lambda: {"ROOM1": list(DEFAULT_MALICIOUS_SENSORS)})
    malicious_confidence: str = "consistent"
    divergence_min_m: float = 10.0

    def room_objects(self) -> list:
        out = []
        for r in self.rooms:
            r = dict(r)
            unknown = set(r) - {"name", "origin", "size"}
            if unknown:
                raise ConfigError(f"unknown key(s) in scenario.rooms: {sorted(unknown)}")
            (x, y), (w, h) = r.get("origin", (0, 0)), r["size"]
            out.append(Room(str(r["name"]), float(x), float(y), float(w), float(h)))
        names = [r.name for r in out]
        if len(set(names)) != len(names):
            raise ConfigError("room names must be unique")
        return out


@dataclass(frozen=True)
class PolicyConfig:
    gamma0: float = 4.7 / 4
    gamma1: float = -0.7 / 4
    delta: float = 0.03
    rep_min: float = 1.0
    rep_max: float = 5.0
    delta_r: float = 0.01
    beta: float = 10.0
    t_block_s: float = 4.5

    def policy(self) -> ValidationPolicy:
        d = dataclasses.asdict(self)
        d.pop("t_block_s")
        return ValidationPolicy(**d)


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    scenario: ScenarioConfig = ScenarioConfig()
    trust: TrustParams = TrustParams()
    policy: PolicyConfig = PolicyConfig()
    network: NetworkConfig = NetworkConfig()
    latency: LatencyModel = LatencyModel()

    @classmethod
    def from_dict(cls, data: Optional[dict]) -> "ExperimentConfig":
        data = dict(data or {})
        unknown = sorted(set(data) - {f.name for f in dataclasses.fields(cls)})
        if unknown:
            raise ConfigError(f"unknown top-level key(s): {', '.join(unknown)}")
        sc = dict(data.get("scenario") or {})
        if "sensor_grid" in sc:
            sc["sensor_grid"] = _build(SensorGrid, sc["sensor_grid"], "scenario.sensor_grid")
        if "rssi" in sc:
            sc["rssi"] = _build(RssiModel, sc["rssi"], "scenario.rssi")
        for k in ("target_track", "malicious_track"):
            if k in sc:
                sc[k] = tuple(tuple(float(v) for v in p) for p in sc[k])
        if "rooms" in sc:
            sc["rooms"] = tuple(sc["rooms"])
        lat = dict(data.get("latency") or {})
        for k in ("sensor_to_gateway", "overlay_link"):
            if k in lat:
                lat[k] = _build(Delay, lat[k], f"latency.{k}")
        net = dict(data.get("network") or {})
        if "malicious_gateways" in net:
            net["malicious_gateways"] = {
                str(room): attack if isinstance(attack, GatewayAttack)
                else _build(GatewayAttack, attack, f"network.malicious_gateways.{room}")
                for room, attack in (net["malicious_gateways"] or {}).items()
            }
        cfg = cls(
            seed=int(data.get("seed", 0)),
            scenario=_build(ScenarioConfig, sc, "scenario"),
            trust=_build(TrustParams, data.get("trust"), "trust"),
            policy=_build(PolicyConfig, data.get("policy"), "policy"),
            network=_build(NetworkConfig, net, "network"),
            latency=_build(LatencyModel, lat, "latency"),
        )
        cfg.scenario.room_objects()
        if cfg.scenario.malicious_confidence not in ("consistent", "max"):
            raise ConfigError("scenario.malicious_confidence must be 'consistent' or 'max'")
        for atk in cfg.network.malicious_gateways.values():
            if atk.tamper not in ("forge_trust", "tamper_tx"):
                raise ConfigError(f"unknown tamper kind {atk.tamper!r}")
        try:
            cfg.policy.policy()
        except ValueError as exc:
            raise ConfigError(f"policy: {exc}") from exc
        return cfg

    def with_overrides(self, **sections) -> "ExperimentConfig":
        """Copy with some sections' fields replaced, e.g.
        ``with_overrides(policy={"delta_r": 0.05})``."""
        d = self.to_dict()
        for section, values in sections.items():
            if isinstance(d.get(section), dict):
                d[section].update(values)
            else:
                d[section] = values
        return ExperimentConfig.from_dict(d)

    def to_dict(self) -> dict:
        return _plain(dataclasses.asdict(self))


def _plain(obj: Any) -> Any:
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def load_config(path: Optional[str | Path]) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig()
    try:
        data = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if data is not None and not isinstance(data, dict):
        raise ConfigError("config root must be a mapping")
    return ExperimentConfig.from_dict(data)
