"""Configuration, scenario and report types for the SDN simulator, plus their JSON forms."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from enum import Enum
from fractions import Fraction
from typing import Any

from ..errors import InvalidConfig, InvalidScenario

FORMAT_VERSION = "1"


class MalformedPolicy(str, Enum):
    CRASH_CONTROLLER = "crash_controller"
    DISCONNECT_SWITCH = "disconnect_switch"


class ScenarioKind(str, Enum):
    PACKET_IN_FLOOD = "packet_in_flood"
    SWITCH_TABLE_FLOOD = "switch_table_flood"
    SWITCH_ID_SPOOF = "switch_id_spoof"
    MALFORMED_TO_CONTROLLER = "malformed_ctrl_msg_controller"
    TIME_MANIPULATION = "system_time_manipulation"
    TOPOLOGY_POISONING = "topology_poisoning"
    ARBITRARY_TERMINATION = "arbitrary_termination"
    APP_RESOURCE_EXHAUSTION = "resource_exhaustion"
    MSG_OBSTRUCTION_1 = "msg_obstruction_1"
    MSG_OBSTRUCTION_2 = "msg_obstruction_2"
    SERVICE_CHAIN_JAM = "service_chain_jam"
    UNAUTHORIZED_APP_MGMT = "unauthorized_app_mgmt"
    FLOW_RULE_MODIFICATION = "flow_rule_modification"
    FLOW_TABLE_FLUSH = "flow_table_flush"
    UNAUTH_NETWORK_VIEW = "unauthorized_network_view"
    EAVESDROPPING = "eavesdropping"
    MITM_CONTROL_CHANNEL = "mitm_control_channel"
    FLOW_RULE_FLOODING = "flow_rule_flooding"
    FIRMWARE_ABUSE = "firmware_abuse"
    MALFORMED_TO_SWITCH = "malformed_ctrl_msg_switch"

    @classmethod
    def names(cls) -> list[str]:
        return [k.value for k in cls]


# scenarios driven by a malicious controller application
APP_SCENARIOS = frozenset({
    ScenarioKind.ARBITRARY_TERMINATION,
    ScenarioKind.APP_RESOURCE_EXHAUSTION,
    ScenarioKind.MSG_OBSTRUCTION_1,
    ScenarioKind.MSG_OBSTRUCTION_2,
    ScenarioKind.SERVICE_CHAIN_JAM,
    ScenarioKind.UNAUTHORIZED_APP_MGMT,
    ScenarioKind.FLOW_RULE_MODIFICATION,
    ScenarioKind.FLOW_TABLE_FLUSH,
    ScenarioKind.UNAUTH_NETWORK_VIEW,
    ScenarioKind.FLOW_RULE_FLOODING,
})


@dataclass(frozen=True)
class AppSpec:
    name: str
    subscribes_packetin: bool = True


DEFAULT_APPS = (AppSpec("topology"), AppSpec("monitor"), AppSpec("forwarding"))


@dataclass(frozen=True)
class SimConfig:
    num_switches: int = 10
    num_hosts: int = 20
    ticks: int = 2000
    seed: int = 7
    controller_cpu_budget: int = 16
    controller_queue_capacity: int = 64
    switch_table_capacity: int = 16
    flow_table_capacity: int = 32
    flow_timeout: int = 30
    buffer_timeout: int = 20
    traffic_rate: int = 4
    channel_encrypted: bool = False
    malformed_policy: MalformedPolicy = MalformedPolicy.DISCONNECT_SWITCH
    slow_path_multiplier: int = 4
    handshake_window: int = 5
    echo_interval: int = 25
    reconnect_interval: int = 10
    drain_ticks: int = 100
    app_chain: tuple[AppSpec, ...] = DEFAULT_APPS

    def __post_init__(self):
        object.__setattr__(self, "malformed_policy", MalformedPolicy(self.malformed_policy))
        object.__setattr__(self, "app_chain", tuple(
            a if isinstance(a, AppSpec) else AppSpec(**a) for a in self.app_chain
        ))

    def validate(self) -> "SimConfig":
        positive = ("num_switches", "ticks", "controller_cpu_budget", "controller_queue_capacity",
                    "switch_table_capacity", "flow_table_capacity", "flow_timeout", "buffer_timeout",
                    "traffic_rate", "handshake_window", "echo_interval", "reconnect_interval")
        for name in positive:
            v = getattr(self, name)
            if not isinstance(v, int) or isinstance(v, bool) or v < 1:
                raise InvalidConfig(f"{name} must be a positive integer, got {v!r}")
        if self.num_hosts < 2:
            raise InvalidConfig("num_hosts must be >= 2")
        if self.slow_path_multiplier < 2:
            raise InvalidConfig("slow_path_multiplier must be >= 2")
        if self.drain_ticks < 0:
            raise InvalidConfig("drain_ticks must be >= 0")
        names = [a.name for a in self.app_chain]
        if len(set(names)) != len(names) or "attacker_app" in names:
            raise InvalidConfig("app names must be unique and not reserved")
        return self

    def to_dict(self) -> dict:
        d = asdict(self)
        d["malformed_policy"] = self.malformed_policy.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SimConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise InvalidConfig(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(**d).validate()
        except (TypeError, ValueError) as exc:
            raise InvalidConfig(str(exc)) from None


def default_intensity(kind: ScenarioKind, config: SimConfig) -> int:
    """Twice the capacity the attack targets; 1 for one-shot attacks."""
    k = ScenarioKind
    if kind in (k.PACKET_IN_FLOOD, k.APP_RESOURCE_EXHAUSTION):
        return 2 * config.controller_cpu_budget
    if kind is k.SWITCH_TABLE_FLOOD:
        return 2 * config.switch_table_capacity
    if kind is k.FLOW_RULE_FLOODING:
        return 2 * config.flow_table_capacity
    if kind is k.TIME_MANIPULATION:
        return 2 * config.handshake_window
    return 1


@dataclass(frozen=True)
class Scenario:
    kind: ScenarioKind
    start_tick: int
    intensity: int

    @classmethod
    def of(cls, kind, config: SimConfig, intensity: int | None = None,
           start_tick: int | None = None) -> "Scenario":
        try:
            kind = ScenarioKind(kind)
        except ValueError:
            raise InvalidScenario(
                f"unknown scenario {kind!r}; valid: {', '.join(ScenarioKind.names())}"
            ) from None
        return cls(
            kind,
            config.ticks // 10 if start_tick is None else start_tick,
            default_intensity(kind, config) if intensity is None else intensity,
        )

    @classmethod
    def parse(cls, text: str, config: SimConfig) -> "Scenario":
        """``kind[:intensity[:start_tick]]``."""
        parts = text.split(":")
        if len(parts) > 3 or not parts[0]:
            raise InvalidScenario(f"bad scenario spec {text!r}")
        try:
            nums = [int(p) for p in parts[1:]]
        except ValueError:
            raise InvalidScenario(f"bad scenario spec {text!r}") from None
        return cls.of(parts[0], config, *nums)

    def validate(self, config: SimConfig) -> None:
        if not 0 <= self.start_tick < config.ticks:
            raise InvalidScenario(f"{self.kind.value}: start_tick must lie in [0, {config.ticks})")
        if self.intensity < 1:
            raise InvalidScenario(f"{self.kind.value}: intensity must be >= 1")

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "start_tick": self.start_tick, "intensity": self.intensity}


def load_run_document(text: str) -> tuple[SimConfig, list[Scenario]]:
    """Accepts ``{"config": {...}, "scenarios": [...]}`` or a bare config object."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InvalidConfig(f"config is not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise InvalidConfig("config document must be a JSON object")
    doc = dict(doc)
    version = doc.pop("format_version", FORMAT_VERSION)
    if str(version) != FORMAT_VERSION:
        raise InvalidConfig(f"unsupported format_version {version!r}")
    if "config" in doc or "scenarios" in doc:
        config = SimConfig.from_dict(doc.get("config", {}))
        scenarios = []
        for s in doc.get("scenarios", []):
            if not isinstance(s, dict) or "kind" not in s:
                raise InvalidScenario(f"bad scenario entry {s!r}")
            scenarios.append(Scenario.of(s["kind"], config, s.get("intensity"), s.get("start_tick")))
        return config, scenarios
    return SimConfig.from_dict(doc), []


def dump_run_document(config: SimConfig, scenarios=()) -> str:
    return json.dumps({"format_version": FORMAT_VERSION, "config": config.to_dict(),
                       "scenarios": [s.to_dict() for s in scenarios]}, indent=2, sort_keys=True) + "\n"


@dataclass(frozen=True)
class Disconnection:
    tick: int
    dpid: int
    reason: str
    owner: str = ""


@dataclass(frozen=True)
class SimReport:
    config: SimConfig
    scenarios: tuple[Scenario, ...]
    injected: int
    delivered: int
    dropped: dict[str, int]
    in_flight: int
    packetin_total: int
    disconnections: tuple[Disconnection, ...]
    controller_crash_tick: int | None
    per_app_processed: dict[str, int]
    avg_packet_latency_ticks: Fraction
    eavesdrop_transcript_len: int
    tampered_count: int
    observables: dict[str, Any]
    final_state: dict[str, Any]
    event_trace: tuple[tuple[int, str, str, str], ...] = field(repr=False)

    @property
    def delivery_rate(self) -> Fraction:
        return Fraction(self.delivered, self.injected) if self.injected else Fraction(1)

    @property
    def dropped_total(self) -> int:
        return sum(self.dropped.values())

    def scenario(self, kind: ScenarioKind) -> Scenario | None:
        for s in self.scenarios:
            if s.kind is kind:
                return s
        return None

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "config": self.config.to_dict(),
            "scenarios": [s.to_dict() for s in self.scenarios],
            "injected": self.injected,
            "delivered": self.delivered,
            "delivery_rate": str(self.delivery_rate),
            "dropped": dict(sorted(self.dropped.items())),
            "in_flight": self.in_flight,
            "packetin_total": self.packetin_total,
            "disconnections": [asdict(d) for d in self.disconnections],
            "controller_crash_tick": self.controller_crash_tick,
            "per_app_processed": dict(self.per_app_processed),
            "avg_packet_latency_ticks": str(self.avg_packet_latency_ticks),
            "eavesdrop_transcript_len": self.eavesdrop_transcript_len,
            "tampered_count": self.tampered_count,
            "observables": self.observables,
            "final_state": self.final_state,
            "event_trace": [list(e) for e in self.event_trace],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "SimReport":
        config = SimConfig.from_dict(d["config"])
        return cls(
            config=config,
            scenarios=tuple(Scenario(ScenarioKind(s["kind"]), s["start_tick"], s["intensity"])
                            for s in d["scenarios"]),
            injected=d["injected"],
            delivered=d["delivered"],
            dropped=dict(d["dropped"]),
            in_flight=d["in_flight"],
            packetin_total=d["packetin_total"],
            disconnections=tuple(Disconnection(**x) for x in d["disconnections"]),
            controller_crash_tick=d["controller_crash_tick"],
            per_app_processed=dict(d["per_app_processed"]),
            avg_packet_latency_ticks=Fraction(d["avg_packet_latency_ticks"]),
            eavesdrop_transcript_len=d["eavesdrop_transcript_len"],
            tampered_count=d["tampered_count"],
            observables=d["observables"],
            final_state=d["final_state"],
            event_trace=tuple(tuple(e) for e in d["event_trace"]),
        )

    @classmethod
    def from_json(cls, text: str) -> "SimReport":
        return cls.from_dict(json.loads(text))


TRACE_HEADER = "tick|entity|event|detail"


def export_trace(report: SimReport | None) -> str:
    lines = [TRACE_HEADER]
    if report is not None:
        lines.extend(f"{t}|{ent}|{ev}|{detail}" for t, ent, ev, detail in report.event_trace)
    return "\n".join(lines) + "\n"


__all__ = [
    "AppSpec", "DEFAULT_APPS", "Disconnection", "FORMAT_VERSION", "MalformedPolicy", "Scenario",
    "ScenarioKind", "SimConfig", "SimReport", "TRACE_HEADER", "default_intensity", "dump_run_document",
    "export_trace", "load_run_document",
]
