"""Per-scenario success predicates evaluated over a finished :class:`SimReport`."""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

from ..errors import ScenarioMismatch
from .model import MalformedPolicy, ScenarioKind, SimConfig, SimReport

K = ScenarioKind


@dataclass(frozen=True)
class Verdict:
    passed: bool
    reason: str = ""

    def __bool__(self) -> bool:
        return self.passed


def _ok() -> Verdict:
    return Verdict(True)


def _fail(reason: str) -> Verdict:
    return Verdict(False, reason)


def _frac(x) -> Fraction | None:
    return None if x is None else Fraction(x)


def _legit_dpids(config: SimConfig) -> range:
    return range(1, config.num_switches + 1)


def _check(kind: ScenarioKind, r: SimReport, cfg: SimConfig, start: int, hardened: bool) -> Verdict:
    o = r.observables
    fs = r.final_state
    victim = o["victim_dpid"]

    if kind is K.PACKET_IN_FLOOD:
        if o["saturated_ticks_after"] == 0:
            return _fail("no saturation observed")
        before, after = _frac(o["packetin_latency_before"]), _frac(o["packetin_latency_after"])
        if before is None or after is None or not after > before:
            return _fail(f"PacketIn latency did not rise ({before} -> {after})")
        return _ok()

    if kind is K.SWITCH_TABLE_FLOOD:
        if any(d.reason == "evicted" and d.dpid in _legit_dpids(cfg) for d in r.disconnections):
            return _ok()
        return _fail("no legitimate switch was evicted")

    if kind is K.SWITCH_ID_SPOOF:
        if any(d.dpid == victim and d.reason == "spoofed" and d.owner == "s0" for d in r.disconnections):
            return _ok()
        return _fail("victim switch was never displaced")

    if kind is K.MALFORMED_TO_CONTROLLER:
        if cfg.malformed_policy is MalformedPolicy.CRASH_CONTROLLER:
            return _ok() if r.controller_crash_tick is not None else _fail("controller did not crash")
        if any(d.reason == "malformed" for d in r.disconnections):
            return _ok()
        return _fail("no switch was disconnected for a malformed message")

    if kind is K.TIME_MANIPULATION:
        if any(d.dpid == victim and d.reason == "time_skew" for d in r.disconnections):
            return _ok()
        return _fail("victim switch kept its connection")

    if kind is K.TOPOLOGY_POISONING:
        path = fs.get("victim_view_path") or []
        return _ok() if "atk" in path else _fail(f"victim path {path} avoids the attacker")

    if kind is K.ARBITRARY_TERMINATION:
        if r.controller_crash_tick != start:
            return _fail(f"crash tick {r.controller_crash_tick} != start {start}")
        if fs["switch_table"]:
            return _fail("switch table not empty after termination")
        return _ok()

    if kind is K.APP_RESOURCE_EXHAUSTION:
        ib, db = o["injected_before"], o["delivered_before"]
        ia, da = o["injected_after"], o["delivered_after"]
        if not (ib and ia and Fraction(da, ia) < Fraction(db, ib)):
            return _fail("delivery rate did not fall after exhaustion")
        if not o["legit_ctrl_processed_after"] < o["legit_ctrl_enqueued_after"]:
            return _fail("controller kept up with legitimate load")
        return _ok()

    if kind is K.MSG_OBSTRUCTION_1:
        at_start = o["app_processed_at_start"].get("monitor", 0)
        final = fs["apps"].get("monitor", {}).get("processed", 0)
        if at_start == 0:
            return _fail("monitor processed nothing before the attack")
        if final != at_start:
            return _fail("monitor kept receiving PacketIn events")
        if "monitor" in fs["subscribers"]:
            return _fail("monitor still subscribed")
        return _ok()

    if kind is K.MSG_OBSTRUCTION_2:
        cutoff = start + cfg.flow_timeout + 2
        late = [t for t in o["victim_delivery_ticks"] if t >= cutoff]
        if o["malicious_drops"] == 0:
            return _fail("no PacketIn was dropped by the malicious app")
        return _ok() if not late else _fail(f"{len(late)} packets reached the victim after tick {cutoff}")

    if kind is K.SERVICE_CHAIN_JAM:
        if o["jam_tick"] is None:
            return _fail("chain never jammed")
        at_start = o["app_processed_at_start"].get("forwarding", 0)
        final = fs["apps"].get("forwarding", {}).get("processed", 0)
        # forwarding may still drain events between start and the jam itself
        if o["flowmods_after_jam"]:
            return _fail("FlowMods issued after the jam")
        if final < at_start:
            return _fail("inconsistent counters")
        return _ok()

    if kind is K.UNAUTHORIZED_APP_MGMT:
        app = fs["apps"].get("forwarding")
        return _ok() if app is not None and not app["alive"] else _fail("forwarding app still alive")

    if kind is K.FLOW_RULE_MODIFICATION:
        late = [t for t in o["victim_delivery_ticks"] if t >= start + 2]
        return _ok() if not late else _fail(f"{len(late)} packets reached the targeted host")

    if kind is K.FLOW_TABLE_FLUSH:
        lookups, misses = o["target_lookups_after"], o["target_misses_after"]
        if lookups == 0:
            return _fail("no lookups on the flushed switch")
        return _ok() if misses == lookups else _fail(f"{lookups - misses} lookups hit a rule")

    if kind is K.UNAUTH_NETWORK_VIEW:
        h = f"h{o['victim_host']}"
        view, phys = fs["network_view"]["hosts"].get(h), fs["physical_hosts"].get(h)
        return _ok() if view != phys else _fail("network view matches the physical network")

    if kind is K.EAVESDROPPING:
        n = r.eavesdrop_transcript_len
        if hardened:
            return _ok() if n == 0 else _fail(f"transcript of {n} messages despite encryption")
        return _ok() if n > 0 else _fail("nothing captured on the control channel")

    if kind is K.MITM_CONTROL_CHANNEL:
        if hardened:
            return _ok() if r.tampered_count == 0 else _fail(f"{r.tampered_count} messages tampered")
        if r.tampered_count == 0:
            return _fail("no control message was tampered")
        cutoff = start + cfg.flow_timeout + 2
        late = [t for t in o["victim_delivery_ticks"] if t >= cutoff]
        return _ok() if not late else _fail(f"{len(late)} packets reached the targeted host")

    if kind is K.FLOW_RULE_FLOODING:
        n = o["legit_flowmods_rejected"]
        return _ok() if n > 0 else _fail("no legitimate rule was rejected")

    if kind is K.FIRMWARE_ABUSE:
        base, after = o["probe_min_latency_before"], _frac(o["probe_avg_latency_after"])
        if base is None or after is None:
            return _fail("probe flow not observed on both sides of the start tick")
        need = cfg.slow_path_multiplier * base
        return _ok() if after >= need else _fail(f"probe latency {after} < {need}")

    if kind is K.MALFORMED_TO_SWITCH:
        sw = fs["switches"]["s0"]
        if not sw["crashed"]:
            return _fail("victim switch did not crash")
        if o["victim_switch_forwards_after"]:
            return _fail("victim switch kept forwarding")
        if not o["victim_switch_drops_after"]:
            return _fail("no traffic was lost at the victim switch")
        return _ok()

    raise AssertionError(kind)  # pragma: no cover


def scenario_postcondition(kind: ScenarioKind | str, report: SimReport, config: SimConfig | None = None,
                           hardened: bool = False) -> Verdict:
    """Evaluate the success predicate of ``kind``.

    ``hardened=True`` asks the inverse question for the channel attacks: did
    encryption keep the transcript (eavesdropping) or the tamper count (MiTM) at 0?
    A report made without any scenario is accepted and simply fails.
    """
    kind = ScenarioKind(kind)
    config = config or report.config
    if report.scenarios:
        s = report.scenario(kind)
        if s is None:
            ran = ", ".join(x.kind.value for x in report.scenarios)
            raise ScenarioMismatch(f"report ran [{ran}], not {kind.value}")
        start = s.start_tick
    else:
        start = report.observables.get("window_start", config.ticks // 10)
    return _check(kind, report, config, start, hardened)
