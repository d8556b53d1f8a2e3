"""Tick-driven simulation of a small OpenFlow-style network.

Topology: switches ``s0..s(S-1)`` form a line (``s_i`` has DPID ``i + 1``) and
host ``h_j`` hangs off ``s_(j mod S)`` on port ``h<j>``. One controller runs an
ordered app chain. Each tick runs, in this order:

1. scenario hooks (attacker actions scheduled for this tick)
2. legitimate traffic injection (stops once ``t >= ticks``; the drain phase follows)
3. control-channel delivery of everything sent last tick plus attacker injections;
   taps and tampering act here; controller arrivals are shuffled, then tail-dropped
   when the queue is full
4. controller processes queued messages FIFO, up to its CPU budget
5. every switch, in DPID order: expire rules, apply control messages, apply the
   flush hook, forward arriving packets, emit echoes and reconnect attempts
6. buffered packets older than ``buffer_timeout`` are dropped

All randomness comes from forks of one SplitMix64 seeded with ``config.seed``.
"""

from __future__ import annotations

from collections import defaultdict, deque
from fractions import Fraction

from ..errors import InvalidScenario
from ..rng import SplitMix64
from .model import (
    APP_SCENARIOS,
    AppSpec,
    Disconnection,
    MalformedPolicy,
    Scenario,
    ScenarioKind,
    SimConfig,
    SimReport,
)

K = ScenarioKind
CONTROLLER = "controller"
ATTACKER = "atk"
ATTACKER_APP = "attacker_app"
TTL = 64

_STREAM_TRAFFIC = 1
_STREAM_CHANNEL = 2


class _Pkt:
    __slots__ = ("id", "src", "dst", "born", "ttl", "legit", "probe", "hops", "first_hit")

    def __init__(self, pid, src, dst, born, legit=True, probe=False):
        self.id = pid
        self.src = src
        self.dst = dst
        self.born = born
        self.ttl = TTL
        self.legit = legit
        self.probe = probe
        self.hops = 0
        self.first_hit = False


class _Msg:
    __slots__ = ("kind", "src", "dst", "sent", "arrival", "body", "legit", "tampered")

    def __init__(self, kind, src, dst, sent, body, legit=True):
        self.kind = kind
        self.src = src
        self.dst = dst
        self.sent = sent
        self.arrival = None
        self.body = body
        self.legit = legit
        self.tampered = False


class _Rule:
    __slots__ = ("action", "expires", "slow")

    def __init__(self, action, expires, slow=False):
        self.action = action  # ("fwd", port) or ("drop",)
        self.expires = expires  # None = permanent
        self.slow = slow


class _Switch:
    def __init__(self, index: int):
        self.index = index
        self.name = f"s{index}"
        self.dpid = index + 1
        self.connected = True
        self.crashed = False
        self.clock_offset = 0
        self.disconnect_tick = 0
        self.rules: dict[tuple, _Rule] = {}
        self.ctrl_in: list[_Msg] = []
        self.buffered: dict[int, _Pkt] = {}
        self.buf_order: deque[tuple[int, int]] = deque()
        self.max_rules = 0


class _App:
    __slots__ = ("name", "alive", "processed", "jammed")

    def __init__(self, name):
        self.name = name
        self.alive = True
        self.processed = 0
        self.jammed = False


def _node_order(name: str):
    return (0, int(name[1:])) if name.startswith("s") and name[1:].isdigit() else (1, name)


class Simulator:
    def __init__(self, config: SimConfig, scenarios=()):
        self.cfg = config.validate()
        scen = list(scenarios)
        seen = set()
        for s in scen:
            s.validate(config)
            if s.kind in seen:
                raise InvalidScenario(f"scenario {s.kind.value} given twice")
            seen.add(s.kind)
        self.scenarios = tuple(sorted(scen, key=lambda s: (s.start_tick, s.kind.value)))
        self.by_kind = {s.kind: s for s in self.scenarios}
        S, H = config.num_switches, config.num_hosts

        root = SplitMix64(config.seed)
        self.traffic_rng = root.fork(_STREAM_TRAFFIC)
        self.channel_rng = root.fork(_STREAM_CHANNEL)

        self.switches = [_Switch(i) for i in range(S)]
        self.host_switch = [j % S for j in range(H)]
        self.victim_dpid = 1
        far = max(self.host_switch)
        self.victim_host = min(j for j in range(H) if self.host_switch[j] == far)
        self.target_switch = S // 2
        self.window = min((s.start_tick for s in self.scenarios), default=config.ticks // 10)

        # controller
        self.alive = True
        self.crash_tick = None
        self.table: dict[int, str] = {sw.dpid: sw.name for sw in self.switches}
        self.max_table = len(self.table)
        self.queue: deque[_Msg] = deque()
        self.chain: list[AppSpec] = list(config.app_chain)
        if seen & APP_SCENARIOS:
            sub = bool(seen & {K.MSG_OBSTRUCTION_2, K.SERVICE_CHAIN_JAM})
            pos = next((i for i, a in enumerate(self.chain) if a.name == "forwarding"), len(self.chain))
            self.chain.insert(pos, AppSpec(ATTACKER_APP, sub))
        self.apps = {a.name: _App(a.name) for a in self.chain}
        self.subscribers = [a.name for a in self.chain if a.subscribes_packetin]
        self.jammed = False
        self.jam_tick = None

        # network view: links between switch names, host attachment points
        self.view_links: dict[str, set[str]] = {sw.name: set() for sw in self.switches}
        for i in range(S - 1):
            self._add_link(f"s{i}", f"s{i + 1}")
        self.view_hosts = {j: (f"s{self.host_switch[j]}", f"h{j}") for j in range(H)}
        self.view_version = 0
        self._dist_cache: dict = {}

        # channel
        self.in_transit: list[_Msg] = []
        self.attacker_now: list[_Msg] = []

        # packets in flight: tick -> [(switch index or -1 for host delivery, pkt)]
        self.future: dict[int, list] = defaultdict(list)
        self.next_pid = 0
        self.next_buf = 0

        # metrics
        self.injected = 0
        self.delivered = 0
        self.dropped: dict[str, int] = defaultdict(int)
        self.latency_sum = 0
        self.packetin_total = 0
        self.disconnections: list[Disconnection] = []
        self.transcript = 0
        self.tampered = 0
        self.trace: list[tuple[int, str, str, str]] = []
        self.obs = defaultdict(int)
        self.pin_lat = {"before": [0, 0], "after": [0, 0]}
        self.app_at_start: dict[str, int] | None = None
        self.victim_delivery_ticks: list[int] = []
        self.probe_before: list[int] = []
        self.probe_after: list[int] = []
        self.timing = {"hit": [0, 0], "miss": [0, 0]}
        self.flush_active = False
        self.flood_counter = 0
        self.fake_dpid = 1000
        self.bogus_counter = 0

    # -- helpers -------------------------------------------------------------

    def _active(self, kind: ScenarioKind, t: int) -> bool:
        s = self.by_kind.get(kind)
        return s is not None and t >= s.start_tick

    def _event(self, t, entity, event, detail=""):
        self.trace.append((t, entity, event, detail))

    def _add_link(self, a, b):
        self.view_links.setdefault(a, set()).add(b)
        self.view_links.setdefault(b, set()).add(a)

    def _view_changed(self):
        self.view_version += 1
        self._dist_cache.clear()

    def _dist_from(self, origin: str) -> dict[str, int]:
        d = self._dist_cache.get(origin)
        if d is None:
            d = {origin: 0}
            frontier = deque([origin])
            while frontier:
                u = frontier.popleft()
                for v in sorted(self.view_links.get(u, ()), key=_node_order):
                    if v not in d:
                        d[v] = d[u] + 1
                        frontier.append(v)
            self._dist_cache[origin] = d
        return d

    def view_path(self, a: str, b: str) -> list[str] | None:
        """Shortest path between two view nodes, preferring lowest-ordered next hops."""
        dist = self._dist_from(b)
        if a not in dist:
            return None
        path = [a]
        while path[-1] != b:
            u = path[-1]
            path.append(min((v for v in self.view_links[u] if dist.get(v) == dist[u] - 1), key=_node_order))
        return path

    def _drop(self, t, pkt: _Pkt, reason: str, where: str):
        if pkt.legit:
            self.dropped[reason] += 1
            self._event(t, where, "drop", f"pkt={pkt.id} reason={reason}")

    def _disconnect(self, t, dpid, reason, owner):
        if self.table.get(dpid) == owner:
            del self.table[dpid]
        self.disconnections.append(Disconnection(t, dpid, reason, owner))
        self._event(t, CONTROLLER, "disconnect", f"dpid={dpid} owner={owner} reason={reason}")
        sw = self._switch_by_name(owner)
        if sw is not None and sw.connected:
            sw.connected = False
            sw.disconnect_tick = t

    def _switch_by_name(self, name):
        if name.startswith("s") and name[1:].isdigit():
            i = int(name[1:])
            if i < len(self.switches):
                return self.switches[i]
        return None

    def _crash_controller(self, t, reason):
        self.alive = False
        self.crash_tick = t
        self._event(t, CONTROLLER, "crash", f"reason={reason}")
        for dpid, owner in list(self.table.items()):
            self._disconnect(t, dpid, "controller_crash", owner)
        self.table.clear()
        self.queue.clear()

    def _send(self, kind, src, dst, t, body, legit=True):
        self.in_transit.append(_Msg(kind, src, dst, t, body, legit))

    def _inject(self, kind, dst, t, body):
        self.attacker_now.append(_Msg(kind, ATTACKER, dst, t, body, legit=False))

    # -- step 1: scenario hooks ------------------------------------------------

    def _hooks(self, t):
        cfg = self.cfg
        if t == self.window:
            self.app_at_start = {n: a.processed for n, a in self.apps.items()}
        for s in self.scenarios:
            if t < s.start_tick:
                continue
            first = t == s.start_tick
            k = s.kind
            if first:
                self._event(t, "scenario", "start", f"kind={k.value} intensity={s.intensity}")
            if k is K.PACKET_IN_FLOOD:
                victim = self.switches[0]
                for _ in range(s.intensity):
                    self.flood_counter += 1
                    p = _Pkt(-self.flood_counter, ATTACKER, f"x{self.flood_counter}", t, legit=False)
                    self.future[t].append((victim.index, p))
                self.obs["attack_packets"] += s.intensity
            elif k is K.SWITCH_TABLE_FLOOD:
                for _ in range(s.intensity):
                    self.fake_dpid += 1
                    self._inject("FeaturesReply", CONTROLLER, t, {"dpid": self.fake_dpid, "ts": t})
            elif k is K.SWITCH_ID_SPOOF:
                if (t - s.start_tick) % cfg.reconnect_interval == 0:
                    self._inject("FeaturesReply", CONTROLLER, t, {"dpid": self.victim_dpid, "ts": t})
            elif k is K.MALFORMED_TO_CONTROLLER:
                if first:
                    for _ in range(s.intensity):
                        self._inject("Malformed", CONTROLLER, t, {"dpid": self.victim_dpid})
            elif k is K.TIME_MANIPULATION:
                if first:
                    self.switches[0].clock_offset = s.intensity
                    self._event(t, "s0", "clock_offset", f"offset={s.intensity}")
            elif k is K.TOPOLOGY_POISONING:
                if first:
                    last = f"s{len(self.switches) - 1}"
                    self._inject("LinkDiscovery", CONTROLLER, t, {"a": "s0", "b": ATTACKER})
                    self._inject("LinkDiscovery", CONTROLLER, t, {"a": ATTACKER, "b": last})
            elif k is K.ARBITRARY_TERMINATION:
                if first and self.alive:
                    self._crash_controller(t, "app_exit")
            elif k is K.APP_RESOURCE_EXHAUSTION:
                pass  # applied in the controller step
            elif k is K.MSG_OBSTRUCTION_1:
                if first and "monitor" in self.subscribers:
                    self.subscribers.remove("monitor")
                    self._event(t, ATTACKER_APP, "unsubscribe", "app=monitor")
            elif k is K.UNAUTHORIZED_APP_MGMT:
                if first and "forwarding" in self.apps and self.alive:
                    self.apps["forwarding"].alive = False
                    self._event(t, ATTACKER_APP, "kill_app", "app=forwarding")
            elif k is K.FLOW_RULE_MODIFICATION:
                if first and self.alive:
                    for sw in self.switches:
                        self._send("FlowMod", CONTROLLER, sw.name, t,
                                   {"match": ("dst", self.victim_host), "action": ("drop",),
                                    "timeout": cfg.flow_timeout, "buffer": None}, legit=False)
            elif k is K.FLOW_TABLE_FLUSH:
                self.flush_active = True
            elif k is K.UNAUTH_NETWORK_VIEW:
                if first:
                    self.view_hosts[self.victim_host] = ("s0", ATTACKER)
                    self._view_changed()
                    self._event(t, ATTACKER_APP, "view_change", f"host=h{self.victim_host} at=s0:{ATTACKER}")
            elif k is K.FLOW_RULE_FLOODING:
                if self.alive:
                    name = self.switches[self.target_switch].name
                    for _ in range(s.intensity):
                        self.bogus_counter += 1
                        self._send("FlowMod", CONTROLLER, name, t,
                                   {"match": ("dst", f"bogus{self.bogus_counter}"), "action": ("drop",),
                                    "timeout": cfg.flow_timeout, "buffer": None}, legit=False)
            elif k is K.FIRMWARE_ABUSE:
                if first:
                    self._install_slow_path(t)
            elif k is K.MALFORMED_TO_SWITCH:
                if first:
                    for _ in range(s.intensity):
                        self._inject("Malformed", self.switches[0].name, t, {})

    def _install_slow_path(self, t):
        src, dst = 0, self.victim_host
        a, b = self.host_switch[src], self.host_switch[dst]
        step = 1 if b >= a else -1
        for i in range(a, b + step, step):
            sw = self.switches[i]
            port = f"h{dst}" if i == b else f"s{i + step}"
            key = ("pair", src, dst)
            if key in sw.rules or len(sw.rules) < self.cfg.flow_table_capacity:
                sw.rules[key] = _Rule(("fwd", port), None, slow=True)
                sw.max_rules = max(sw.max_rules, len(sw.rules))
                self._event(t, sw.name, "slow_rule", f"match=h{src}->h{dst} port={port}")

    # -- step 2: traffic ---------------------------------------------------------

    def _traffic(self, t):
        cfg = self.cfg
        if t >= cfg.ticks:
            return
        H = cfg.num_hosts
        rng = self.traffic_rng
        for _ in range(cfg.traffic_rate):
            src = rng.below(H)
            dst = rng.below(H - 1)
            if dst >= src:
                dst += 1
            self._new_packet(t, src, dst, probe=False)
        if K.FIRMWARE_ABUSE in self.by_kind:
            self._new_packet(t, 0, self.victim_host, probe=True)

    def _new_packet(self, t, src, dst, probe):
        p = _Pkt(self.next_pid, src, dst, t, probe=probe)
        self.next_pid += 1
        self.injected += 1
        if t < self.window:
            self.obs["injected_before"] += 1
        else:
            self.obs["injected_after"] += 1
        self.future[t].append((self.host_switch[src], p))

    # -- step 3: channel ---------------------------------------------------------

    def _channel(self, t):
        cfg = self.cfg
        batch = self.in_transit + self.attacker_now
        self.in_transit = []
        self.attacker_now = []
        tap = self._active(K.EAVESDROPPING, t) and not cfg.channel_encrypted
        mitm = self._active(K.MITM_CONTROL_CHANNEL, t) and not cfg.channel_encrypted
        to_ctrl = []
        for m in batch:
            m.arrival = t
            if tap:
                self.transcript += 1
            if mitm and m.kind == "FlowMod" and m.body["match"] == ("dst", self.victim_host) \
                    and m.body["action"][0] == "fwd":
                m.body = dict(m.body, action=("drop",))
                m.tampered = True
                self.tampered += 1
                self._event(t, "channel", "tamper", f"to={m.dst} match=h{self.victim_host}")
            if m.dst == CONTROLLER:
                to_ctrl.append(m)
            else:
                sw = self._switch_by_name(m.dst)
                if sw is not None:
                    sw.ctrl_in.append(m)
        if not to_ctrl:
            return
        self.channel_rng.shuffle(to_ctrl)
        cap = cfg.controller_queue_capacity
        dropped = 0
        for m in to_ctrl:
            if not self.alive:
                continue
            if len(self.queue) >= cap:
                dropped += 1
                continue
            self.queue.append(m)
            if m.legit and t >= self.window:
                self.obs["legit_ctrl_enqueued_after"] += 1
        if dropped:
            self.obs["queue_drops"] += dropped
            if t >= self.window:
                self.obs["saturated_ticks_after"] += 1
            else:
                self.obs["saturated_ticks_before"] += 1

    # -- step 4: controller --------------------------------------------------------

    def _controller(self, t):
        if not self.alive:
            return
        budget = self.cfg.controller_cpu_budget
        s = self.by_kind.get(K.APP_RESOURCE_EXHAUSTION)
        if s is not None and t >= s.start_tick:
            budget -= min(budget, s.intensity)
        if self.jammed:
            return
        done = 0
        while self.queue and done < budget and self.alive and not self.jammed:
            m = self.queue.popleft()
            done += 1
            if m.legit and t >= self.window:
                self.obs["legit_ctrl_processed_after"] += 1
            self._handle(t, m)

    def _skewed(self, m) -> bool:
        return abs(m.body["ts"] - m.arrival) > self.cfg.handshake_window

    def _handle(self, t, m: _Msg):
        kind = m.kind
        if kind == "PacketIn":
            self._packet_in(t, m)
        elif kind == "FeaturesReply":
            dpid = m.body["dpid"]
            if self._skewed(m):
                self._disconnect(t, dpid, "time_skew", m.src)
                return
            self._register(t, dpid, m.src)
        elif kind == "EchoReply":
            dpid = m.body["dpid"]
            if self.table.get(dpid) == m.src and self._skewed(m):
                self._disconnect(t, dpid, "time_skew", m.src)
        elif kind == "Malformed":
            if self.cfg.malformed_policy is MalformedPolicy.CRASH_CONTROLLER:
                self._crash_controller(t, "malformed")
            else:
                dpid = m.body["dpid"]
                owner = self.table.get(dpid)
                if owner is not None:
                    self._disconnect(t, dpid, "malformed", owner)
        elif kind == "LinkDiscovery":
            topo = self.apps.get("topology")
            if topo is not None and topo.alive:
                topo.processed += 1
                self._add_link(m.body["a"], m.body["b"])
                self._view_changed()
                self._event(t, CONTROLLER, "link_discovered", f"{m.body['a']}-{m.body['b']}")

    def _register(self, t, dpid, owner):
        old = self.table.get(dpid)
        if old is not None and old != owner:
            self._disconnect(t, dpid, "spoofed", old)
        elif old is None and len(self.table) >= self.cfg.switch_table_capacity:
            oldest = next(iter(self.table))
            self._disconnect(t, oldest, "evicted", self.table[oldest])
        if old != owner:
            self.table[dpid] = owner
            self._event(t, CONTROLLER, "connect", f"dpid={dpid} owner={owner}")
        self.max_table = max(self.max_table, len(self.table))
        sw = self._switch_by_name(owner)
        if sw is not None and not sw.crashed:
            sw.connected = True

    def _packet_in(self, t, m: _Msg):
        b = m.body
        if m.legit:
            key = "before" if t < self.window else "after"
            acc = self.pin_lat[key]
            acc[0] += t - m.arrival
            acc[1] += 1
        if self.table.get(b["dpid"]) != m.src:
            return
        obstruct = self._active(K.MSG_OBSTRUCTION_2, t)
        jam = self._active(K.SERVICE_CHAIN_JAM, t)
        for name in self.subscribers:
            app = self.apps[name]
            if not app.alive:
                continue
            app.processed += 1
            if name == ATTACKER_APP:
                if jam:
                    app.jammed = True
                    self.jammed = True
                    self.jam_tick = t
                    self._event(t, ATTACKER_APP, "jam", "infinite_loop")
                    return
                if obstruct and b["dst"] == self.victim_host:
                    self.obs["malicious_drops"] += 1
                    return
            elif name == "forwarding":
                self._forward_decision(t, m)

    def _forward_decision(self, t, m: _Msg):
        b = m.body
        dst = b["dst"]
        loc = self.view_hosts.get(dst)
        if loc is None:
            return
        here = m.src
        if loc[0] == here:
            port = loc[1]
        else:
            path = self.view_path(here, loc[0])
            if path is None:
                return
            port = path[1]
        action = ("fwd", port)
        if self._active(K.FLOW_RULE_MODIFICATION, t) and dst == self.victim_host:
            action = ("drop",)
        self.obs["flowmods_sent"] += 1
        if self.jam_tick is not None:
            self.obs["flowmods_after_jam"] += 1
        self._send("FlowMod", CONTROLLER, here, t,
                   {"match": ("dst", dst), "action": action, "timeout": self.cfg.flow_timeout,
                    "buffer": b["buffer"]})

    # -- step 5: switches ------------------------------------------------------------

    def _switch_step(self, t, arrivals):
        cfg = self.cfg
        per_switch = defaultdict(list)
        for target, p in arrivals:
            if target < 0:
                self._deliver(t, p)
            else:
                per_switch[target].append(p)
        for sw in self.switches:
            pkts = per_switch.get(sw.index, ())
            if sw.crashed:
                sw.ctrl_in.clear()
                for p in pkts:
                    self._count_switch(sw, t, "drops")
                    self._drop(t, p, "switch_crashed", sw.name)
                continue
            if sw.rules:
                expired = [k for k, r in sw.rules.items() if r.expires is not None and r.expires <= t]
                for k in expired:
                    del sw.rules[k]
            inbox, sw.ctrl_in = sw.ctrl_in, []
            for m in inbox:
                self._switch_control(t, sw, m)
                if sw.crashed:
                    break
            if sw.crashed:
                for p in pkts:
                    self._count_switch(sw, t, "drops")
                    self._drop(t, p, "switch_crashed", sw.name)
                continue
            if self.flush_active and sw.index == 0:
                sw.rules.clear()
            for p in pkts:
                self._process(t, sw, p)
            if not sw.connected and t > sw.disconnect_tick \
                    and (t - sw.disconnect_tick) % cfg.reconnect_interval == 0:
                self._send("FeaturesReply", sw.name, CONTROLLER, t,
                           {"dpid": sw.dpid, "ts": t + sw.clock_offset})
        if self.alive and not self.jammed and t % cfg.echo_interval == 0:
            for dpid, owner in self.table.items():
                if self._switch_by_name(owner) is not None:
                    self._send("Echo", CONTROLLER, owner, t, {"dpid": dpid})

    def _count_switch(self, sw, t, what):
        # strictly after the start tick: the crash itself lands mid-tick
        if sw.index == 0 and t > self.window:
            self.obs[f"victim_switch_{what}_after"] += 1

    def _switch_control(self, t, sw: _Switch, m: _Msg):
        if m.kind == "FlowMod":
            b = m.body
            key = b["match"]
            if key in sw.rules or len(sw.rules) < self.cfg.flow_table_capacity:
                sw.rules[key] = _Rule(b["action"], t + b["timeout"])
                sw.max_rules = max(sw.max_rules, len(sw.rules))
                buf = b["buffer"]
                if buf is not None and buf in sw.buffered:
                    self._apply(t, sw, sw.buffered.pop(buf), sw.rules[key])
            else:
                if m.legit:
                    self.obs["legit_flowmods_rejected"] += 1
                    self._event(t, sw.name, "flowmod_reject", f"match=h{key[1]}")
                else:
                    self.obs["bogus_flowmods_rejected"] += 1
        elif m.kind == "Echo":
            if sw.connected:
                self._send("EchoReply", sw.name, CONTROLLER, t, {"dpid": sw.dpid, "ts": t + sw.clock_offset})
        elif m.kind == "Malformed":
            sw.crashed = True
            self._event(t, sw.name, "crash", "reason=malformed")
            if self.table.get(sw.dpid) == sw.name:
                self._disconnect(t, sw.dpid, "switch_crashed", sw.name)
            sw.connected = False
            for p in sw.buffered.values():
                self._drop(t, p, "switch_crashed", sw.name)
            sw.buffered.clear()
            sw.buf_order.clear()

    def _process(self, t, sw: _Switch, p: _Pkt):
        p.ttl -= 1
        if p.ttl <= 0:
            self._drop(t, p, "ttl", sw.name)
            return
        target = self.flush_active and sw.index == 0
        if target:
            self.obs["target_lookups_after"] += 1
        rule = sw.rules.get(("pair", p.src, p.dst)) or sw.rules.get(("dst", p.dst))
        if p.hops == 0:
            p.first_hit = rule is not None
        p.hops += 1
        if rule is not None:
            self._apply(t, sw, p, rule)
            return
        if target:
            self.obs["target_misses_after"] += 1
        if not sw.connected:
            self._count_switch(sw, t, "drops")
            self._drop(t, p, "no_controller", sw.name)
            return
        self.next_buf += 1
        sw.buffered[self.next_buf] = p
        sw.buf_order.append((t, self.next_buf))
        self.packetin_total += 1
        self._send("PacketIn", sw.name, CONTROLLER, t,
                   {"dpid": sw.dpid, "src": p.src, "dst": p.dst, "buffer": self.next_buf}, legit=p.legit)

    def _apply(self, t, sw: _Switch, p: _Pkt, rule: _Rule):
        action = rule.action
        if action[0] == "drop":
            self._count_switch(sw, t, "drops")
            self._drop(t, p, "rule_drop", sw.name)
            return
        port = action[1]
        delay = self.cfg.slow_path_multiplier if rule.slow else 1
        if port.startswith("h") and port[1:].isdigit():
            if int(port[1:]) != p.dst:
                self._count_switch(sw, t, "drops")
                self._drop(t, p, "misdelivered", sw.name)
                return
            self._count_switch(sw, t, "forwards")
            self.future[t + delay].append((-1, p))
            return
        nxt = self._switch_by_name(port)
        if nxt is None or abs(nxt.index - sw.index) != 1:
            self._count_switch(sw, t, "drops")
            self._drop(t, p, "intercepted", sw.name)
            return
        self._count_switch(sw, t, "forwards")
        self.future[t + delay].append((nxt.index, p))

    def _deliver(self, t, p: _Pkt):
        if not p.legit:
            return
        latency = t - p.born
        self.delivered += 1
        self.latency_sum += latency
        if p.born < self.window:
            self.obs["delivered_before"] += 1
        else:
            self.obs["delivered_after"] += 1
        if p.dst == self.victim_host:
            self.victim_delivery_ticks.append(t)
        if p.probe:
            (self.probe_before if p.born < self.window else self.probe_after).append(latency)
        acc = self.timing["hit" if p.first_hit else "miss"]
        acc[0] += latency
        acc[1] += 1
        self._event(t, f"h{p.dst}", "deliver",
                    f"pkt={p.id} latency={latency} first_hop={'hit' if p.first_hit else 'miss'}")

    # -- step 6: buffers -----------------------------------------------------------------

    def _buffers(self, t):
        limit = self.cfg.buffer_timeout
        for sw in self.switches:
            q = sw.buf_order
            while q and q[0][0] + limit <= t:
                _, buf = q.popleft()
                p = sw.buffered.pop(buf, None)
                if p is not None:
                    self._drop(t, p, "buffer_timeout", sw.name)

    # -- driver --------------------------------------------------------------------------

    def run(self) -> SimReport:
        end = self.cfg.ticks + self.cfg.drain_ticks
        for t in range(end):
            self._hooks(t)
            self._traffic(t)
            self._channel(t)
            self._controller(t)
            self._switch_step(t, self.future.pop(t, ()))
            self._buffers(t)
        return self._report(end)

    def _report(self, end) -> SimReport:
        in_flight = sum(1 for pkts in self.future.values() for _, p in pkts if p.legit)
        in_flight += sum(1 for sw in self.switches for p in sw.buffered.values() if p.legit)
        cfg = self.cfg

        def avg(pair):
            return str(Fraction(pair[0], pair[1])) if pair[1] else None

        obs = dict(self.obs)
        for key in ("attack_packets", "queue_drops", "saturated_ticks_before", "saturated_ticks_after",
                    "injected_before", "injected_after", "delivered_before", "delivered_after",
                    "legit_ctrl_enqueued_after", "legit_ctrl_processed_after", "malicious_drops",
                    "flowmods_sent", "flowmods_after_jam", "target_lookups_after", "target_misses_after",
                    "legit_flowmods_rejected", "bogus_flowmods_rejected", "victim_switch_forwards_after",
                    "victim_switch_drops_after"):
            obs.setdefault(key, 0)
        obs.update({
            "window_start": self.window,
            "victim_dpid": self.victim_dpid,
            "victim_host": self.victim_host,
            "target_switch": self.target_switch,
            "packetin_latency_before": avg(self.pin_lat["before"]),
            "packetin_latency_after": avg(self.pin_lat["after"]),
            "app_processed_at_start": self.app_at_start or {n: a.processed for n, a in self.apps.items()},
            "jam_tick": self.jam_tick,
            "victim_delivery_ticks": self.victim_delivery_ticks,
            "probe_min_latency_before": min(self.probe_before) if self.probe_before else None,
            "probe_avg_latency_after": (str(Fraction(sum(self.probe_after), len(self.probe_after)))
                                        if self.probe_after else None),
            "timing": {"hit_avg_latency": avg(self.timing["hit"]), "hits": self.timing["hit"][1],
                       "miss_avg_latency": avg(self.timing["miss"]), "misses": self.timing["miss"][1]},
        })
        victim_loc = self.view_hosts.get(self.victim_host)
        path = None
        if victim_loc is not None:
            path = self.view_path(f"s{self.host_switch[0]}", victim_loc[0])
        final = {
            "controller_alive": self.alive,
            "switch_table": {str(d): o for d, o in sorted(self.table.items())},
            "max_switch_table": self.max_table,
            "subscribers": list(self.subscribers),
            "apps": {n: {"alive": a.alive, "processed": a.processed, "jammed": a.jammed}
                     for n, a in self.apps.items()},
            "network_view": {
                "links": sorted(sorted([a, b], key=_node_order) for a, nb in self.view_links.items()
                                for b in nb if _node_order(a) < _node_order(b)),
                "hosts": {f"h{j}": list(loc) for j, loc in sorted(self.view_hosts.items())},
            },
            "physical_hosts": {f"h{j}": [f"s{self.host_switch[j]}", f"h{j}"] for j in range(cfg.num_hosts)},
            "victim_view_path": path,
            "switches": {sw.name: {"connected": sw.connected, "crashed": sw.crashed,
                                   "rules": len(sw.rules), "max_rules": sw.max_rules}
                         for sw in self.switches},
        }
        return SimReport(
            config=cfg,
            scenarios=self.scenarios,
            injected=self.injected,
            delivered=self.delivered,
            dropped=dict(sorted(self.dropped.items())),
            in_flight=in_flight,
            packetin_total=self.packetin_total,
            disconnections=tuple(self.disconnections),
            controller_crash_tick=self.crash_tick,
            per_app_processed={n: a.processed for n, a in self.apps.items()},
            avg_packet_latency_ticks=Fraction(self.latency_sum, self.delivered) if self.delivered else Fraction(0),
            eavesdrop_transcript_len=self.transcript,
            tampered_count=self.tampered,
            observables=obs,
            final_state=final,
            event_trace=tuple(self.trace),
        )


def run(config: SimConfig, scenarios=()) -> SimReport:
    return Simulator(config, scenarios).run()
