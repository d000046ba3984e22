"""The simulated network world: topology, movement, transport, failures.

One `World` owns one event engine plus the overlay ring, mobility manager,
per-partition scheduler views, and the authentication service, and drives
them from a parsed scenario. Mobiles follow their traces; coverage deltas
trigger AP association changes (Personal-AP migration or plain
re-association) and, across partitions, the controller handover protocol.
Transport streams are sampled on a fixed cadence with a rate cap: a stream
delivers min(demand, path bottleneck) when connected, admitted, and
forwarded by the access gate, and zero for a recovery lag after any
re-admission (the configured TCP-recovery stand-in).
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

from .authn import AuthnService, LocationGroup
from .engine import EventEngine
from .errors import NotAMember, SdedgeError
from .mobility import MobilityManager
from .report import MetricsReport
from .ring import OverlayRing
from .scenario import Params, Scenario, StreamDecl, WaypointDecl
from .scheduler import APStatus, FlowRequest, PartitionView, ViewEvent, update_partition_view


@dataclass
class StreamState:
    decl: StreamDecl
    started: bool = False
    ended: bool = False
    placed: bool = False
    gap_until: float = 0.0
    gate_blocked: bool = False

    @property
    def name(self) -> str:
        return self.decl.name


@dataclass
class MDState:
    name: str
    position: tuple[float, float] | None = None
    status: str = "staying"
    connected: bool = False
    partition: str | None = None  # controller name of current view


@dataclass
class APRuntime:
    name: str
    position: tuple[float, float]
    radius: float
    capacity: float
    techs: frozenset[str]
    alive: bool = True


class World:
    """Deterministic simulation of one scenario run."""

    def __init__(self, scenario: Scenario, params: Params | None = None):
        self.scenario = scenario
        self.params = params if params is not None else scenario.params
        p = self.params
        self.engine = EventEngine(seed=p.seed, record_trace=True)

        # --- controllers & overlay -------------------------------------
        declared = scenario.controllers
        active = declared[: p.controllers] if p.controllers else declared
        self.ring = OverlayRing(m=p.m, replication=p.r)
        self.cid_of: dict[str, int] = {}
        self.name_of: dict[int, str] = {}
        for decl in active:
            cid = decl.key if decl.key is not None else self.ring.hash_id(decl.name)
            if cid in self.name_of:
                raise SdedgeError(f"controller {decl.name} collides with {self.name_of[cid]} at key {cid}")
            self.ring.join(cid)
            self.cid_of[decl.name] = cid
            self.name_of[cid] = decl.name

        self.mobility = MobilityManager(
            self.ring, link_latency=p.link_latency, coverage_check=self._covers
        )

        # --- partitions --------------------------------------------------
        self.partition_of: dict[str, str] = {}
        if p.controllers:
            names = [c.name for c in active]
            for i, ap in enumerate(scenario.aps):
                self.partition_of[ap.name] = names[i % len(names)]
        else:
            for ap in scenario.aps:
                self.partition_of[ap.name] = ap.partition

        self.aps: dict[str, APRuntime] = {}
        self.views: dict[str, PartitionView] = {c.name: PartitionView(controller=c.name) for c in active}
        for ap in scenario.aps:
            self.aps[ap.name] = APRuntime(
                ap.name, (ap.x, ap.y), ap.radius, ap.capacity, frozenset(ap.techs)
            )
            view = self.views[self.partition_of[ap.name]]
            view.ap_status[ap.name] = APStatus(
                ap.name, capacity=ap.capacity, radio_techs=frozenset(ap.techs),
                position=(ap.x, ap.y), radius=ap.radius,
            )

        # --- links / paths ------------------------------------------------
        self.adjacency: dict[str, list[tuple[str, float, float]]] = {}
        for link in scenario.links:
            self.adjacency.setdefault(link.a, []).append((link.b, link.rate, link.latency))
            self.adjacency.setdefault(link.b, []).append((link.a, link.rate, link.latency))
        self._bottleneck_cache: dict[tuple[str, str], float] = {}

        # --- authentication ------------------------------------------------
        self.authn = AuthnService(mode=p.mode, key_freshness=p.key_freshness)
        for g in scenario.groups:
            self.authn.register_group(LocationGroup(g.name, frozenset(g.members)))

        # --- device & stream state -------------------------------------------
        self.mds: dict[str, MDState] = {
            m.name: MDState(m.name, position=(m.x, m.y) if m.x is not None else None)
            for m in scenario.mds
        }
        self.streams: dict[str, StreamState] = {s.name: StreamState(s) for s in scenario.streams}
        self._md_streams: dict[str, list[StreamState]] = {}
        for st in self.streams.values():
            self._md_streams.setdefault(st.decl.md, []).append(st)

        # --- metrics ------------------------------------------------------------
        self.throughput_rows: list[tuple[float, str, float]] = []
        self.handover_rows: list[dict] = []
        self.packet_in: dict[str, int] = {c.name: 0 for c in active}
        self.lookup_hops: dict[int, int] = {}
        self.record_losses: list[str] = []
        self.delivery_log: list[tuple[float, str, str, int]] = []  # t, md, ap, epoch
        self.protocol_log: list[tuple[float, str, str]] = []       # t, step, md
        self._pi_busy: dict[str, float] = {c.name: 0.0 for c in active}

        self.ring.lookup_observer = self._on_lookup
        self.mobility.step_observer = self._on_protocol_step

        self._bootstrap()
        self._schedule_all()

    # ------------------------------------------------------------------ wiring

    def _on_lookup(self, hops: int) -> None:
        self.lookup_hops[hops] = self.lookup_hops.get(hops, 0) + 1

    def _on_protocol_step(self, step: str, md: str) -> None:
        self.protocol_log.append((self.engine.now, step, md))

    def _covers(self, md: str, ap_name: str) -> bool:
        ap = self.aps.get(ap_name)
        pos = self.mds[md].position
        if ap is None or not ap.alive or pos is None:
            return False
        return math.dist(ap.position, pos) <= ap.radius

    def coverage_set(self, md: str) -> list[str]:
        return sorted(a for a in self.aps if self._covers(md, a))

    def bottleneck(self, ap_name: str, dst: str) -> float:
        """min(AP capacity, link rates) along the AP-to-destination path."""
        key = (ap_name, dst)
        cached = self._bottleneck_cache.get(key)
        if cached is not None:
            return cached
        best: dict[str, float] = {ap_name: math.inf}
        queue = deque([ap_name])
        while queue:
            node = queue.popleft()
            for nxt, rate, _lat in self.adjacency.get(node, []):
                width = min(best[node], rate)
                if width > best.get(nxt, 0.0):
                    best[nxt] = width
                    queue.append(nxt)
        rate = best.get(dst, 0.0)
        rate = min(rate, self.aps[ap_name].capacity)
        self._bottleneck_cache[key] = rate
        return rate

    # ------------------------------------------------------------------ bootstrap

    def _bootstrap(self) -> None:
        for md in sorted(self.mds):
            state = self.mds[md]
            if state.position is None:
                continue
            covering = self.coverage_set(md)
            if not covering:
                continue
            ap_name = self._choose_ap(md, covering, hint=None)
            if ap_name is None:
                continue
            controller = self.partition_of[ap_name]
            self.mobility.establish_association(md, ap_name)
            self.mobility.register_md(md, self.cid_of[controller])
            state.connected = True
            state.partition = controller
            state.status = "joining"
            update_partition_view(
                self.views[controller],
                ViewEvent("md-join", md_id=md, position=state.position, status="joining"),
            )

    def _schedule_all(self) -> None:
        p = self.params
        eng = self.engine
        if self.scenario.groups:
            eng.schedule(0.0, "timer", self._rotate_all, note="rotate")
            for ap_name in sorted(self.aps):
                if self.authn.group_of.get(ap_name):
                    eng.schedule(0.0, "beacon", lambda a=ap_name: self._beacon(a), note=f"beacon:{ap_name}")
        for wp in self.scenario.waypoints:
            eng.schedule(wp.t, "md-move", lambda w=wp: self.apply_move(w.md, w), note=f"move:{wp.md}")
        for st in self.streams.values():
            eng.schedule(st.decl.start, "flow-start", lambda s=st: self._flow_start(s), note=f"start:{st.name}")
            end = st.decl.end
            if end is not None and end <= p.duration:
                eng.schedule(end, "flow-end", lambda s=st: self._flow_end(s), note=f"end:{st.name}")
        for f in self.scenario.failures:
            eng.schedule(f.at, "failure", lambda fd=f: self.inject_failure(fd.kind, fd.name), note=f"fail:{f.name}")
        w = self.scenario.workload
        if w is not None and w.rate_per_ap > 0:
            for ap_name in sorted(self.aps):
                eng.schedule(w.start, "message-delivery", lambda a=ap_name: self._packet_in_arrival(a),
                             note=f"packetin:{ap_name}")

    # ------------------------------------------------------------------ beacons & keys

    def _rotate_all(self) -> None:
        now = self.engine.now
        for gid in sorted(self.authn.groups):
            group = self.authn.groups[gid]
            down = {ap for ap in group.members if not self.aps[ap].alive}
            self.authn.rotate_group_keys(gid, now, down_aps=down)
        self.engine.schedule(
            round(now + self.params.regrant_grace, 9), "timer", self._expire_grants, note="grant-expiry"
        )
        nxt = round(now + self.params.rotation_period, 9)
        if nxt <= self.params.duration:
            self.engine.schedule(nxt, "timer", self._rotate_all, note="rotate")

    def _expire_grants(self) -> None:
        self.authn.expire_stale_grants(self.engine.now, self.params.regrant_grace)

    def _beacon(self, ap_name: str) -> None:
        now = self.engine.now
        ap = self.aps[ap_name]
        if ap.alive and self.authn.current_key(ap_name) is not None:
            self.engine.schedule(
                round(now + self.params.wireless_latency, 9),
                "message-delivery",
                lambda: self._deliver_beacon(ap_name),
                note=f"key:{ap_name}",
            )
        nxt = round(now + self.params.beacon_period, 9)
        if nxt <= self.params.duration and ap.alive:
            self.engine.schedule(nxt, "beacon", lambda: self._beacon(ap_name), note=f"beacon:{ap_name}")

    def _deliver_beacon(self, ap_name: str) -> None:
        """Recipients are whoever is inside coverage at delivery time."""
        now = self.engine.now
        key = self.authn.current_key(ap_name)
        if key is None or not self.aps[ap_name].alive:
            return
        for md in sorted(self.mds):
            if not self._covers(md, ap_name):
                continue
            self.authn.receive_beacon(md, ap_name, now)
            self.delivery_log.append((now, md, ap_name, key.epoch))
            self._maybe_authenticate(md)

    def _maybe_authenticate(self, md: str) -> None:
        """Re-authenticate off a fresh wallet when ungranted or epoch-stale."""
        if not self.authn.active:
            return
        serving = self.mobility.association_ap.get(md)
        if serving is None:
            return
        gid = self.authn.group_of.get(serving)
        if gid is None:
            return
        grant = self.authn.grants.get((md, gid))
        if grant is not None and grant.epoch == self.authn.epochs.get(gid):
            return
        decision = self.authn.authenticate(md, gid, self.engine.now)
        if decision.granted:
            self._readmit_streams(md)

    def _readmit_streams(self, md: str) -> None:
        """A grant after a gate block costs the transport recovery lag."""
        now = self.engine.now
        for st in self._md_streams.get(md, ()):
            if st.gate_blocked:
                st.gap_until = max(st.gap_until, round(now + self.params.recovery_lag, 9))
                st.gate_blocked = False

    # ------------------------------------------------------------------ movement

    def apply_move(self, md: str, wp: WaypointDecl) -> None:
        state = self.mds[md]
        state.position = (wp.x, wp.y)
        state.status = wp.status
        now = self.engine.now

        if state.partition is not None:
            presence = self.views[state.partition].md_roster.get(md)
            if presence is not None:
                presence.position = state.position
                presence.status = wp.status

        # presence proof breaks as soon as any member AP's coverage is gone
        if self.authn.active:
            for (gmd, gid) in list(self.authn.grants):
                if gmd != md:
                    continue
                members = self.authn.groups[gid].members
                if any(not self._covers(md, ap) for ap in members):
                    self.authn.revoke(md, gid)

        serving = self.mobility.association_ap.get(md)
        if serving is not None and state.connected and self._covers(md, serving):
            return  # still inside the serving AP's disc: nothing to do

        covering = self.coverage_set(md)
        if not covering:
            self._disconnect(md, at=now)
            return
        hint = self._largest_flow_hint(md)
        ap_name = self._choose_ap(md, covering, hint)
        if ap_name is None:
            self._disconnect(md, at=now)
            return
        self._associate(md, ap_name, reason="move")

    def _largest_flow_hint(self, md: str) -> FlowRequest | None:
        active = [st for st in self._md_streams.get(md, ()) if st.started and not st.ended]
        if not active:
            return None
        lead = sorted(active, key=lambda st: (-st.decl.demand, st.name))[0]
        return FlowRequest(md, lead.decl.flow_type, lead.decl.demand, lead.decl.tech,
                           origin=self.mds[md].position)

    def _choose_ap(self, md: str, covering: list[str], hint: FlowRequest | None) -> str | None:
        """Best covering AP across partitions: max residual, ties by name."""
        best: tuple[float, str] | None = None
        for ap_name in covering:
            view = self.views[self.partition_of[ap_name]]
            ap = view.ap_status.get(ap_name)
            if ap is None:
                continue
            if hint is not None and not ap.supports(hint.required_tech):
                continue
            score = (-ap.residual, ap_name)
            if best is None or score < best:
                best = score
        return best[1] if best else None

    def _associate(self, md: str, new_ap: str, reason: str) -> None:
        now = self.engine.now
        state = self.mds[md]
        old_ap = self.mobility.association_ap.get(md)
        if old_ap == new_ap and state.connected:
            return
        new_ctrl = self.partition_of[new_ap]
        old_ctrl = state.partition

        handover_latency = 0.0
        messages = 0
        if md not in self.mobility.registered:
            self.mobility.establish_association(md, new_ap)
            self.mobility.register_md(md, self.cid_of[new_ctrl])
            kind = "associate"
            gap = self.params.reassociation_delay
        else:
            if old_ctrl is not None and old_ctrl != new_ctrl:
                outcome = self.mobility.handover(md, self.cid_of[new_ctrl])
                handover_latency = outcome.latency
                messages = outcome.messages
            if self.params.personal_ap_enabled and old_ap is not None:
                self.mobility.personal_ap_migrate(md, old_ap, new_ap)
                kind = "pap-migrate"
                gap = self.params.pap_migration_delay
            else:
                self.mobility.establish_association(md, new_ap)
                kind = "reassociate"
                gap = self.params.reassociation_delay

        # roster moves between partition views
        if old_ctrl is not None and old_ctrl != new_ctrl:
            if md in self.views[old_ctrl].md_roster:
                update_partition_view(self.views[old_ctrl], ViewEvent("md-leave", md_id=md))
        if old_ctrl != new_ctrl or md not in self.views[new_ctrl].md_roster:
            update_partition_view(
                self.views[new_ctrl],
                ViewEvent("md-join", md_id=md, position=state.position, status=state.status),
            )
        state.partition = new_ctrl
        state.connected = True

        total = round(gap + handover_latency, 9)
        for st in self._md_streams.get(md, ()):
            st.gap_until = max(st.gap_until, round(now + total, 9))
        self._replace_flows(md, new_ap)
        self.handover_rows.append(
            {
                "t": now,
                "md": md,
                "kind": kind,
                "from_ap": old_ap,
                "to_ap": new_ap,
                "from_controller": old_ctrl,
                "to_controller": new_ctrl,
                "latency": total,
                "messages": messages,
            }
        )

    def _disconnect(self, md: str, at: float) -> None:
        state = self.mds[md]
        if not state.connected:
            return
        state.connected = False
        for st in self._md_streams.get(md, ()):
            self._unplace(st)

    # ------------------------------------------------------------------ flows

    def _session_flows(self, md: str):
        session = self.mobility.session_of(md)
        return session.active_flows if session is not None else {}

    def _flow_start(self, st: StreamState) -> None:
        st.started = True
        md = st.decl.md
        self._session_flows(md)[st.name] = st.decl.demand
        assoc = self.mobility.associations.get(md)
        if assoc is not None:
            assoc.flow_status.add(st.name)
        serving = self.mobility.association_ap.get(md)
        if serving is not None and self.mds[md].connected:
            self._place_flow(st, serving)
        self._tick(st)  # first sample at the start instant

    def _flow_end(self, st: StreamState) -> None:
        st.ended = True
        md = st.decl.md
        self._unplace(st)
        self._session_flows(md).pop(st.name, None)
        assoc = self.mobility.associations.get(md)
        if assoc is not None:
            assoc.flow_status.discard(st.name)

    def _place_flow(self, st: StreamState, ap_name: str) -> bool:
        """Admission control: the flow rides the association if it fits."""
        if st.placed or not st.started or st.ended:
            return st.placed
        view = self.views[self.partition_of[ap_name]]
        ap = view.ap_status.get(ap_name)
        if ap is None or ap.residual < st.decl.demand - 1e-9:
            return False
        update_partition_view(
            view,
            ViewEvent(
                "flow-start", md_id=st.decl.md, ap_id=ap_name, flow_id=st.name,
                demand=st.decl.demand, flow_type=st.decl.flow_type, required_tech=st.decl.tech,
            ),
        )
        st.placed = True
        controller = self.partition_of[ap_name]
        self.packet_in[controller] = self.packet_in.get(controller, 0) + 1
        return True

    def _unplace(self, st: StreamState) -> None:
        if not st.placed:
            return
        for view in self.views.values():
            if st.name in view.open_flows:
                update_partition_view(view, ViewEvent("flow-end", flow_id=st.name))
                break
        st.placed = False

    def _replace_flows(self, md: str, new_ap: str) -> None:
        for st in sorted(self._md_streams.get(md, ()), key=lambda s: s.name):
            self._unplace(st)
            self._place_flow(st, new_ap)

    # ------------------------------------------------------------------ transport

    def _tick(self, st: StreamState) -> None:
        now = self.engine.now
        md = st.decl.md
        sample = 0.0
        if st.started and not st.ended:
            state = self.mds[md]
            serving = self.mobility.association_ap.get(md)
            connected = state.connected and serving is not None and self.aps[serving].alive
            if connected:
                if self.authn.gate_traffic(serving, md) == "drop":
                    st.gate_blocked = True
                elif now >= st.gap_until:
                    if not st.placed:
                        self._place_flow(st, serving)
                    if st.placed:
                        sample = min(st.decl.demand, self.bottleneck(serving, st.decl.dst))
        self.throughput_rows.append((now, st.name, sample))
        if sample > 0:
            assoc = self.mobility.associations.get(md)
            if assoc is not None:
                assoc.frame_seq += 1
        nxt = round(now + self.params.sample_period, 9)
        horizon = self.params.duration if st.decl.end is None else min(st.decl.end, self.params.duration)
        if nxt <= horizon and not st.ended:
            self.engine.schedule(nxt, "timer", lambda: self._tick(st), note=f"tick:{st.name}")

    # ------------------------------------------------------------------ failures

    def inject_failure(self, kind: str, name: str) -> None:
        now = self.engine.now
        delay = self.params.detection_delay
        if kind == "controller":
            cid = self.cid_of.get(name)
            if cid is None or not self.ring.is_live(cid):
                return  # unknown-by-override or already failed: no-op
            self.ring.crash(cid)
            self.engine.schedule(
                round(now + delay, 9), "failure", lambda: self._recover_controller(name, cid),
                note=f"recover:{name}",
            )
        elif kind == "ap":
            ap = self.aps.get(name)
            if ap is None or not ap.alive:
                return
            ap.alive = False
            self.engine.schedule(
                round(now + delay, 9), "failure", lambda: self._recover_ap(name), note=f"recover:{name}"
            )
        else:
            raise NotAMember(f"cannot fail a {kind!r}")

    def _recover_controller(self, name: str, cid: int) -> None:
        report = self.mobility.recover_controller_failure(cid)
        self.record_losses.extend(report.lost)
        if report.adopter is None:
            return
        adopter_name = self.name_of[report.adopter]
        # the adopter absorbs the dead controller's partition wholesale
        dead_view = self.views.pop(name)
        target = self.views[adopter_name]
        target.ap_status.update(dead_view.ap_status)
        target.md_roster.update(dead_view.md_roster)
        target.open_flows.update(dead_view.open_flows)
        for ap_name, ctrl in list(self.partition_of.items()):
            if ctrl == name:
                self.partition_of[ap_name] = adopter_name
        for md_state in self.mds.values():
            if md_state.partition == name:
                md_state.partition = adopter_name
        self.cid_of.pop(name, None)
        self._pi_busy.pop(name, None)

    def _recover_ap(self, name: str) -> None:
        controller = self.partition_of[name]
        view = self.views[controller]
        reassignments = self.mobility.recover_ap_failure(
            name, view, personal_ap=self.params.personal_ap_enabled
        )
        now = self.engine.now
        gap = (
            self.params.pap_migration_delay
            if self.params.personal_ap_enabled
            else self.params.reassociation_delay
        )
        for r in reassignments:
            state = self.mds.get(r.md_id)
            if r.new_ap is None:
                if state is not None:
                    state.connected = False
                for st in self._md_streams.get(r.md_id, ()):
                    st.placed = False
                continue
            if state is not None:
                state.connected = True
            for st in self._md_streams.get(r.md_id, ()):
                st.placed = st.name in view.open_flows
                st.gap_until = max(st.gap_until, round(now + gap, 9))
            self.packet_in[controller] = self.packet_in.get(controller, 0) + len(r.moved_flows)
            self.handover_rows.append(
                {
                    "t": now,
                    "md": r.md_id,
                    "kind": "ap-recovery",
                    "from_ap": name,
                    "to_ap": r.new_ap,
                    "from_controller": controller,
                    "to_controller": controller,
                    "latency": gap,
                    "messages": 0,
                }
            )

    # ------------------------------------------------------------------ packet-in workload

    def _packet_in_arrival(self, ap_name: str) -> None:
        now = self.engine.now
        w = self.scenario.workload
        controller = self.partition_of[ap_name]
        horizon = min(w.until, self.params.duration) if w.until is not None else self.params.duration
        busy = self._pi_busy.get(controller, 0.0)
        done = max(now, busy) + w.service_time
        if done <= horizon:
            self._pi_busy[controller] = done
            self.packet_in[controller] = self.packet_in.get(controller, 0) + 1
        nxt = round(now + 1.0 / w.rate_per_ap, 9)
        if nxt <= horizon and self.aps[ap_name].alive:
            self.engine.schedule(nxt, "message-delivery", lambda: self._packet_in_arrival(ap_name),
                                 note=f"packetin:{ap_name}")

    # ------------------------------------------------------------------ run & report

    def run(self) -> MetricsReport:
        self.engine.run_until(self.params.duration)
        return self.record_metrics()

    def record_metrics(self) -> MetricsReport:
        auth_events = [
            {
                "t": d.at,
                "md": d.md_id,
                "group": d.group_id,
                "granted": d.granted,
                "reason": d.reason,
            }
            for d in self.authn.auth_log
        ]
        return MetricsReport(
            scenario=self.scenario.name,
            seed=self.params.seed,
            mode=self.params.mode,
            personal_ap=self.params.personal_ap_enabled,
            duration=self.params.duration,
            throughput=sorted(self.throughput_rows, key=lambda r: (r[0], r[1])),
            handovers=self.handover_rows,
            packet_in=dict(sorted(self.packet_in.items())),
            lookup_hops=dict(sorted(self.lookup_hops.items())),
            auth_events=auth_events,
            record_losses=list(self.record_losses),
        )


def run_scenario(scenario: Scenario, overrides: Params | None = None) -> MetricsReport:
    return World(scenario, params=overrides).run()
