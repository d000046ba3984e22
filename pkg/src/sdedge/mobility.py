"""Distributed mobility management over the controller overlay.

Supervisory records (who served a device before and who serves it now)
live on the ring at the owner of the device's hashed id. Sessions live at
the serving controller and travel with handovers. The handover protocol
is the four-step exchange: locate the supervisor, read the previous
controller from it, fetch the session directly from that controller, then
rewrite the supervisory record. The supervisor is bookkeeping only; it
never sits on the data path.

Associations between a device and its AP are tracked as full state
bundles so the Personal AP protocol can reinstate them at a new AP
without the device noticing a re-association.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

from .errors import (
    AlreadyRegistered,
    HandoverFailure,
    MigrationRefused,
    NotAMember,
    NotAssociated,
    RoutingFailure,
    UnknownMobile,
)
from .ring import OverlayRing, RingView, fnv1a64
from .scheduler import FlowRequest, PartitionView, select_ap_for_join
from .errors import NoApAvailable

SESSIONS = "sessions"


def mac_of(name: str) -> str:
    """Deterministic locally-administered MAC for a named node."""
    h = fnv1a64(name.encode("utf-8"))
    octets = [(h >> (8 * i)) & 0xFF for i in range(5)]
    return "02:" + ":".join(f"{o:02x}" for o in octets)


@dataclass
class SupervisoryRecord:
    md_id: str
    md_key: int
    previous: int | None
    current: int


@dataclass
class AssociationRecord:
    md_mac: str
    ap_mac: str
    association_id: int
    frame_seq: int
    security_keys: tuple[str, ...]
    flow_status: set[str] = field(default_factory=set)

    def md_visible(self) -> tuple:
        """The projection the device can observe; invariant under migration."""
        return (self.md_mac, self.association_id, self.frame_seq, self.security_keys, frozenset(self.flow_status))


@dataclass
class SessionState:
    md_id: str
    partition: int
    association: AssociationRecord | None = None
    active_flows: dict[str, float] = field(default_factory=dict)  # flow id -> demand


@dataclass
class HandoverOutcome:
    md_id: str
    previous: int | None
    new: int
    messages: int
    latency: float
    rerouted_flows: int
    noop: bool = False
    session_from_replica: bool = False


@dataclass
class RecoveryReport:
    failed: int
    adopter: int | None
    recovered_records: int
    recovered_sessions: int
    lost: list[str]


@dataclass
class Reassignment:
    md_id: str
    old_ap: str
    new_ap: str | None
    moved_flows: list[str] = field(default_factory=list)
    stranded_flows: list[str] = field(default_factory=list)


class MobilityManager:
    """Registration, supervisory tracking, handover, and recovery paths."""

    def __init__(
        self,
        ring: OverlayRing,
        link_latency: float = 0.001,
        coverage_check: Callable[[str, str], bool] | None = None,
    ):
        self.ring = ring
        self.link_latency = link_latency
        self.coverage_check = coverage_check
        self.registered: dict[str, int] = {}          # md id -> ring key
        self.associations: dict[str, AssociationRecord] = {}
        self.association_ap: dict[str, str] = {}      # md id -> serving AP id
        self._assoc_seq = 0
        # observer(step, md_id) fired per protocol step, e.g. for trace capture
        self.step_observer: Callable[[str, str], None] | None = None

    def _step(self, step: str, md_id: str) -> None:
        if self.step_observer is not None:
            self.step_observer(step, md_id)

    # -- registration / lookup ------------------------------------------------

    def register_md(self, md_id: str, first_controller: int) -> SupervisoryRecord:
        if md_id in self.registered:
            raise AlreadyRegistered(md_id)
        if not self.ring.is_live(first_controller):
            raise NotAMember(f"controller {first_controller} is not live")
        key = self.ring.hash_id(md_id)
        record = SupervisoryRecord(md_id=md_id, md_key=key, previous=None, current=first_controller)
        self.ring.put_record(md_id, record, key=key)
        self.registered[md_id] = key
        node = self.ring.node(first_controller)
        node.control.setdefault(SESSIONS, {})[md_id] = SessionState(md_id=md_id, partition=first_controller)
        self.ring.replicate_to_successors(first_controller)
        return record

    def locate_supervisory(self, start: int, md_id: str) -> int:
        owner, _ = self.ring.route_with_fallback(start, self.ring.hash_id(md_id))
        return owner

    def get_supervisory(self, md_id: str) -> SupervisoryRecord:
        key = self.registered.get(md_id)
        if key is None:
            raise UnknownMobile(md_id)
        rec = self.ring.get_record(md_id, key=key)
        if rec is None:
            raise UnknownMobile(f"supervisory record for {md_id} is gone")
        return rec.value

    def session_of(self, md_id: str) -> SessionState | None:
        for nid in self.ring.live_ids():
            sess = self.ring.nodes[nid].control.get(SESSIONS, {}).get(md_id)
            if sess is not None:
                return sess
        return None

    # -- handover ------------------------------------------------------------------

    def handover(self, md_id: str, new_controller: int) -> HandoverOutcome:
        """Four-step handover of `md_id` into `new_controller`'s partition.

        1. locate the supervisor by hashed id, 2. read the record there,
        3. fetch the session directly from the previous controller (its
        successor replica when it is down), 4. rewrite the supervisory
        record last, so a failed fetch leaves it intact and retryable.
        """
        key = self.registered.get(md_id)
        if key is None:
            raise UnknownMobile(md_id)
        if not self.ring.is_live(new_controller):
            raise HandoverFailure(f"target controller {new_controller} is not live")

        messages = 0
        try:
            supervisor, hops = self.ring.route_with_fallback(new_controller, key)
        except RoutingFailure as exc:
            raise HandoverFailure(f"cannot reach supervisor of {md_id}: {exc}") from exc
        messages += hops
        self._step("locate-supervisor", md_id)

        sup_node = self.ring.node(supervisor)
        stored = sup_node.store.get(md_id)
        if stored is None:
            for src in sorted(sup_node.replica_store):
                stored = sup_node.replica_store[src].records.get(md_id)
                if stored is not None:
                    break
        if stored is None:
            raise HandoverFailure(f"supervisory record for {md_id} lost beyond replicas")
        record: SupervisoryRecord = stored.value
        messages += 2  # record request + response
        self._step("read-supervisor", md_id)

        previous = record.current
        if previous == new_controller:
            return HandoverOutcome(
                md_id=md_id, previous=record.previous, new=new_controller,
                messages=messages, latency=messages * self.link_latency,
                rerouted_flows=0, noop=True,
            )

        session, from_replica = self._fetch_session(md_id, previous)
        messages += 3  # fetch request + transfer + ack
        if session is None:
            raise HandoverFailure(f"session for {md_id} unrecoverable: {previous} and replicas are gone")
        self._step("fetch-session", md_id)

        session.partition = new_controller
        new_node = self.ring.node(new_controller)
        new_node.control.setdefault(SESSIONS, {})[md_id] = session
        self.ring.replicate_to_successors(new_controller)

        record.previous = previous
        record.current = new_controller
        self.ring.replicate_to_successors(supervisor)
        messages += 2  # supervisor update + ack
        self._step("update-supervisor", md_id)

        return HandoverOutcome(
            md_id=md_id, previous=previous, new=new_controller,
            messages=messages, latency=messages * self.link_latency,
            rerouted_flows=len(session.active_flows), session_from_replica=from_replica,
        )

    def _fetch_session(self, md_id: str, previous: int) -> tuple[SessionState | None, bool]:
        prev_node = self.ring.nodes.get(previous)
        if prev_node is not None and prev_node.alive:
            session = prev_node.control.get(SESSIONS, {}).pop(md_id, None)
            if session is not None:
                self.ring.replicate_to_successors(previous)  # source retired its copy
                return session, False
        bundle = self.ring.find_replica_bundle(previous)
        if bundle is not None:
            # consume so a later adoption of the dead node cannot resurrect it
            session = bundle.control.get(SESSIONS, {}).pop(md_id, None)
            if session is not None:
                return session, True
        # previous controller alive but never had it (or everything is gone)
        return None, False

    # -- personal AP protocol ----------------------------------------------------------

    def establish_association(self, md_id: str, ap_id: str) -> AssociationRecord:
        """Plain (re-)association: fresh MAC-layer state, visible to the MD."""
        self._assoc_seq += 1
        record = AssociationRecord(
            md_mac=mac_of(md_id),
            ap_mac=mac_of(ap_id),
            association_id=self._assoc_seq,
            frame_seq=0,
            security_keys=(f"sk/{md_id}/{self._assoc_seq}",),
        )
        self.associations[md_id] = record
        self.association_ap[md_id] = ap_id
        return record

    def personal_ap_migrate(self, md_id: str, ap_old: str, ap_new: str) -> AssociationRecord:
        """Reinstate the association bundle at `ap_new`; the MD keeps seeing
        its old AP (only the AP-side MAC field changes)."""
        record = self.associations.get(md_id)
        if record is None or self.association_ap.get(md_id) != ap_old:
            raise NotAssociated(f"{md_id} holds no live association at {ap_old}")
        if ap_new == ap_old:
            return record
        if self.coverage_check is not None and not self.coverage_check(md_id, ap_new):
            raise MigrationRefused(f"{ap_new} does not cover {md_id}")
        record.ap_mac = mac_of(ap_new)
        self.association_ap[md_id] = ap_new
        return record

    def drop_association(self, md_id: str) -> None:
        self.associations.pop(md_id, None)
        self.association_ap.pop(md_id, None)

    # -- failure recovery ------------------------------------------------------------------

    def recover_controller_failure(self, failed: int) -> RecoveryReport:
        """Successor adoption of a crashed controller's records and sessions.

        Lost records are enumerated explicitly by comparing against the
        registration index; silence is never an outcome.
        """
        node = self.ring.nodes.get(failed)
        if node is None:
            raise UnknownMobile(f"no controller {failed}")
        if node.alive:
            self.ring.crash(failed)

        live_plus = self.ring.live_ids() + [failed]
        owner_view = RingView(live_plus)
        suspects = {md for md, key in self.registered.items() if owner_view.owner(key) == failed}

        adopter, recovered, control = self.ring.adopt_failed(failed)
        recovered_names = set(recovered)
        # a suspect is lost only if no live node can actually serve it now
        lost = sorted(
            md for md in suspects if self.ring.get_record(md, key=self.registered[md]) is None
        )
        for md in lost:
            self.registered.pop(md, None)

        # the adopter replaces the failed controller's role: supervisory
        # records that pointed at it now point at the adopter
        if adopter is not None:
            for nid in self.ring.live_ids():
                for stored in self.ring.nodes[nid].store.values():
                    rec = stored.value
                    if isinstance(rec, SupervisoryRecord):
                        if rec.current == failed:
                            rec.current = adopter
                        if rec.previous == failed:
                            rec.previous = adopter
            self.ring.refresh_replication()
        return RecoveryReport(
            failed=failed,
            adopter=adopter,
            recovered_records=len(recovered_names & suspects),
            recovered_sessions=len(control.get(SESSIONS, {})),
            lost=lost,
        )

    def recover_ap_failure(
        self, failed_ap: str, view: PartitionView, personal_ap: bool = False
    ) -> list[Reassignment]:
        """Reassign every MD of a failed AP across the partition's survivors.

        Flows keep their demand bookkeeping; associations survive via the
        Personal AP protocol when enabled. Flows with no feasible surviving
        AP are reported stranded.
        """
        affected = sorted(
            md for md, ap in self.association_ap.items() if ap == failed_ap
        )
        dead_flows = {f: rec for f, rec in view.open_flows.items() if rec.ap_id == failed_ap}
        view.ap_status.pop(failed_ap, None)
        for fid in dead_flows:
            del view.open_flows[fid]

        out: list[Reassignment] = []
        for md in affected:
            md_flows = sorted(
                (rec for rec in dead_flows.values() if rec.md_id == md),
                key=lambda r: (-r.demand, r.flow_id),
            )
            hint = None
            if md_flows:
                lead = md_flows[0]
                origin = None
                presence = view.md_roster.get(md)
                if presence is not None:
                    origin = presence.position
                hint = FlowRequest(md, lead.flow_type, lead.demand, lead.required_tech, origin)
            try:
                new_ap = select_ap_for_join(md, hint, view)
            except NoApAvailable:
                out.append(
                    Reassignment(md, failed_ap, None, stranded_flows=[r.flow_id for r in md_flows])
                )
                self.drop_association(md)
                continue

            if personal_ap:
                self.personal_ap_migrate(md, failed_ap, new_ap)
            else:
                self.establish_association(md, new_ap)

            moved, stranded = [], []
            for rec in md_flows:
                target = new_ap
                ap = view.ap_status[target]
                if not (ap.supports(rec.required_tech) and ap.residual >= rec.demand - 1e-9):
                    # per-flow fallback: any surviving AP that fits
                    target = None
                    for cand_id in sorted(view.ap_status):
                        cand = view.ap_status[cand_id]
                        if cand.supports(rec.required_tech) and cand.residual >= rec.demand - 1e-9:
                            target = cand_id
                            break
                if target is None:
                    stranded.append(rec.flow_id)
                    continue
                rec.ap_id = target
                view.ap_status[target].load += rec.demand
                view.open_flows[rec.flow_id] = rec
                moved.append(rec.flow_id)
            out.append(Reassignment(md, failed_ap, new_ap, moved_flows=moved, stranded_flows=stranded))
        return out
