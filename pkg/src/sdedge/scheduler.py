"""Per-partition view maintenance and flow-to-AP assignment.

Assignment is a generalized assignment problem: flows are items, APs are
bins bounded by residual capacity and filtered by radio technology and
disc coverage. The production path is a greedy heuristic (largest demand
first, placed on the most-residual feasible AP); `brute_force_assign` is
the exhaustive oracle used to bound its quality on small instances.
Utility is total satisfied demand in Mbps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

from .errors import NoApAvailable, OracleTooLarge, SchedulerError, UnknownMobile, UnmatchedRelease

ORACLE_MAX_REQUESTS = 8
ORACLE_MAX_APS = 4

MD_STATUSES = ("joining", "leaving", "staying")


@dataclass(frozen=True)
class FlowRequest:
    md_id: str
    flow_type: str
    demand: float
    required_tech: str | None = None
    origin: tuple[float, float] | None = None

    def __post_init__(self):
        if self.demand <= 0:
            raise ValueError(f"flow demand must be positive, got {self.demand}")


@dataclass
class APStatus:
    ap_id: str
    capacity: float
    load: float = 0.0
    radio_techs: frozenset[str] = frozenset({"wifi"})
    position: tuple[float, float] | None = None
    radius: float | None = None

    @property
    def residual(self) -> float:
        return self.capacity - self.load

    def covers(self, point: tuple[float, float] | None) -> bool:
        # unknown geometry on either side constrains nothing
        if point is None or self.position is None or self.radius is None:
            return True
        return math.dist(self.position, point) <= self.radius

    def supports(self, tech: str | None) -> bool:
        return tech is None or tech in self.radio_techs


@dataclass
class MDPresence:
    md_id: str
    status: str = "staying"
    position: tuple[float, float] | None = None


@dataclass
class FlowRecord:
    flow_id: str
    md_id: str
    ap_id: str
    demand: float
    flow_type: str = "data"
    required_tech: str | None = None


@dataclass
class PartitionView:
    controller: str
    ap_status: dict[str, APStatus] = field(default_factory=dict)
    md_roster: dict[str, MDPresence] = field(default_factory=dict)
    open_flows: dict[str, FlowRecord] = field(default_factory=dict)

    @property
    def density(self) -> int:
        return len(self.md_roster)


@dataclass(frozen=True)
class ViewEvent:
    kind: str  # md-join | md-leave | flow-start | flow-end
    md_id: str | None = None
    ap_id: str | None = None
    flow_id: str | None = None
    demand: float = 0.0
    position: tuple[float, float] | None = None
    status: str = "staying"
    flow_type: str = "data"
    required_tech: str | None = None


@dataclass
class Assignment:
    placements: dict[FlowRequest, str | None]
    utility: float

    @property
    def assigned(self) -> int:
        return sum(1 for ap in self.placements.values() if ap is not None)


def update_partition_view(view: PartitionView, event: ViewEvent) -> PartitionView:
    """Apply one roster/flow event to the view, in place."""
    if event.kind == "md-join":
        if event.status not in MD_STATUSES:
            raise ValueError(f"unknown MD status {event.status!r}")
        view.md_roster[event.md_id] = MDPresence(event.md_id, event.status, event.position)
    elif event.kind == "md-leave":
        if event.md_id not in view.md_roster:
            raise UnknownMobile(f"{event.md_id} is not in partition {view.controller}")
        del view.md_roster[event.md_id]
    elif event.kind == "flow-start":
        ap = view.ap_status.get(event.ap_id)
        if ap is None:
            raise SchedulerError(f"flow-start references unknown AP {event.ap_id}")
        if ap.load + event.demand > ap.capacity + 1e-9:
            raise SchedulerError(
                f"flow {event.flow_id} ({event.demand} Mbps) would overload {ap.ap_id}"
            )
        ap.load += event.demand
        view.open_flows[event.flow_id] = FlowRecord(
            event.flow_id, event.md_id, event.ap_id, event.demand,
            flow_type=event.flow_type, required_tech=event.required_tech,
        )
    elif event.kind == "flow-end":
        rec = view.open_flows.pop(event.flow_id, None)
        if rec is None:
            raise UnmatchedRelease(f"flow-end for {event.flow_id} without a flow-start")
        view.ap_status[rec.ap_id].load -= rec.demand
    else:
        raise ValueError(f"unknown view event kind {event.kind!r}")
    return view


def feasible_aps(request: FlowRequest, view: PartitionView, residuals: dict[str, float] | None = None):
    res = residuals if residuals is not None else {a: ap.residual for a, ap in view.ap_status.items()}
    out = []
    for ap_id in sorted(view.ap_status):
        ap = view.ap_status[ap_id]
        if ap.supports(request.required_tech) and ap.covers(request.origin) and res[ap_id] >= request.demand - 1e-9:
            out.append(ap)
    return out


def _canonical(requests) -> list[FlowRequest]:
    # total order so ties never depend on input order
    return sorted(requests, key=lambda r: (-r.demand, r.md_id, r.flow_type, r.required_tech or ""))


def assign_flows_greedy(requests, view: PartitionView) -> Assignment:
    """Largest demand first; each flow goes to the most-residual feasible AP.

    Infeasible flows stay unassigned; the view itself is never mutated.
    """
    residuals = {a: ap.residual for a, ap in view.ap_status.items()}
    placements: dict[FlowRequest, str | None] = {}
    utility = 0.0
    for req in _canonical(requests):
        cands = feasible_aps(req, view, residuals)
        if cands:
            # max residual, ties broken by AP id
            best = sorted(cands, key=lambda ap: (-residuals[ap.ap_id], ap.ap_id))[0]
            residuals[best.ap_id] -= req.demand
            placements[req] = best.ap_id
            utility += req.demand
        else:
            placements[req] = None
    return Assignment(placements=placements, utility=utility)


def brute_force_assign(requests, view: PartitionView) -> Assignment:
    """Exhaustive oracle: maximum-utility feasible mapping, lexicographic ties.

    Guarded to small instances; raises OracleTooLarge beyond them.
    """
    reqs = _canonical(requests)
    aps = sorted(view.ap_status)
    if len(reqs) > ORACLE_MAX_REQUESTS or len(aps) > ORACLE_MAX_APS:
        raise OracleTooLarge(
            f"{len(reqs)} requests x {len(aps)} APs exceeds the enumeration guard "
            f"({ORACLE_MAX_REQUESTS} x {ORACLE_MAX_APS})"
        )

    # static feasibility (tech + coverage); capacity is pruned during search
    options: list[list[str | None]] = []
    for req in reqs:
        feas = [ap.ap_id for ap in feasible_aps(req, view, {a: view.ap_status[a].capacity for a in aps})]
        options.append([None] + feas)

    base = {a: view.ap_status[a].residual for a in aps}
    best_utility = -1.0
    best_mapping: tuple[str, ...] | None = None

    def lex(mapping: list[str | None]) -> tuple[str, ...]:
        return tuple(ap or "" for ap in mapping)

    def recurse(i: int, residuals: dict[str, float], mapping: list[str | None], utility: float):
        nonlocal best_utility, best_mapping
        if i == len(reqs):
            key = lex(mapping)
            if utility > best_utility + 1e-12 or (
                abs(utility - best_utility) <= 1e-12 and (best_mapping is None or key < best_mapping)
            ):
                best_utility = utility
                best_mapping = key
            return
        # upper bound prune: even assigning every remaining request cannot win
        remaining = sum(r.demand for r in reqs[i:])
        if utility + remaining < best_utility - 1e-12:
            return
        for choice in options[i]:
            if choice is None:
                mapping.append(None)
                recurse(i + 1, residuals, mapping, utility)
                mapping.pop()
            elif residuals[choice] >= reqs[i].demand - 1e-9:
                residuals[choice] -= reqs[i].demand
                mapping.append(choice)
                recurse(i + 1, residuals, mapping, utility + reqs[i].demand)
                mapping.pop()
                residuals[choice] += reqs[i].demand

    recurse(0, dict(base), [], 0.0)
    placements = {req: (ap if ap else None) for req, ap in zip(reqs, best_mapping or ())}
    return Assignment(placements=placements, utility=max(best_utility, 0.0))


def select_ap_for_join(md_id: str, flow_hint: FlowRequest | None, view: PartitionView) -> str:
    """Feasible AP with maximum residual capacity (ties by AP id).

    With no hint only coverage of the MD's known position constrains the
    choice; demand and technology come from the hint when present.
    """
    position = flow_hint.origin if flow_hint is not None else None
    if position is None:
        presence = view.md_roster.get(md_id)
        if presence is not None:
            position = presence.position
    cands = []
    for ap_id in sorted(view.ap_status):
        ap = view.ap_status[ap_id]
        if not ap.covers(position):
            continue
        if flow_hint is not None:
            if not ap.supports(flow_hint.required_tech):
                continue
            if ap.residual < flow_hint.demand - 1e-9:
                continue
        cands.append(ap)
    if not cands:
        raise NoApAvailable(f"no feasible AP for {md_id} in partition {view.controller}")
    return sorted(cands, key=lambda ap: (-ap.residual, ap.ap_id))[0].ap_id


def clone_view(view: PartitionView) -> PartitionView:
    """Deep-enough copy for what-if evaluation without touching live state."""
    return PartitionView(
        controller=view.controller,
        ap_status={a: replace(ap) for a, ap in view.ap_status.items()},
        md_roster={m: replace(p) for m, p in view.md_roster.items()},
        open_flows={f: replace(r) for f, r in view.open_flows.items()},
    )
