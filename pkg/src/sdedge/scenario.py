"""Declarative scenario files: parsing, validation, generation, writing.

The format is line-oriented and diff-friendly: named sections in square
brackets, one directive per line, `key=value` arguments. Generator
directives (`mds`, `roam`, `flows`) expand at parse time using
`layout_seed`, so a parsed scenario is always a concrete entity list and
re-emitting then re-parsing it is structurally lossless. The run seed
never influences layout; overriding it cannot silently reshape the
topology.
"""

from __future__ import annotations

import fnmatch
import random
from dataclasses import dataclass, field, fields, replace
from importlib import resources
from pathlib import Path

from .authn import MODES
from .errors import ScenarioError, UsageError
from .ring import fnv1a64

SECTIONS = ("params", "topology", "groups", "flows", "traces", "failures", "workload")
MD_STATUSES = ("joining", "leaving", "staying")
PERSONAL_AP_CHOICES = ("auto", "on", "off")


@dataclass(frozen=True)
class Params:
    m: int = 16
    r: int = 2
    seed: int = 0
    layout_seed: int = 1
    duration: float = 10.0
    mode: str = "None"
    personal_ap: str = "auto"
    controllers: int = 0           # 0 = use all declared
    beacon_period: float = 0.1
    rotation_period: float = 10.0
    recovery_lag: float = 4.0
    reassociation_delay: float = 0.5
    pap_migration_delay: float = 0.02
    key_freshness: float = 0.05
    regrant_grace: float = 0.3
    link_latency: float = 0.001
    wireless_latency: float = 0.005
    sample_period: float = 0.1
    detection_delay: float = 0.0

    @property
    def personal_ap_enabled(self) -> bool:
        if self.personal_ap == "auto":
            return self.mode == "LEDGE-PAP"
        return self.personal_ap == "on"


_PARAM_TYPES = {f.name: f.type for f in fields(Params)}
_INT_PARAMS = {f.name for f in fields(Params) if f.type == "int"}


@dataclass(frozen=True)
class ControllerDecl:
    name: str
    key: int | None = None


@dataclass(frozen=True)
class SwitchDecl:
    name: str


@dataclass(frozen=True)
class APDecl:
    name: str
    x: float
    y: float
    radius: float
    capacity: float
    techs: tuple[str, ...]
    partition: str


@dataclass(frozen=True)
class MDDecl:
    name: str
    x: float | None = None
    y: float | None = None


@dataclass(frozen=True)
class LinkDecl:
    a: str
    b: str
    latency: float
    rate: float


@dataclass(frozen=True)
class GroupDecl:
    name: str
    members: tuple[str, ...]


@dataclass(frozen=True)
class StreamDecl:
    name: str
    md: str
    dst: str
    flow_type: str
    demand: float
    tech: str
    start: float
    end: float | None = None


@dataclass(frozen=True)
class WaypointDecl:
    md: str
    t: float
    x: float
    y: float
    status: str = "staying"


@dataclass(frozen=True)
class FailureDecl:
    kind: str  # controller | ap
    name: str
    at: float


@dataclass(frozen=True)
class WorkloadDecl:
    rate_per_ap: float
    service_time: float
    start: float = 0.0
    until: float | None = None


@dataclass
class Scenario:
    name: str = field(compare=False, default="scenario")
    params: Params = field(default_factory=Params)
    controllers: list[ControllerDecl] = field(default_factory=list)
    switches: list[SwitchDecl] = field(default_factory=list)
    aps: list[APDecl] = field(default_factory=list)
    mds: list[MDDecl] = field(default_factory=list)
    links: list[LinkDecl] = field(default_factory=list)
    groups: list[GroupDecl] = field(default_factory=list)
    streams: list[StreamDecl] = field(default_factory=list)
    waypoints: list[WaypointDecl] = field(default_factory=list)
    failures: list[FailureDecl] = field(default_factory=list)
    workload: WorkloadDecl | None = None

    def node_names(self) -> set[str]:
        return (
            {c.name for c in self.controllers}
            | {s.name for s in self.switches}
            | {a.name for a in self.aps}
            | {m.name for m in self.mds}
        )


def _layout_rng(layout_seed: int, tag: str) -> random.Random:
    return random.Random(((layout_seed & 0xFFFFFFFF) << 32) ^ (fnv1a64(tag.encode()) & 0xFFFFFFFF))


class _Parser:
    def __init__(self, text: str, name: str):
        self.name = name
        self.lines = text.splitlines()
        self.errors: list[tuple[int, int, str]] = []
        self.scenario = Scenario(name=name)
        # raw directives per section, with line numbers
        self.raw: dict[str, list[tuple[int, str]]] = {s: [] for s in SECTIONS}

    def fail(self, line_no: int, msg: str, col: int = 1) -> None:
        self.errors.append((line_no, col, msg))

    # -- lexing --------------------------------------------------------------

    def split_sections(self) -> None:
        section = None
        for i, raw in enumerate(self.lines, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if line.startswith("[") and line.endswith("]"):
                section = line[1:-1].strip()
                if section not in SECTIONS:
                    self.fail(i, f"unknown section [{section}]")
                    section = None
                continue
            if section is None:
                self.fail(i, f"directive outside any section: {line!r}")
                continue
            self.raw[section].append((i, line))

    def kv_args(self, line_no: int, tokens: list[str], required: dict, optional: dict | None = None):
        """Parse key=value tokens against typed required/optional maps."""
        optional = optional or {}
        seen: dict[str, object] = {}
        for tok in tokens:
            if "=" not in tok:
                self.fail(line_no, f"expected key=value, got {tok!r}")
                return None
            key, _, val = tok.partition("=")
            conv = required.get(key) or optional.get(key)
            if conv is None:
                self.fail(line_no, f"unknown argument {key!r}")
                return None
            try:
                seen[key] = conv(val)
            except (ValueError, TypeError):
                self.fail(line_no, f"bad value for {key}: {val!r}")
                return None
        missing = [k for k in required if k not in seen]
        if missing:
            self.fail(line_no, f"missing argument(s): {', '.join(missing)}")
            return None
        return seen

    # -- sections --------------------------------------------------------------

    def parse_params(self) -> None:
        values: dict[str, object] = {}
        for line_no, line in self.raw["params"]:
            if "=" not in line:
                self.fail(line_no, f"expected key = value, got {line!r}")
                continue
            key, _, val = line.partition("=")
            key, val = key.strip(), val.strip()
            if key not in _PARAM_TYPES:
                self.fail(line_no, f"unknown parameter {key!r}")
                continue
            try:
                values[key] = _convert_param(key, val)
            except ValueError as exc:
                self.fail(line_no, str(exc))
        try:
            self.scenario.params = replace(Params(), **values)
        except (TypeError, ValueError) as exc:  # defensive
            self.fail(0, f"bad parameters: {exc}")
        p = self.scenario.params
        if p.duration <= 0:
            self.fail(0, "duration must be positive")
        if not 2 <= p.m <= 32:
            self.fail(0, f"ring width m={p.m} outside [2, 32]")
        if p.r < 1:
            self.fail(0, "replication factor r must be >= 1")

    def parse_topology(self) -> None:
        sc = self.scenario
        for line_no, line in self.raw["topology"]:
            tokens = line.split()
            head = tokens[0]
            if head == "controller":
                if len(tokens) < 2:
                    self.fail(line_no, "controller needs a name")
                    continue
                args = self.kv_args(line_no, tokens[2:], {}, {"key": int})
                if args is None:
                    continue
                sc.controllers.append(ControllerDecl(tokens[1], args.get("key")))
            elif head == "switch":
                if len(tokens) != 2:
                    self.fail(line_no, "switch takes exactly a name")
                    continue
                sc.switches.append(SwitchDecl(tokens[1]))
            elif head == "ap":
                if len(tokens) < 2:
                    self.fail(line_no, "ap needs a name")
                    continue
                args = self.kv_args(
                    line_no,
                    tokens[2:],
                    {"pos": _point, "radius": float, "capacity": float, "techs": _csv, "partition": str},
                )
                if args is None:
                    continue
                x, y = args["pos"]
                sc.aps.append(
                    APDecl(tokens[1], x, y, args["radius"], args["capacity"], args["techs"], args["partition"])
                )
            elif head == "md":
                if len(tokens) < 2:
                    self.fail(line_no, "md needs a name")
                    continue
                args = self.kv_args(line_no, tokens[2:], {}, {"pos": _point})
                if args is None:
                    continue
                pos = args.get("pos")
                sc.mds.append(MDDecl(tokens[1], *(pos if pos else (None, None))))
            elif head == "mds":
                if len(tokens) < 3:
                    self.fail(line_no, "mds needs a prefix and a count")
                    continue
                try:
                    count = int(tokens[2])
                except ValueError:
                    self.fail(line_no, f"bad count {tokens[2]!r}")
                    continue
                args = self.kv_args(line_no, tokens[3:], {"area": _rect})
                if args is None:
                    continue
                x0, y0, x1, y1 = args["area"]
                width = max(3, len(str(count)))
                for i in range(1, count + 1):
                    name = f"{tokens[1]}{i:0{width}d}"
                    rng = _layout_rng(sc.params.layout_seed, f"md:{name}")
                    sc.mds.append(
                        MDDecl(name, round(rng.uniform(x0, x1), 3), round(rng.uniform(y0, y1), 3))
                    )
            elif head == "link":
                if len(tokens) < 3:
                    self.fail(line_no, "link needs two endpoints")
                    continue
                args = self.kv_args(line_no, tokens[3:], {"latency": float, "rate": float})
                if args is None:
                    continue
                sc.links.append(LinkDecl(tokens[1], tokens[2], args["latency"], args["rate"]))
            else:
                self.fail(line_no, f"unknown topology directive {head!r}")

    def parse_groups(self) -> None:
        for line_no, line in self.raw["groups"]:
            tokens = line.split()
            if tokens[0] != "group" or len(tokens) < 3:
                self.fail(line_no, "expected: group NAME members=AP1,AP2,...")
                continue
            args = self.kv_args(line_no, tokens[2:], {"members": _csv})
            if args is None:
                continue
            self.scenario.groups.append(GroupDecl(tokens[1], args["members"]))

    def parse_flows(self) -> None:
        sc = self.scenario
        spec = {"md": str, "dst": str, "type": str, "demand": float, "tech": str, "start": float}
        for line_no, line in self.raw["flows"]:
            tokens = line.split()
            head = tokens[0]
            if head not in ("flow", "flows") or len(tokens) < 2:
                self.fail(line_no, f"unknown flows directive {head!r}")
                continue
            args = self.kv_args(line_no, tokens[2:], spec, {"end": float})
            if args is None:
                continue
            if head == "flow":
                sc.streams.append(
                    StreamDecl(tokens[1], args["md"], args["dst"], args["type"],
                               args["demand"], args["tech"], args["start"], args.get("end"))
                )
            else:
                matched = [m.name for m in sc.mds if fnmatch.fnmatchcase(m.name, args["md"])]
                if not matched:
                    self.fail(line_no, f"flows pattern {args['md']!r} matches no MD")
                    continue
                for md in matched:
                    sc.streams.append(
                        StreamDecl(f"{tokens[1]}-{md}", md, args["dst"], args["type"],
                                   args["demand"], args["tech"], args["start"], args.get("end"))
                    )

    def parse_traces(self) -> None:
        sc = self.scenario
        for line_no, line in self.raw["traces"]:
            tokens = line.split()
            head = tokens[0]
            if head == "move":
                if len(tokens) not in (4, 5):
                    self.fail(line_no, "expected: move MD T X,Y [STATUS]")
                    continue
                try:
                    t = float(tokens[2])
                    x, y = _point(tokens[3])
                except ValueError:
                    self.fail(line_no, f"bad waypoint in {line!r}")
                    continue
                status = tokens[4] if len(tokens) == 5 else "staying"
                if status not in MD_STATUSES:
                    self.fail(line_no, f"unknown MD status {status!r}")
                    continue
                sc.waypoints.append(WaypointDecl(tokens[1], t, x, y, status))
            elif head == "roam":
                if len(tokens) < 3:
                    self.fail(line_no, "expected: roam GLOB interval=S [until=T] [area=...]")
                    continue
                args = self.kv_args(line_no, tokens[2:], {"interval": float}, {"until": float, "area": _rect})
                if args is None:
                    continue
                area = args.get("area") or self._default_area()
                if area is None:
                    self.fail(line_no, "roam needs area= (no APs to infer one from)")
                    continue
                until = args.get("until", sc.params.duration)
                matched = [m.name for m in sc.mds if fnmatch.fnmatchcase(m.name, tokens[1])]
                if not matched:
                    self.fail(line_no, f"roam pattern {tokens[1]!r} matches no MD")
                    continue
                x0, y0, x1, y1 = area
                for md in matched:
                    rng = _layout_rng(sc.params.layout_seed, f"roam:{md}")
                    t = args["interval"]
                    while t <= until:
                        sc.waypoints.append(
                            WaypointDecl(md, round(t, 6),
                                         round(rng.uniform(x0, x1), 3), round(rng.uniform(y0, y1), 3))
                        )
                        t += args["interval"]
            else:
                self.fail(line_no, f"unknown traces directive {head!r}")

    def _default_area(self):
        if not self.scenario.aps:
            return None
        xs0 = min(a.x - a.radius for a in self.scenario.aps)
        ys0 = min(a.y - a.radius for a in self.scenario.aps)
        xs1 = max(a.x + a.radius for a in self.scenario.aps)
        ys1 = max(a.y + a.radius for a in self.scenario.aps)
        return (xs0, ys0, xs1, ys1)

    def parse_failures(self) -> None:
        for line_no, line in self.raw["failures"]:
            tokens = line.split()
            if tokens[0] != "fail" or len(tokens) < 3:
                self.fail(line_no, "expected: fail controller|ap NAME at=T")
                continue
            if tokens[1] not in ("controller", "ap"):
                self.fail(line_no, f"cannot fail a {tokens[1]!r} (controller|ap)")
                continue
            args = self.kv_args(line_no, tokens[3:], {"at": float})
            if args is None:
                continue
            self.scenario.failures.append(FailureDecl(tokens[1], tokens[2], args["at"]))

    def parse_workload(self) -> None:
        for line_no, line in self.raw["workload"]:
            tokens = line.split()
            if tokens[0] != "packetin":
                self.fail(line_no, f"unknown workload directive {tokens[0]!r}")
                continue
            args = self.kv_args(
                line_no, tokens[1:], {"rate_per_ap": float, "service_time": float},
                {"start": float, "until": float},
            )
            if args is None:
                continue
            if self.scenario.workload is not None:
                self.fail(line_no, "duplicate packetin workload")
                continue
            self.scenario.workload = WorkloadDecl(
                args["rate_per_ap"], args["service_time"], args.get("start", 0.0), args.get("until")
            )

    # -- cross validation ---------------------------------------------------------

    def validate(self) -> None:
        sc = self.scenario
        names: dict[str, str] = {}
        for kind, items in (
            ("controller", sc.controllers),
            ("switch", sc.switches),
            ("ap", sc.aps),
            ("md", sc.mds),
        ):
            for item in items:
                if item.name in names:
                    self.fail(0, f"duplicate node name {item.name!r} ({names[item.name]} and {kind})")
                names[item.name] = kind
        controller_names = {c.name for c in sc.controllers}
        ap_names = {a.name for a in sc.aps}
        md_names = {m.name for m in sc.mds}

        if not sc.controllers:
            self.fail(0, "scenario declares no controllers")
        if sc.params.controllers > len(sc.controllers):
            self.fail(0, f"controllers={sc.params.controllers} but only {len(sc.controllers)} declared")

        for ap in sc.aps:
            if ap.partition not in controller_names:
                self.fail(0, f"ap {ap.name} references undeclared controller {ap.partition!r}")
            if ap.radius <= 0 or ap.capacity <= 0:
                self.fail(0, f"ap {ap.name} needs positive radius and capacity")
        for link in sc.links:
            for end in (link.a, link.b):
                if end not in names:
                    self.fail(0, f"link references undeclared node {end!r}")
        seen_group_aps: dict[str, str] = {}
        for g in sc.groups:
            if len(g.members) < 2:
                self.fail(0, f"group {g.name} needs at least 2 member APs")
            for member in g.members:
                if member not in ap_names:
                    self.fail(0, f"group {g.name} references undeclared AP {member!r}")
                elif member in seen_group_aps:
                    self.fail(0, f"AP {member} is in both {seen_group_aps[member]} and {g.name}")
                else:
                    seen_group_aps[member] = g.name
        stream_names = set()
        for s in sc.streams:
            if s.name in stream_names:
                self.fail(0, f"duplicate stream name {s.name!r}")
            stream_names.add(s.name)
            if s.md not in md_names:
                self.fail(0, f"flow {s.name} references undeclared MD {s.md!r}")
            if s.dst not in names or names[s.dst] == "md":
                self.fail(0, f"flow {s.name} destination {s.dst!r} is not a declared infrastructure node")
            if s.demand <= 0:
                self.fail(0, f"flow {s.name} demand must be positive")
            if s.end is not None and s.end <= s.start:
                self.fail(0, f"flow {s.name} ends before it starts")
        per_md_times: dict[str, float] = {}
        for wp in sorted(sc.waypoints, key=lambda w: (w.md, w.t)):
            if wp.md not in md_names:
                self.fail(0, f"trace references undeclared MD {wp.md!r}")
                continue
            last = per_md_times.get(wp.md)
            if last is not None and wp.t <= last:
                self.fail(0, f"waypoints for {wp.md} are not strictly increasing at t={wp.t}")
            per_md_times[wp.md] = wp.t
        for f in sc.failures:
            pool = controller_names if f.kind == "controller" else ap_names
            if f.name not in pool:
                self.fail(0, f"failure targets undeclared {f.kind} {f.name!r}")

    def run(self) -> Scenario:
        self.split_sections()
        self.parse_params()
        self.parse_topology()
        self.parse_groups()
        self.parse_flows()
        self.parse_traces()
        self.parse_failures()
        self.parse_workload()
        self.validate()
        if self.errors:
            raise ScenarioError(sorted(set(self.errors)))
        # stable ordering regardless of file layout
        self.scenario.waypoints.sort(key=lambda w: (w.t, w.md))
        return self.scenario


def _convert_param(key: str, val: str):
    if key == "mode":
        if val not in MODES:
            raise ValueError(f"mode must be one of {', '.join(MODES)}")
        return val
    if key == "personal_ap":
        if val not in PERSONAL_AP_CHOICES:
            raise ValueError(f"personal_ap must be one of {', '.join(PERSONAL_AP_CHOICES)}")
        return val
    if key in _INT_PARAMS:
        return int(val)
    return float(val)


def _point(text: str) -> tuple[float, float]:
    parts = text.split(",")
    if len(parts) != 2:
        raise ValueError(text)
    return float(parts[0]), float(parts[1])


def _rect(text: str) -> tuple[float, float, float, float]:
    parts = [float(p) for p in text.split(",")]
    if len(parts) != 4:
        raise ValueError(text)
    return tuple(parts)  # type: ignore[return-value]


def _csv(text: str) -> tuple[str, ...]:
    items = tuple(p for p in text.split(",") if p)
    if not items:
        raise ValueError(text)
    return items


def parse_scenario_text(text: str, name: str = "scenario") -> Scenario:
    return _Parser(text, name).run()


def parse_scenario(path: str | Path) -> Scenario:
    path = Path(path)
    return parse_scenario_text(path.read_text(), name=path.stem)


def bundled_scenario_path(name: str) -> Path:
    """Resolve a scenario shipped with the package (e.g. 'fig6' or 'fig6.scenario')."""
    if not name.endswith(".scenario"):
        name += ".scenario"
    base = resources.files("sdedge") / "scenarios" / name
    with resources.as_file(base) as p:
        if not p.exists():
            raise FileNotFoundError(f"no bundled scenario {name}")
        return p


def resolve_scenario(spec: str | Path) -> Path:
    """A path on disk, or the name of a bundled scenario."""
    p = Path(spec)
    if p.exists():
        return p
    try:
        return bundled_scenario_path(str(spec))
    except FileNotFoundError:
        raise ScenarioError([(0, 1, f"scenario not found: {spec}")]) from None


def apply_overrides(params: Params, overrides: dict[str, str]) -> Params:
    """Apply `--set key=value` pairs; unknown keys are usage errors."""
    values = {}
    for key, val in overrides.items():
        if key not in _PARAM_TYPES:
            raise UsageError(f"unknown parameter {key!r} (known: {', '.join(sorted(_PARAM_TYPES))})")
        try:
            values[key] = _convert_param(key, val)
        except ValueError as exc:
            raise UsageError(f"bad value for {key}: {exc}") from exc
    return replace(params, **values)


def format_scenario(sc: Scenario) -> str:
    """Write a scenario back out in canonical concrete form."""
    out: list[str] = [f"# {sc.name}", "", "[params]"]
    defaults = Params()
    for f in fields(Params):
        val = getattr(sc.params, f.name)
        if val != getattr(defaults, f.name):
            out.append(f"{f.name} = {val}")
    out.append("")
    out.append("[topology]")
    for c in sc.controllers:
        out.append(f"controller {c.name}" + (f" key={c.key}" if c.key is not None else ""))
    for s in sc.switches:
        out.append(f"switch {s.name}")
    for a in sc.aps:
        out.append(
            f"ap {a.name} pos={a.x!r},{a.y!r} radius={a.radius!r} capacity={a.capacity!r} "
            f"techs={','.join(a.techs)} partition={a.partition}"
        )
    for m in sc.mds:
        pos = f" pos={m.x!r},{m.y!r}" if m.x is not None else ""
        out.append(f"md {m.name}{pos}")
    for link in sc.links:
        out.append(f"link {link.a} {link.b} latency={link.latency!r} rate={link.rate!r}")
    if sc.groups:
        out.append("")
        out.append("[groups]")
        for g in sc.groups:
            out.append(f"group {g.name} members={','.join(g.members)}")
    if sc.streams:
        out.append("")
        out.append("[flows]")
        for s in sc.streams:
            end = f" end={s.end!r}" if s.end is not None else ""
            out.append(
                f"flow {s.name} md={s.md} dst={s.dst} type={s.flow_type} "
                f"demand={s.demand!r} tech={s.tech} start={s.start!r}{end}"
            )
    if sc.waypoints:
        out.append("")
        out.append("[traces]")
        for w in sc.waypoints:
            out.append(f"move {w.md} {w.t!r} {w.x!r},{w.y!r} {w.status}")
    if sc.failures:
        out.append("")
        out.append("[failures]")
        for fl in sc.failures:
            out.append(f"fail {fl.kind} {fl.name} at={fl.at!r}")
    if sc.workload is not None:
        out.append("")
        out.append("[workload]")
        w = sc.workload
        until = f" until={w.until!r}" if w.until is not None else ""
        out.append(
            f"packetin rate_per_ap={w.rate_per_ap!r} service_time={w.service_time!r} start={w.start!r}{until}"
        )
    return "\n".join(out) + "\n"
