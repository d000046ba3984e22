"""Run metrics: time series, protocol counters, and stable serialization.

Reports are pure data derived from a finished run; emitting the same
report twice (or a report from a repeated run with the same seed) must be
byte-identical, so serialization sorts keys and uses repr-exact floats.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import EmitError

SCHEMA_VERSION = "sdedge.metrics/1"
FORMATS = ("csv", "json")


@dataclass
class MetricsReport:
    scenario: str
    seed: int
    mode: str
    duration: float
    personal_ap: bool = False
    # time, stream id, Mbps
    throughput: list[tuple[float, str, float]] = field(default_factory=list)
    # per association change / controller handover
    handovers: list[dict] = field(default_factory=list)
    packet_in: dict[str, int] = field(default_factory=dict)
    lookup_hops: dict[int, int] = field(default_factory=dict)
    auth_events: list[dict] = field(default_factory=list)
    record_losses: list[str] = field(default_factory=list)

    # -- derived ------------------------------------------------------------

    def stream_ids(self) -> list[str]:
        return sorted({sid for _, sid, _ in self.throughput})

    def series(self, stream_id: str) -> list[tuple[float, float]]:
        return [(t, mbps) for t, sid, mbps in self.throughput if sid == stream_id]

    def delivered_mbit(self, stream_id: str | None = None) -> float:
        """Trapezoid-free accounting: each sample covers one sample interval."""
        total = 0.0
        rows = self.throughput
        last_t: dict[str, float] = {}
        for t, sid, mbps in rows:
            if stream_id is not None and sid != stream_id:
                continue
            prev = last_t.get(sid)
            dt = t - prev if prev is not None else 0.0
            total += mbps * dt
            last_t[sid] = t
        return total

    def mean_handover_latency(self) -> float | None:
        lats = [h["latency"] for h in self.handovers]
        if not lats:
            return None
        return sum(lats) / len(lats)

    def summary(self) -> dict:
        grants = sum(1 for e in self.auth_events if e["granted"])
        return {
            "streams": len(self.stream_ids()),
            "delivered_mbit_total": round(self.delivered_mbit(), 9),
            "handover_count": len(self.handovers),
            "mean_handover_latency": self.mean_handover_latency(),
            "packet_in_total": sum(self.packet_in.values()),
            "lookup_count": sum(self.lookup_hops.values()),
            "mean_lookup_hops": (
                sum(h * c for h, c in self.lookup_hops.items()) / sum(self.lookup_hops.values())
                if self.lookup_hops
                else None
            ),
            "auth_grants": grants,
            "auth_denies": len(self.auth_events) - grants,
            "records_lost": len(self.record_losses),
        }

    # -- serialization ----------------------------------------------------------

    def to_json_dict(self) -> dict:
        return {
            "schema": SCHEMA_VERSION,
            "scenario": self.scenario,
            "seed": self.seed,
            "mode": self.mode,
            "personal_ap": self.personal_ap,
            "duration": self.duration,
            "summary": self.summary(),
            "throughput": [[t, sid, mbps] for t, sid, mbps in self.throughput],
            "handovers": self.handovers,
            "packet_in": {k: self.packet_in[k] for k in sorted(self.packet_in)},
            "lookup_hops": {str(h): self.lookup_hops[h] for h in sorted(self.lookup_hops)},
            "auth_events": self.auth_events,
            "record_losses": sorted(self.record_losses),
        }


def render_json(report: MetricsReport) -> str:
    return json.dumps(report.to_json_dict(), sort_keys=True, indent=1) + "\n"


def render_csv(report: MetricsReport) -> str:
    """Throughput series only; the keyed document lives in the JSON format."""
    lines = [f"# schema={SCHEMA_VERSION} scenario={report.scenario} seed={report.seed} mode={report.mode}"]
    lines.append("t,stream_id,mbps")
    for t, sid, mbps in report.throughput:
        lines.append(f"{t!r},{sid},{mbps!r}")
    return "\n".join(lines) + "\n"


def emit(report: MetricsReport, fmt: str, path: str | Path) -> Path:
    """Write the report; CSV carries the series rows, JSON the full document."""
    if fmt not in FORMATS:
        raise EmitError(f"unknown format {fmt!r} (csv|json)")
    text = render_csv(report) if fmt == "csv" else render_json(report)
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
    except OSError as exc:
        raise EmitError(f"cannot write {path}: {exc}") from exc
    return path
