"""Gantt charts of TPG schedules or execution traces, as plain text or SVG.

Both renderers take a list of ``Bar`` rows and lay them out deterministically:
lanes in sorted robot order, bars in (start, node id) order.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence
from xml.sax.saxutils import escape

from .executor import TraceEvent
from .tpg import Tpg, schedule


@dataclass(frozen=True)
class Bar:
    robot: str
    node: str
    label: str
    start: float
    end: float


def bars_from_tpg(tpg: Tpg) -> list[Bar]:
    sched = schedule(tpg)
    return [Bar(n.robot, n.id, n.label, *sched[n.id]) for n in tpg.nodes]


def bars_from_events(events: Iterable[TraceEvent]) -> list[Bar]:
    """Pair each node's first ``start`` with its last ``end``/``recover``/``abort``."""
    open_: dict[str, TraceEvent] = {}
    closed: dict[str, tuple[TraceEvent, float]] = {}
    for e in events:
        if e.kind == "start" and e.node not in open_:
            open_[e.node] = e
        elif e.kind in ("end", "recover", "abort") and e.node in open_:
            closed[e.node] = (open_[e.node], e.t_ms / 1000)
    return [Bar(s.robot, nid, s.detail, s.t_ms / 1000, end) for nid, (s, end) in closed.items()]


def _lanes(bars: Sequence[Bar], robots: Iterable[str] = ()) -> dict[str, list[Bar]]:
    lanes: dict[str, list[Bar]] = {r: [] for r in robots}
    for b in bars:
        lanes.setdefault(b.robot, []).append(b)
    return {r: sorted(lanes[r], key=lambda b: (b.start, b.node)) for r in sorted(lanes)}


def gantt_text(bars: Sequence[Bar], robots: Iterable[str] = (), width: int = 72, title: str = "gantt") -> str:
    lanes = _lanes(bars, robots)
    horizon = max((b.end for b in bars), default=0.0)
    out = [f"# {title} horizon={horizon:.3f}s lanes={len(lanes)} bars={len(bars)}"]
    scale = width / horizon if horizon > 0 else 0.0
    for r, lane in lanes.items():
        row = [" "] * width
        for i, b in enumerate(lane):
            lo = int(b.start * scale)
            hi = max(lo + 1, int(b.end * scale))
            ch = "#" if i % 2 == 0 else "="
            for x in range(lo, min(hi, width)):
                row[x] = ch
        out.append(f"{r:>6} |{''.join(row)}|")
    for r, lane in lanes.items():
        out.append(f"lane {r}")
        for b in lane:
            out.append(f"  {b.node:<6} {b.label:<14} {b.start:10.3f} {b.end:10.3f}")
    return "\n".join(out) + "\n"


_COLORS = {
    "Detect": "#8da0cb",
    "Pick": "#66c2a5",
    "Transit": "#d9d9d9",
    "PlaceDown": "#fc8d62",
    "PlaceUp": "#e78ac3",
    "SupportUp": "#a6d854",
    "SupportDown": "#a6d854",
    "Handover": "#ffd92f",
    "Check": "#e5c494",
}


def gantt_svg(bars: Sequence[Bar], robots: Iterable[str] = (), width: int = 960, lane_h: int = 28, title: str = "gantt") -> str:
    lanes = _lanes(bars, robots)
    horizon = max((b.end for b in bars), default=0.0)
    left, top = 60, 24
    plot_w = width - left - 10
    scale = plot_w / horizon if horizon > 0 else 0.0
    height = top + lane_h * len(lanes) + 20
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        f'<title>{escape(title)}</title>',
        f'<text x="4" y="16" font-family="monospace" font-size="12">{escape(title)} ({horizon:.1f} s)</text>',
    ]
    for li, (r, lane) in enumerate(lanes.items()):
        y = top + li * lane_h
        parts.append(f'<g class="lane" data-robot="{escape(r)}">')
        parts.append(f'<text x="4" y="{y + lane_h // 2 + 4}" font-family="monospace" font-size="12">{escape(r)}</text>')
        for b in lane:
            x = left + b.start * scale
            w = max(0.5, (b.end - b.start) * scale)
            base = b.label.split("#")[0]
            color = _COLORS.get(base, "#bbbbbb")
            parts.append(
                f'<rect class="bar" data-node="{escape(b.node)}" x="{x:.2f}" y="{y + 3}" width="{w:.2f}" '
                f'height="{lane_h - 6}" fill="{color}" stroke="#333" stroke-width="0.4">'
                f"<title>{escape(b.node)} {escape(b.label)} {b.start:.3f}-{b.end:.3f}</title></rect>"
            )
        parts.append("</g>")
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
