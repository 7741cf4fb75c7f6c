"""Self-contained SVG time-space diagrams, one per port."""

from __future__ import annotations

from pathlib import Path
from typing import Dict, List, Optional
from xml.sax.saxutils import escape

from .model import Instance, Solution, call_handling

PALETTE = ("#4e79a7", "#f28e2b", "#59a14f", "#e15759", "#76b7b2", "#edc948",
           "#b07aa1", "#ff9da7", "#9c755f", "#86bcb6")

W, H = 900, 640
MARGIN = dict(left=70, right=20, top=40, bottom=50)


def _ticks(hi: float, n: int = 8) -> List[float]:
    if hi <= 0:
        return [0.0]
    raw = hi / n
    mag = 10 ** len(str(int(raw))) / 10 if raw >= 1 else 1
    step = max(1.0, round(raw / mag) * mag)
    out, v = [], 0.0
    while v <= hi + 1e-9:
        out.append(v)
        v += step
    return out


def port_svg(instance: Instance, solution: Optional[Solution], port_id: str) -> str:
    port = instance.port(port_id)
    calls = [c for c in instance.port_calls if c.port == port_id]
    placed = [c for c in calls if solution is not None and c.id in solution]
    exts = instance.externals_at_port[port_id]
    t_max = max([c.lft for c in calls] + [e.start + e.duration for e in exts] + [1.0])
    for c in placed:
        t_max = max(t_max, solution[c.id].berth_start + call_handling(instance, solution, c.id))
    t_max *= 1.05
    pw = W - MARGIN["left"] - MARGIN["right"]
    ph = H - MARGIN["top"] - MARGIN["bottom"]

    def sx(x):
        return MARGIN["left"] + pw * x / port.quay_length

    def sy(t):
        return MARGIN["top"] + ph * t / t_max

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" '
           f'viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">',
           f'<title>{escape(port_id)}</title>',
           f'<rect x="0" y="0" width="{W}" height="{H}" fill="white"/>',
           f'<text x="{W / 2}" y="20" text-anchor="middle" font-size="14">'
           f'{escape(instance.name or "")} {escape(port_id)}</text>']
    # axes
    out.append(f'<rect x="{sx(0):.1f}" y="{sy(0):.1f}" width="{pw:.1f}" height="{ph:.1f}" '
               f'fill="none" stroke="black"/>')
    for v in _ticks(port.quay_length):
        out.append(f'<line x1="{sx(v):.1f}" y1="{sy(t_max):.1f}" x2="{sx(v):.1f}" '
                   f'y2="{sy(t_max) + 5:.1f}" stroke="black"/>')
        out.append(f'<text x="{sx(v):.1f}" y="{sy(t_max) + 18:.1f}" text-anchor="middle">{v:g}</text>')
    for v in _ticks(t_max):
        out.append(f'<line x1="{sx(0) - 5:.1f}" y1="{sy(v):.1f}" x2="{sx(0):.1f}" y2="{sy(v):.1f}" stroke="black"/>')
        out.append(f'<text x="{sx(0) - 8:.1f}" y="{sy(v) + 4:.1f}" text-anchor="end">{v:g}</text>')
    out.append(f'<text x="{W / 2}" y="{H - 10}" text-anchor="middle">quay position (m)</text>')
    out.append(f'<text x="16" y="{H / 2}" text-anchor="middle" '
               f'transform="rotate(-90 16 {H / 2})">time (h)</text>')
    for e in exts:
        out.append(f'<rect class="external" x="{sx(e.position):.1f}" y="{sy(e.start):.1f}" '
                   f'width="{sx(e.position + e.length) - sx(e.position):.1f}" '
                   f'height="{sy(e.start + e.duration) - sy(e.start):.1f}" fill="#bbbbbb" stroke="#666666"/>')
    for c in placed:
        a = solution[c.id]
        ship = instance.ship(c.ship_id)
        h = call_handling(instance, solution, c.id)
        color = PALETTE[ship.id % len(PALETTE)]
        x0, x1 = sx(a.berth_position), sx(a.berth_position + ship.length)
        out.append(f'<rect class="call" x="{x0:.1f}" y="{sy(a.berth_start):.1f}" width="{x1 - x0:.1f}" '
                   f'height="{sy(a.berth_start + h) - sy(a.berth_start):.1f}" fill="{color}" '
                   f'fill-opacity="0.75" stroke="black"><title>{escape(c.name)}</title></rect>')
        out.append(f'<text x="{(x0 + x1) / 2:.1f}" y="{sy(a.berth_start + h / 2) + 4:.1f}" '
                   f'text-anchor="middle" fill="white">{escape(c.name)}</text>')
        # EST / EFT / LFT markers at the ideal position
        xi0, xi1 = sx(c.ideal_position), sx(c.ideal_position + ship.length)
        for t, dash in ((c.est, "2,2"), (c.eft, "6,2"), (c.lft, "none")):
            out.append(f'<line class="marker" x1="{xi0:.1f}" y1="{sy(t):.1f}" x2="{xi1:.1f}" y2="{sy(t):.1f}" '
                       f'stroke="{color}" stroke-width="1.5" stroke-dasharray="{dash}"/>')
    lx = sx(0) + 8
    for i, (label, dash) in enumerate((("EST", "2,2"), ("EFT", "6,2"), ("LFT", "none"))):
        y = sy(0) + 14 + 14 * i
        out.append(f'<line x1="{lx}" y1="{y}" x2="{lx + 24}" y2="{y}" stroke="black" stroke-dasharray="{dash}"/>')
        out.append(f'<text x="{lx + 30}" y="{y + 4}">{label}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_plots(instance: Instance, solution: Optional[Solution], out_dir) -> Dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {}
    for p in instance.ports:
        path = out / f"{p.id}.svg"
        path.write_text(port_svg(instance, solution, p.id), encoding="utf-8")
        paths[p.id] = path
    return paths
