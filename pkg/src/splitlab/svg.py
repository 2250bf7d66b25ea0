"""Tiny standalone SVG charts (no external assets, deterministic output)."""

from xml.sax.saxutils import escape

PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]
WIDTH, HEIGHT = 480, 360
LEFT, RIGHT, TOP, BOTTOM = 60, 20, 30, 50


def _fmt(v):
    return f"{v:.2f}"


class Chart:
    def __init__(self, xlim, ylim, title="", xlabel="", ylabel=""):
        self.xlim = xlim
        self.ylim = ylim
        self.parts = []
        self.title, self.xlabel, self.ylabel = title, xlabel, ylabel
        self.legend = []

    def sx(self, x):
        lo, hi = self.xlim
        return LEFT + (x - lo) / ((hi - lo) or 1.0) * (WIDTH - LEFT - RIGHT)

    def sy(self, y):
        lo, hi = self.ylim
        return HEIGHT - BOTTOM - (y - lo) / ((hi - lo) or 1.0) * (HEIGHT - TOP - BOTTOM)

    def rect_below(self, y, fill="#d9d9d9"):
        y0 = self.sy(min(max(y, self.ylim[0]), self.ylim[1]))
        self.parts.append(
            f'<rect class="perfect-zone" x="{_fmt(LEFT)}" y="{_fmt(y0)}" width="{_fmt(WIDTH - LEFT - RIGHT)}" '
            f'height="{_fmt(HEIGHT - BOTTOM - y0)}" fill="{fill}" data-y="{y!r}"/>'
        )

    def hline(self, y, color="#555", cls="ref"):
        self.parts.append(
            f'<line class="{cls}" x1="{_fmt(LEFT)}" x2="{_fmt(WIDTH - RIGHT)}" y1="{_fmt(self.sy(y))}" '
            f'y2="{_fmt(self.sy(y))}" stroke="{color}" stroke-dasharray="5,4"/>'
        )

    def vline(self, x, color="#555", cls="ref"):
        self.parts.append(
            f'<line class="{cls}" x1="{_fmt(self.sx(x))}" x2="{_fmt(self.sx(x))}" y1="{_fmt(TOP)}" '
            f'y2="{_fmt(HEIGHT - BOTTOM)}" stroke="{color}" stroke-dasharray="5,4"/>'
        )

    def series(self, xs, ys, label, color, markers=True, line=True):
        pts = [(self.sx(x), self.sy(y)) for x, y in zip(xs, ys)]
        if line and len(pts) > 1:
            path = " ".join(f"{_fmt(a)},{_fmt(b)}" for a, b in pts)
            self.parts.append(f'<polyline points="{path}" fill="none" stroke="{color}"/>')
        if markers:
            for (a, b), x, y in zip(pts, xs, ys):
                self.parts.append(
                    f'<circle class="marker" cx="{_fmt(a)}" cy="{_fmt(b)}" r="3.5" fill="{color}" '
                    f'data-x="{x!r}" data-y="{y!r}"/>'
                )
        self.legend.append((label, color))

    def render(self):
        x0, x1 = LEFT, WIDTH - RIGHT
        y0, y1 = HEIGHT - BOTTOM, TOP
        out = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
            f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">',
            f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        ]
        out.extend(self.parts)
        out.append(f'<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>')
        out.append(f'<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>')
        for i in range(6):
            fx = self.xlim[0] + i * (self.xlim[1] - self.xlim[0]) / 5
            fy = self.ylim[0] + i * (self.ylim[1] - self.ylim[0]) / 5
            out.append(f'<text x="{_fmt(self.sx(fx))}" y="{y0 + 15}" text-anchor="middle">{fx:.3g}</text>')
            out.append(f'<text x="{x0 - 6}" y="{_fmt(self.sy(fy) + 4)}" text-anchor="end">{fy:.3g}</text>')
        out.append(f'<text x="{(x0 + x1) / 2}" y="{HEIGHT - 12}" text-anchor="middle">{escape(self.xlabel)}</text>')
        out.append(
            f'<text x="14" y="{(y0 + y1) / 2}" text-anchor="middle" '
            f'transform="rotate(-90 14 {(y0 + y1) / 2})">{escape(self.ylabel)}</text>'
        )
        out.append(f'<text x="{(x0 + x1) / 2}" y="18" text-anchor="middle">{escape(self.title)}</text>')
        for i, (label, color) in enumerate(self.legend):
            y = TOP + 12 + 14 * i
            out.append(f'<rect x="{x1 - 110}" y="{y - 8}" width="10" height="10" fill="{color}"/>')
            out.append(f'<text x="{x1 - 96}" y="{y + 1}">{escape(label)}</text>')
        out.append("</svg>")
        return "\n".join(out) + "\n"


def line_chart(series, title="", xlabel="", ylabel=""):
    """``series``: list of (label, xs, ys)."""
    xs = [x for _, sx, _ in series for x in sx]
    ys = [y for _, _, sy in series for y in sy]
    xlim = (min(xs), max(xs)) if xs else (0.0, 1.0)
    ylim = (min(ys), max(ys)) if ys else (0.0, 1.0)
    chart = Chart(xlim, ylim, title, xlabel, ylabel)
    for i, (label, sx, sy) in enumerate(series):
        chart.series(sx, sy, label, PALETTE[i % len(PALETTE)], markers=False)
    return chart.render()
