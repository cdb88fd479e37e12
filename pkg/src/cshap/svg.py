"""Minimal deterministic SVG 1.1 writer."""

from __future__ import annotations

from xml.sax.saxutils import escape, quoteattr


def fmt(v: float) -> str:
    s = f"{float(v):.3f}".rstrip("0").rstrip(".")
    return "0" if s in ("-0", "") else s


class Svg:
    def __init__(self, width: float, height: float, title: str | None = None):
        self.width, self.height = width, height
        self.parts: list[str] = []
        if title:
            self.parts.append(f"<title>{escape(title)}</title>")

    def _attrs(self, **kw) -> str:
        out = []
        for k, v in kw.items():
            if v is None:
                continue
            k = k.rstrip("_").replace("_", "-")
            out.append(f"{k}={quoteattr(fmt(v) if isinstance(v, (int, float)) else str(v))}")
        return " ".join(out)

    def rect(self, x, y, w, h, **kw):
        self.parts.append(f"<rect {self._attrs(x=x, y=y, width=max(w, 0), height=max(h, 0), **kw)}/>")

    def line(self, x1, y1, x2, y2, stroke="#000", **kw):
        self.parts.append(f"<line {self._attrs(x1=x1, y1=y1, x2=x2, y2=y2, stroke=stroke, **kw)}/>")

    def polyline(self, xs, ys, stroke="#000", stroke_width=1, **kw):
        pts = " ".join(f"{fmt(x)},{fmt(y)}" for x, y in zip(xs, ys))
        self.parts.append(
            f"<polyline {self._attrs(points=pts, fill='none', stroke=stroke, stroke_width=stroke_width, **kw)}/>"
        )

    def text(self, x, y, s, size=11, anchor="start", **kw):
        self.parts.append(
            f"<text {self._attrs(x=x, y=y, font_size=size, text_anchor=anchor, font_family='sans-serif', **kw)}>"
            f"{escape(str(s))}</text>"
        )

    def render(self) -> str:
        head = (
            '<?xml version="1.0" encoding="UTF-8" standalone="no"?>\n'
            '<svg xmlns="http://www.w3.org/2000/svg" version="1.1" '
            f'width="{fmt(self.width)}" height="{fmt(self.height)}" '
            f'viewBox="0 0 {fmt(self.width)} {fmt(self.height)}">\n'
        )
        return head + "\n".join(self.parts) + "\n</svg>\n"

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(self.render())


class Scale:
    """Affine map from data range to pixel range."""

    def __init__(self, lo: float, hi: float, p0: float, p1: float):
        if hi == lo:
            lo, hi = lo - 0.5, hi + 0.5
        self.lo, self.hi, self.p0, self.p1 = lo, hi, p0, p1

    def __call__(self, v):
        return self.p0 + (v - self.lo) / (self.hi - self.lo) * (self.p1 - self.p0)
