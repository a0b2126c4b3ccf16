"""SVG mesh rendering: element edges, optional nodal-field fill, inverted
elements highlighted."""

from __future__ import annotations

import numpy as np

_SIZE = 800.0
_MARGIN = 20.0

# simple blue -> green -> yellow ramp
_RAMP = np.array(
    [
        (0.267, 0.005, 0.329),
        (0.229, 0.322, 0.546),
        (0.128, 0.567, 0.551),
        (0.369, 0.789, 0.383),
        (0.993, 0.906, 0.144),
    ]
)


def _color(t):
    t = min(max(float(t), 0.0), 1.0)
    pos = t * (len(_RAMP) - 1)
    k = min(int(pos), len(_RAMP) - 2)
    frac = pos - k
    rgb = (1 - frac) * _RAMP[k] + frac * _RAMP[k + 1]
    return "#%02x%02x%02x" % tuple(int(round(255 * c)) for c in rgb)


def render_svg(mesh, field=None, out=None):
    """Write the mesh as an SVG file; returns the SVG text.

    Every unique element edge becomes one ``<line>``. Elements with
    non-positive area are filled red with class ``inverted``. With ``field``,
    elements are flat-shaded by the mean of their nodal values.
    """
    nodes = mesh.nodes
    lo = nodes.min(axis=0)
    hi = nodes.max(axis=0)
    span = np.maximum(hi - lo, 1e-12)
    scale = (_SIZE - 2 * _MARGIN) / span.max()

    def to_px(p):
        x = _MARGIN + (p[0] - lo[0]) * scale
        y = _SIZE - _MARGIN - (p[1] - lo[1]) * scale
        return x, y

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_SIZE:.0f}" '
        f'height="{_SIZE:.0f}" viewBox="0 0 {_SIZE:.0f} {_SIZE:.0f}">'
    ]
    areas = mesh.areas()
    if field is not None:
        values = mesh.field(field)
        elem_vals = values[mesh.elements].mean(axis=1)
        vmin, vmax = float(elem_vals.min()), float(elem_vals.max())
        vspan = vmax - vmin if vmax > vmin else 1.0
        for tri, v in zip(mesh.elements, elem_vals):
            pts = " ".join("%.2f,%.2f" % to_px(nodes[i]) for i in tri)
            parts.append(
                f'<polygon points="{pts}" fill="{_color((v - vmin) / vspan)}" stroke="none"/>'
            )
    for tri, area in zip(mesh.elements, areas):
        if area <= 0.0:
            pts = " ".join("%.2f,%.2f" % to_px(nodes[i]) for i in tri)
            parts.append(
                f'<polygon class="inverted" points="{pts}" fill="#d62728" '
                f'fill-opacity="0.8" stroke="#7f0000"/>'
            )
    for a, b in mesh.topology.edges:
        xa, ya = to_px(nodes[a])
        xb, yb = to_px(nodes[b])
        parts.append(
            f'<line x1="{xa:.2f}" y1="{ya:.2f}" x2="{xb:.2f}" y2="{yb:.2f}" '
            f'stroke="#333333" stroke-width="0.6"/>'
        )
    parts.append("</svg>")
    text = "\n".join(parts) + "\n"
    if out is not None:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text)
    return text
