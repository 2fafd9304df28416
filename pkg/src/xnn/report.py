"""Interpretability report: per-subnetwork importance, projection index and
sampled ridge function, plus dependency-free SVG rendering."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from .errors import ConfigError
from .model import XnnModel, canonicalize_signs, importance_ratios, project, stacked_eval

REPORT_VERSION = "xnn-report/1"
GRID_POINTS = 101


@dataclass
class Component:
    index: int
    importance_ratio: float
    beta: float
    projection: list[float]
    grid: list[float]
    ridge: list[float]


@dataclass
class ExplainReport:
    mu: float
    feature_names: list[str]
    components: list[Component] = field(default_factory=list)
    version: str = REPORT_VERSION

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=1) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "ExplainReport":
        d = json.loads(text)
        if d.get("version") != REPORT_VERSION:
            raise ConfigError(f"unsupported report version {d.get('version')!r}")
        comps = [Component(**c) for c in d["components"]]
        return cls(d["mu"], d["feature_names"], comps, d["version"])

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())


def explain(model: XnnModel, X_train, feature_names: list[str] | None = None,
            n_grid: int = GRID_POINTS) -> ExplainReport:
    """Report the active subnetworks in descending order of importance."""
    m = canonicalize_signs(model)
    X_train = np.asarray(X_train, dtype=float)
    names = list(feature_names) if feature_names else [f"x{j + 1}" for j in range(m.p)]
    ir = importance_ratios(np.where(m.active, m.beta, 0.0))
    Z = project(m, X_train)
    lo, hi = Z.min(axis=0), Z.max(axis=0)
    hi = np.where(hi > lo, hi, lo + 1.0)
    grid = np.linspace(lo, hi, n_grid)  # (n_grid, k)
    std = np.maximum(m.norm_std, m.norm_eps)
    ridge = (stacked_eval(m.weights, m.biases, m.activation, grid) - m.norm_mean) / std
    order = [j for j in np.argsort(-ir, kind="stable") if m.active[j] and ir[j] > 0]
    comps = [
        Component(
            index=int(j),
            importance_ratio=float(ir[j]),
            beta=float(m.beta[j]),
            projection=m.W[:, j].tolist(),
            grid=grid[:, j].tolist(),
            ridge=ridge[:, j].tolist(),
        )
        for j in order
    ]
    return ExplainReport(m.mu, names, comps)


# SVG

def _polyline(xs, ys, box, color="#1f4e9a"):
    x0, y0, w, h = box
    xs, ys = np.asarray(xs), np.asarray(ys)
    xl, xh = xs.min(), xs.max()
    yl, yh = ys.min(), ys.max()
    if yh - yl < 1e-12:
        yl, yh = yl - 1.0, yh + 1.0
    px = x0 + (xs - xl) / (xh - xl if xh > xl else 1.0) * w
    py = y0 + h - (ys - yl) / (yh - yl) * h
    pts = " ".join(f"{a:.2f},{b:.2f}" for a, b in zip(px, py))
    axes = (
        f'<rect x="{x0}" y="{y0}" width="{w}" height="{h}" fill="none" stroke="#999"/>'
        f'<text x="{x0}" y="{y0 + h + 14}" font-size="10">{xl:.2f}</text>'
        f'<text x="{x0 + w}" y="{y0 + h + 14}" font-size="10" text-anchor="end">{xh:.2f}</text>'
        f'<text x="{x0 - 4}" y="{y0 + 8}" font-size="10" text-anchor="end">{yh:.2f}</text>'
        f'<text x="{x0 - 4}" y="{y0 + h}" font-size="10" text-anchor="end">{yl:.2f}</text>'
    )
    return axes + f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>'


def _bars(values, labels, box):
    x0, y0, w, h = box
    values = np.asarray(values, dtype=float)
    scale = max(np.abs(values).max(), 1e-12)
    mid = x0 + w / 2
    step = h / len(values)
    out = [f'<line x1="{mid}" y1="{y0}" x2="{mid}" y2="{y0 + h}" stroke="#999"/>']
    for i, (v, lab) in enumerate(zip(values, labels)):
        bw = abs(v) / scale * (w / 2)
        bx = mid if v >= 0 else mid - bw
        by = y0 + i * step + 0.15 * step
        out.append(
            f'<rect x="{bx:.2f}" y="{by:.2f}" width="{bw:.2f}" height="{0.7 * step:.2f}" '
            f'fill="{"#2a7f62" if v >= 0 else "#b5443b"}"/>'
            f'<text x="{x0 - 4}" y="{by + 0.6 * step:.2f}" font-size="9" '
            f'text-anchor="end">{escape(lab)}</text>'
        )
    return "".join(out)


def component_svg(comp: Component, feature_names: list[str]) -> str:
    width, height = 640, 280
    title = f"Subnetwork {comp.index + 1}  IR: {100 * comp.importance_ratio:.1f}%"
    body = (
        _polyline(comp.grid, comp.ridge, (50, 40, 250, 200))
        + _bars(comp.projection, feature_names, (420, 40, 200, 200))
    )
    return (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">'
        f'<rect width="100%" height="100%" fill="white"/>'
        f'<text x="{width / 2}" y="20" font-size="14" text-anchor="middle">{escape(title)}</text>'
        f"{body}</svg>\n"
    )


def write_plots(report: ExplainReport, out_dir) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for rank, comp in enumerate(report.components, start=1):
        path = out_dir / f"subnet_{rank:02d}.svg"
        path.write_text(component_svg(comp, report.feature_names))
        paths.append(path)
    return paths
