"""Run artefacts: ``log.csv``, ``metrics.json`` and ``trajectory.svg``."""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np

from ..perception import Circle, World
from .sim import COLUMNS, RunResult, SimLog, rmse_position


def _fmt(v) -> str:
    if isinstance(v, str):
        return v
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    # repr is the shortest round-tripping spelling, so re-reading is exact
    return repr(float(v))


def write_csv(log: SimLog, path: Path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(COLUMNS)
        for row in log.rows:
            w.writerow([_fmt(v) for v in row])


def read_csv(path) -> Dict[str, np.ndarray]:
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader)
        rows = list(reader)
    out = {}
    for i, name in enumerate(header):
        col = [r[i] for r in rows]
        out[name] = np.array(col, dtype=object) if name == "bt_status" else np.array(col, dtype=float)
    return out


def _svg(polylines: List[tuple], world: Optional[World], size: int = 800) -> str:
    pts = [p for _, p, _ in polylines if len(p)]
    shapes_xy = []
    if world is not None:
        for sh in world.shapes:
            if isinstance(sh, Circle):
                shapes_xy.append([[sh.x - sh.r, sh.y - sh.r], [sh.x + sh.r, sh.y + sh.r]])
            else:
                shapes_xy.append(list(sh.vertices))
    allp = np.vstack(pts + [np.asarray(s, dtype=float) for s in shapes_xy]) if (pts or shapes_xy) else np.zeros((1, 2))
    allp = allp[np.all(np.isfinite(allp), axis=1)]
    lo = allp.min(axis=0) - 2.0
    hi = allp.max(axis=0) + 2.0
    span = float(max(hi - lo))
    scale = size / span

    def xy(p):
        # flip y so north is up
        return f"{(p[0] - lo[0]) * scale:.2f},{(hi[1] - p[1]) * scale:.2f}"

    w = (hi[0] - lo[0]) * scale
    h = (hi[1] - lo[1]) * scale
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w:.0f}" height="{h:.0f}" viewBox="0 0 {w:.2f} {h:.2f}">',
        f'<rect width="{w:.2f}" height="{h:.2f}" fill="#eef4fa"/>',
    ]
    if world is not None:
        for sh in world.shapes:
            if isinstance(sh, Circle):
                colour = {"red_marker": "#d62728", "green_marker": "#2ca02c"}.get(sh.label or "", "#555555")
                cx, cy = xy((sh.x, sh.y)).split(",")
                out.append(f'<circle class="{"buoy" if sh.label else "obstacle"}" cx="{cx}" cy="{cy}" r="{sh.r * scale:.2f}" fill="{colour}"/>')
            else:
                pts_s = " ".join(xy(v) for v in sh.vertices)
                out.append(f'<polygon class="obstacle" points="{pts_s}" fill="#777777"/>')
    for cls, p, style in polylines:
        p = p[np.all(np.isfinite(p), axis=1)]
        if len(p) == 0:
            continue
        pts_s = " ".join(xy(q) for q in p)
        out.append(f'<polyline class="{cls}" points="{pts_s}" fill="none" {style}/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def trajectory_svg(log: SimLog, world: Optional[World]) -> str:
    truth = np.column_stack([log.column("x"), log.column("y")])
    est = np.column_stack([log.column("est_x"), log.column("est_y")])
    lines = [("plan", p, 'stroke="#ff7f0e" stroke-width="1" stroke-dasharray="4,3"') for _, p in log.paths]
    lines.append(("truth", truth, 'stroke="#1f77b4" stroke-width="2"'))
    lines.append(("ekf", est, 'stroke="#9467bd" stroke-width="1"'))
    return _svg(lines, world)


def emit_outputs(result: RunResult, out_dir) -> Dict[str, Path]:
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        paths = {"log": out / "log.csv", "metrics": out / "metrics.json", "plot": out / "trajectory.svg"}
        write_csv(result.log, paths["log"])
        paths["metrics"].write_text(json.dumps(result.metrics, indent=2, sort_keys=True) + "\n")
        paths["plot"].write_text(trajectory_svg(result.log, result.scenario.world))
    except OSError as e:
        raise OSError(f"cannot write outputs to {out}: {e}") from e
    return paths


def replay(log_csv, plot: bool = False) -> Dict[str, object]:
    """Summarise a saved log; with ``plot`` also write ``<log>.svg`` beside it."""
    cols = read_csv(log_csv)
    summary = {
        "rows": int(len(cols["t"])),
        "duration": float(cols["t"][-1]) if len(cols["t"]) else 0.0,
        "rmse_position": rmse_position(cols["x"], cols["y"], cols["est_x"], cols["est_y"]),
        "final_bt_status": str(cols["bt_status"][-1]) if len(cols["t"]) else None,
    }
    if plot:
        truth = np.column_stack([cols["x"], cols["y"]])
        est = np.column_stack([cols["est_x"], cols["est_y"]])
        svg = _svg(
            [("truth", truth, 'stroke="#1f77b4" stroke-width="2"'), ("ekf", est, 'stroke="#9467bd" stroke-width="1"')],
            None,
        )
        target = Path(log_csv).with_suffix(".svg")
        target.write_text(svg)
        summary["plot"] = str(target)
    return summary
