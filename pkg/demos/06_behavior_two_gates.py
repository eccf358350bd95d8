"""The two-gate task end to end: tree trace, gate crossings and the output files."""

import sys
import tempfile
from pathlib import Path

from usvnav.behavior import Blackboard, build_tree, tick
from usvnav.harness.outputs import emit_outputs
from usvnav.harness.scenario import load_scenario, shipped_scenarios
from usvnav.harness.sim import run
from usvnav.localization import EkfState

path = next(p for p in shipped_scenarios() if p.stem == "two_gates")
sc = load_scenario(path)
print(f"{sc.name}: {len(sc.world.buoys)} buoys, seed {sc.seed}, {sc.duration:g} s at dt={sc.dt:g}")
print("tree:", sc.tree)

# the tree itself is plain data; ticking it with nothing seen just waits
tree = build_tree(sc.tree)
trace = []
tick(tree, Blackboard(ego=EkfState.initial(sc.start), objects=[]), trace)
print("first tick:", [(n, s.value) for n, s in trace])

result = run(sc)
m = result.metrics
print(f"success={result.success}  completed at {m['completion_time']} s  replans={m['replans']}")
for g in m["gate_crossings"]:
    print(f"  gate {g['gate']} crossed at t={g['time']:.2f} s")
print(f"min clearance {m['min_clearance']:.2f} m vs hull half-width {m['hull_half_width']} m, RMSE {m['rmse_position']:.3f} m")

# BT status changes, taken from the log
status = result.log.column("bt_status")
t = result.log.column("t")
changes = [(t[0], status[0])] + [(t[i], status[i]) for i in range(1, len(t)) if status[i] != status[i - 1]]
print("bt status:", ", ".join(f"{s}@{ti:.1f}s" for ti, s in changes))

out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp(prefix="two_gates_"))
for name, p in emit_outputs(result, out).items():
    print(f"{name:8s} {p}  ({p.stat().st_size} bytes)")
