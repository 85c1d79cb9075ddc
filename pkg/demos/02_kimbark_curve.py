"""How well ten samples predict the rest of a power-angle curve.

For the couple 34_30 in the bus-34 fault, the window fits are extended past
the window and compared with the curve the simulation actually traced, up to
the point where the couple starts to accelerate again.
"""

import numpy as np

from couplestab import FaultScenario, bundled_case, simulate, solve_power_flow
from couplestab import predictor as pred
from couplestab.pairs import detect_events, pair_series

solved = solve_power_flow(bundled_case())
traj = simulate(solved, FaultScenario(0.23, bus=34), dt=1e-3, t_end=2.23)
ps = pair_series(traj, 34, 30)

w = pred.collect_window(ps, 0.23)
qr, sn = pred.fit_qr(w), pred.fit_sin(w)
print(f"window: {w.count} samples from {w.t[0]:.2f} s to {w.t[-1]:.2f} s, "
      f"angle {w.delta[0]:.3f} -> {w.delta[-1]:.3f} rad")
print(f"rms in the window: qr {pred.window_rms(qr, w):.4f}  sin {pred.window_rms(sn, w):.4f} pu")

ev = detect_events(ps)
p = pred.classify(qr, sn, ps.Pm, ps.delta_c)
print(f"\nactual {ev.kind} at {ev.angle:.3f} rad, predicted crossing {p.pcmdlp:.3f} rad (class {p.kind})")

# compare the extrapolation with the simulated curve between clearing and the event
c = traj.clearing_index
d, pe = ps.delta[c: ev.index + 1], ps.pe[c: ev.index + 1]
print("\n delta   actual     qr      sin")
for k in np.linspace(0, len(d) - 1, 8).astype(int):
    print(f"{d[k]:6.3f}  {pe[k]:7.3f}  {qr(d[k]):7.3f}  {sn(d[k]):7.3f}")
