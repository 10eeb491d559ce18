#!/usr/bin/env python3
"""Walk through rotation detection and gating on a synthetic rate profile.

The gate measures the axis-angle rotation between consecutive tracked
poses and fires while it exceeds beta (default 0.03 rad per frame pair).
Synthesized frames never re-trigger detection.
"""

import numpy as np

from spinvo.geometry import PoseSE3, rotation_from_axis_angle
from spinvo.rotation_gate import GateConfig, RotationGate

rates = [0.0, 0.0, 0.01, 0.02, 0.05, 0.08, 0.08, 0.05, 0.02, 0.0, 0.0]

gate = RotationGate(GateConfig(beta=0.03, mode="gated"))
yaw = 0.0
print(f"{'frame':>5} {'rate':>6} {'theta':>8} {'fires':>6}")
for i, rate in enumerate(rates):
    yaw += rate
    pose = PoseSE3(rotation_from_axis_angle([0, 1, 0], yaw), [0.0, 0.0, 0.1 * i])
    measurement, decision = gate.observe(i, pose, is_interpolated=False)
    theta = measurement.theta if measurement else float("nan")
    print(f"{i:>5} {rate:>6.3f} {theta:>8.4f} {'yes' if decision else '-':>6}")

print()
print("translation does not trigger the gate:")
gate = RotationGate(GateConfig(beta=0.03, mode="gated"))
for i in range(5):
    pose = PoseSE3(np.eye(3), [0.5 * i, 0.0, 0.0])
    m, decision = gate.observe(i, pose, is_interpolated=False)
    print(f"  frame {i}: theta={m.theta if m else float('nan'):.6f} fires={decision}")
