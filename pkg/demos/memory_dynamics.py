"""Watch the two reinforcement memories react to a quality drop and recovery.

A hidden-size-1 RMU with the constant initialisation is driven by a
hand-made quality curve. The constant scheme sets U_s = -1, so the cell
responds to impairment: we feed it the negated quality.
"""

import numpy as np

from rmukit import build_net
from rmukit.persist import memory_trace

quality = np.array([1.0] * 6 + [-1.0] * 6 + list(np.linspace(-1, 1, 13)[1:]) + [1.0] * 6)
net = build_net("rmu", 1, 1, init="constant_qoe")
header, rows = memory_trace(net, -quality[:, None])

print(f"{'t':>3s} {'quality':>8s} {'s':>8s} {'C+':>8s} {'C-':>8s} {'h':>8s}")
for q, row in zip(quality, rows):
    t, s, c_plus, c_minus, h, _ = row
    bar = "+" * int(round(10 * c_plus)) + "-" * int(round(10 * c_minus))
    print(f"{t:3d} {q:8.3f} {s:8.4f} {c_plus:8.4f} {c_minus:8.4f} {h:8.4f}  {bar}")

# The drop writes C- immediately, while C+ only decays through the low stretch.
# During recovery C+ is rebuilt step by step and eventually wins again.
