"""Compare hand-derived gradients with central finite differences.

The oracle perturbs every parameter and input entry by +-1e-5 and runs the
forward pass in extended precision, so even tiny gradients are resolved.
"""

from rmukit import build_net, cells
from rmukit.training import grad_check, randomized

for kind in cells.CELL_KINDS:
    cell = randomized(cells.init_params(kind, d_in=3, d_hid=4), seed=1)
    report = grad_check(cell, T=6, seed=1)
    print(f"--- {kind} cell")
    print(report)

net = randomized(build_net("rmu", d_feat=5, d_hid=3, dropout_rate=0.5), seed=2)
print("--- rmu network (dropout masks frozen)")
print(grad_check(net, T=8, seed=2))


# A broken backward pass is caught: flip the sign of one block.
cell = randomized(cells.init_params("rmu", 3, 4), seed=1)


def sign_flipped(instance):
    grads, dxs = cells.backward(cell, cells.unroll(cell, instance["xs"]), instance["weights"])
    grads["U_f_minus"] = -grads["U_f_minus"]
    return grads, dxs


report = grad_check(cell, backward=sign_flipped, T=6, seed=1)
print("--- rmu cell, U_f_minus sign flipped")
print(f"U_f_minus error {report.errors['U_f_minus']:.3f}, passed={report.passed}")
