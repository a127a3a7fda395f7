"""
Checking gradients by finite differences
========================================

Every op and block is differentiated by autograd; here the results are
compared against central differences in float64.
"""

import torch

from msmgnet import core
from msmgnet.gradcheck import run_suite

###############################################################################
# One op by hand: a softmax contracted with a fixed random vector.
gen = torch.Generator().manual_seed(0)
x = torch.randn(3, 5, generator=gen, dtype=torch.float64)
w = torch.randn(3, 5, generator=gen, dtype=torch.float64)
print("softmax relative error", core.finite_diff_check(lambda a: (core.softmax(a, -1) * w).sum(), x))

###############################################################################
# The whole suite: ops, composite blocks, and the full model under the loss.
for r in run_suite(seed=0):
    print(f"{r.name:28s} {r.error:.2e}  (tol {r.tol:.0e})  {'ok' if r.ok else 'FAIL'}")
