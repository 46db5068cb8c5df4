#!/usr/bin/env python3
"""Verify every layer's backward pass against central finite differences.

Each check perturbs one scalar at a time by h = 1e-5, so this is slow by
design; the shapes are kept tiny. The same suite backs the `deviceprint
gradcheck` command and exits nonzero on any failure.
"""

import sys
import time

from deviceprint.nn import gradcheck

start = time.time()
results = gradcheck.run_all(seed=0, threshold=1e-4)
for name, err, passed in results:
    print(f"{name:24s} max rel err {err:.3e}  {'PASS' if passed else 'FAIL'}")
print(f"\n{len(results)} layers checked in {time.time() - start:.1f}s")
sys.exit(0 if all(passed for _, _, passed in results) else 1)
