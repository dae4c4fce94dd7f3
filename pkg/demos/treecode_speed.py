"""Far-field expansions against the direct sum on a noisy line."""
import time

import numpy as np

from rieszrect.experiments import noisy_line
from rieszrect.kernels import direct_sum
from rieszrect.treecode import Treecode

eps = 8e-3
for N in (10_000, 40_000):
    mu = noisy_line(count=N)
    t0 = time.perf_counter()
    fast = Treecode(mu).evaluate(mu.points, eps)
    t_fast = time.perf_counter() - t0
    t0 = time.perf_counter()
    slow = direct_sum(mu, mu.points, eps, "smooth")
    t_slow = time.perf_counter() - t0
    err = np.linalg.norm(fast - slow) / np.linalg.norm(slow)
    print(f"N={N:>6}: treecode {t_fast:6.2f}s  direct {t_slow:6.2f}s  relative error {err:.1e}")
