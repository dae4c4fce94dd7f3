"""Stopping-time construction on a noisy tilted line.

A slope-0.05 line sampled with 1e4 atoms and transverse noise 1e-3 is fed
to the stopping-region construction on the unit ball around the origin.
The script prints the hypotheses, the partition of F cap B0 and how much of
the ball the constructed Lipschitz graph covers.
"""
import json

from rieszrect.experiments import _jsonable, corona_pipeline

out = corona_pipeline(kind="noisy-line", delta0=0.9, alpha=0.3, eps=0.025, t_min=0.125)
rep = out["report"]
print("hypotheses:", json.dumps(_jsonable(rep["hypotheses"]), indent=1))
print("partition counts:", rep["counts"])
print(f"graph: ||grad A||_inf = {rep['lip_inf']:.4f} ({rep['lip_over_alpha']:.3f} alpha)")
print(f"coverage of c_n r0^n: {rep['coverage']:.4f}  (needs >= 0.9)")

g = out["state"].graph
mid = g.A.grid.shape[0] // 2
for k in range(mid - 64, mid + 65, 32):
    p = g.A.grid[k, 0]
    print(f"A({p:+.3f}) = {g.A.values[k, 0]:+.5f}   line: {0.05 * p:+.5f}")
