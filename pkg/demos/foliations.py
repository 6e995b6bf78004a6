"""Leaf spaces of mapping tori and the transverse harmonicity checks.

The suspension of a rotation by 2 pi / k is a foliation by circles whose leaf
space is the cone D/Zk. Foliated maps between such spaces induce orbifold
maps, and transverse harmonicity upstairs matches harmonicity downstairs.
"""
import numpy as np

from orbharm import MetricField, build_mapping_torus, leaf_space_orbifold, theorem_harness
from orbharm.atlas import isotropy_order, rotation2d
from orbharm.foliation import trace_leaf
from orbharm.scenario import Scenario

for k in (2, 3, 4, 6):
    fm = build_mapping_torus(rotation2d(2 * np.pi / k), MetricField.flat(), k)
    X = leaf_space_orbifold(fm)
    print(f"k={k}: generic leaf wraps {trace_leaf(fm, [0.5, 0.1])} times, "
          f"cone point isotropy {isotropy_order(X, 'N_a', [0.0, 0.0])}")

sc = Scenario.load("z4_to_z2.json")
res = theorem_harness([sc.foliated_map(n) for n in sc.names["foliated_maps"]])
print(f"\n{'map':32s} {'|tau_b|':>9s} {'|tau(fbar)|':>11s} {'|tau|':>9s} {'leafwise':>9s}  checks")
for r in res["scenarios"]:
    s = r["sup"]
    marks = " ".join(f"{k}:{'-' if not c['applicable'] else ('ok' if c.get('agree', not c.get('violated')) else 'X')}"
                     for k, c in r["checks"].items())
    print(f"{r['name']:32s} {s['tau_b']:9.2e} {s['tau_fbar']:11.2e} {s['tau']:9.2e} {s['leafwise']:9.2e}  {marks}")
print(f"\nall checks agree: {res['passed']}")
