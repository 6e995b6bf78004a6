"""Maps between cone orbifolds.

Builds D/Z4 and D/Z2, checks that z -> z^2 descends to a complete orbifold
map, and compares its tension with that of a non-harmonic equivariant map.
"""
import numpy as np

from orbharm import (ComplexPowerLift, ExpressionLift, MetricField, cone_atlas, energy, is_harmonic,
                     single_chart_map, validate_atlas, validate_map)
from orbharm.atlas import rotation2d

src, tgt = cone_atlas(4), cone_atlas(2)
print(f"{src.name}: {validate_atlas(src).passed}, {tgt.name}: {validate_atlas(tgt).passed}")

# rotation by pi/2 upstairs becomes rotation by pi downstairs
zsq = single_chart_map(src, tgt, ComplexPowerLift(2), [rotation2d(np.pi)], name="zsq")
rep = validate_map(zsq)
print(f"z^2 valid: {rep.passed} (max residual {rep.max_residual():.1e})")

flat = MetricField.flat()
ok, sup = is_harmonic(zsq, flat, flat)
print(f"z^2 harmonic: {ok}, sup |tau| = {sup:.1e}, energy per fundamental domain {energy(zsq, flat, flat):.6f}")

bent = single_chart_map(src, tgt, ExpressionLift(["(x**2 - y**2)*(1 - 0.2*(x**2 + y**2))",
                                                  "2*x*y*(1 - 0.2*(x**2 + y**2))"]),
                        [rotation2d(np.pi)], name="bent")
print(f"bent map valid: {validate_map(bent).passed}")
ok, sup = is_harmonic(bent, flat, flat)
print(f"bent map harmonic: {ok}, sup |tau| = {sup:.3f}")

# the same source with the hyperbolic metric on both sides
hyp = MetricField.hyperbolic()
ok, sup = is_harmonic(zsq, hyp, hyp)
print(f"z^2 between hyperbolic cones harmonic: {ok} (holomorphic maps of conformal metrics are harmonic)")
