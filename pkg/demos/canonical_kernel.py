"""Split memory kernels into level, tempo and shape.

A GARCH kernel and a truncated hyperbolic kernel are decomposed; doubling
the decay horizon changes only the tempo.
"""
import numpy as np

from gatedvol.kernel_core import (DiscreteKernel, SampledKernel, decompose_kernel, garch_kernel,
                                  low_frequency_slope)

for mu in (10.0, 20.0):
    t = decompose_kernel(garch_kernel(0.05, np.exp(-1 / mu), int(60 * mu)))
    print(f"GARCH  mu={mu:>4}: level {t.level_M:.4f}  tempo {t.tempo_mu:.3f}")

grid = np.linspace(0, 1000, 20001)
for s in (1.0, 2.0):
    g = grid * s
    t = decompose_kernel(SampledKernel(g, (1 + grid) ** -1.3 / s))
    print(f"hyperbolic x{s:.0f}: level {t.level_M:.4f}  tempo {t.tempo_mu:.3f}  shape[:3] {np.round(t.shape_g[:3], 4)}")

k = np.arange(1, 20_001, dtype=float)
print(f"power-law kernel low-frequency slope {low_frequency_slope(DiscreteKernel(k ** 0.3 - (k - 1) ** 0.3)):.3f}")
