"""Regenerate the synthetic dataset bundled with the package.

The returns come from a regime-gated model driven by a persistent
volatility factor; trading volume loads on the same factor.  Running this
script rewrites ``src/gatedvol/data/synthetic.csv``.
"""
from pathlib import Path

import numpy as np

from gatedvol.cli_io import write_series
from gatedvol.features import ReturnSeries
from gatedvol.models import Family, ModelSpec, ParamVector, simulate_path

T = 2520
SEED = 7

spec = ModelSpec(Family.RSM)
truth = ParamVector(omega=0.04, alpha=0.07, beta_low=0.75, beta_high=0.92, gamma_p=np.array([1.2, 0.0]))
sim = simulate_path(spec, truth, T, seed=SEED)

rng = np.random.default_rng(SEED + 1)
factor = sim.features.z[:, 0]
volume = np.round(1e6 * np.exp(0.3 * factor + 0.2 * rng.standard_normal(T)))
dates = np.busday_offset("2010-01-05", np.arange(T), roll="forward")
series = ReturnSeries(dates, sim.series.returns, volume=volume, percent=True)

out = Path(__file__).resolve().parents[1] / "src" / "gatedvol" / "data" / "synthetic.csv"
write_series(out, series, scale=100.0, meta={"source": "synthetic", "family": "RSM", "seed": SEED})
print(out)
