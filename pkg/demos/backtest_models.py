"""Rolling out-of-sample comparison on the bundled data.

Fits GARCH and the regime-gated model on trailing windows of the bundled
synthetic series and prints the loss and VaR backtest table.
"""
from gatedvol.cli_io import bundled_config_path, load_config, load_series, render_text
from gatedvol.estimation import FitOptions
from gatedvol.evaluation import rolling_backtest
from gatedvol.features import build_feature_matrix
from gatedvol.models import Family, ModelSpec

cfg = load_config(bundled_config_path())
series = load_series(cfg.path("data.path"), scale=cfg["data.scale"])
feats = build_feature_matrix(series)
specs = [ModelSpec(Family.GARCH), ModelSpec(Family.RSM)]
bt = rolling_backtest(specs, series, feats, window=1500, refit_every=63,
                      fit_options=FitOptions(n_starts=1, compute_cov=False))
cols = ["qlike", "rmse", "exceed_rate_5", "kupiec_p_5"]
rows = [[name] + [f"{m[c]:.4f}" for c in cols] for name, m in bt.models.items()]
print(render_text(["model"] + cols, rows))
for pair in bt.pairwise:
    print(pair)
