"""Day-ahead probabilistic forecasting from the previous day's profile.

Each training row pairs day d (condition, B = T) with day d+1 (target). The
flow's ensemble is scored against a climatology baseline that ignores the
previous day entirely.
"""
import numpy as np

from fcpflow import data as D
from fcpflow import metrics as M
from fcpflow.training import TrainConfig, fit

raw = D.synth_generate("archetype-mixture", 3000, 24, seed=3)
pairs = D.window_day_pairs(raw)
train, test = D.split(pairs, 0.8, seed=3)
print(f"{pairs.N} day pairs, {pairs.meta['skipped_gaps']} skipped gaps")

scaler = D.fit_scaler(train)
model, _ = fit(D.apply_scaler(train, scaler), TrainConfig(epochs=30, lr=2e-3, blocks=3, hidden=64,
                                                          schedule="cosine"))

test = test.subset(np.arange(80))
cs = scaler.transform_conditions(test.conditions)[0]
ens = [scaler.inverse_profiles(model.sample(cs[i:i + 1], n=200, seed=i)) for i in range(test.N)]
flow = M.forecast_report(test.profiles, ens)
clim = M.forecast_report(test.profiles, [train.profiles] * test.N)
print(f"{'':12s}{'PL':>9s}{'CRPS':>9s}{'MSE':>9s}")
for name, r in (("flow", flow), ("climatology", clim)):
    print(f"{name:12s}{r.pl:9.4f}{r.crps:9.4f}{r.mse:9.4f}")

# coverage of the central 90% band
q = [M.empirical_quantiles(e, (0.05, 0.95)) for e in ens]
inside = np.mean([np.mean((y >= qq[0.05]) & (y <= qq[0.95])) for y, qq in zip(test.profiles, q)])
print(f"90% band coverage: {inside:.1%}")
