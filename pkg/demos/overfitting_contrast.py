"""Unregularized matrix scaling overfits with many classes and few samples.

k=10 and n_cal=200 leave about two samples per parameter for matrix
scaling. The default structured penalties keep SMS close to temperature
scaling, which is the correct model on this preset.
"""
import numpy as np

from structcal import gaussian_lab as gl
from structcal.calibrators import FitOptions, apply, fit
from structcal.metrics import logloss
from structcal.penalties import PenaltySpec

spec = gl.preset("many-class-small-n")
unpenalized = FitOptions(penalty=PenaltySpec.unpenalized())
print(f"{'seed':>4} {'raw':>7} {'ts':>7} {'sms':>7} {'ms':>7}")
rows = []
for seed in range(10):
    s_cal, s_test = np.random.SeedSequence(seed).spawn(2)
    p_cal, y_cal, _ = gl.sample(spec, 200, s_cal)
    p_test, y_test, _ = gl.sample(spec, 10_000, s_test)
    row = [logloss(p_test, y_test)]
    for method in ("ts", "sms", "ms"):
        opts = unpenalized if method == "ms" else FitOptions()
        row.append(logloss(apply(fit(method, p_cal, y_cal, opts), p_test), y_test))
    rows.append(row)
    print(f"{seed:>4} " + " ".join(f"{v:7.4f}" for v in row))
print(" med " + " ".join(f"{v:7.4f}" for v in np.median(rows, axis=0)))
