"""Structured matrix scaling reaches the Bayes logloss when covariances match.

With a shared covariance the exact recalibration map is affine in the
centered logits, so a (regularized) matrix scaling model is well specified.
"""
import numpy as np

from structcal import gaussian_lab as gl
from structcal.calibrators import apply, fit
from structcal.metrics import logloss

for name in ("multiclass-equal-cov", "multiclass-unequal-cov"):
    spec = gl.preset(name)
    orc = gl.multiclass_oracle(spec)
    s_cal, s_test, s_mc = np.random.SeedSequence(1).spawn(3)
    p_cal, y_cal, _ = gl.sample(spec, 10_000, s_cal)
    p_test, y_test, _ = gl.sample(spec, 100_000, s_test)
    bayes, se = gl.bayes_logloss(spec, 200_000, s_mc)
    print(f"\n{name}  (quadratic term constant: {orc.quadratic_term_constant})")
    print(f"  uncalibrated {logloss(p_test, y_test):.4f}")
    for method in ("ts", "svs", "sms"):
        print(f"  {method:<12} {logloss(apply(fit(method, p_cal, y_cal), p_test), y_test):.4f}")
    print(f"  Bayes        {bayes:.4f} +- {se:.4f}")
