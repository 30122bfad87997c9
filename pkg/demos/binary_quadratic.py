"""Quadratic scaling recovers the Bayes map of an unequal-variance binary problem.

With Gaussian class-conditional logits of different variances the exact
posterior is a sigmoid of a quadratic in the logit. Affine and linear
scaling cannot express the curvature, so they plateau above it.
"""
import numpy as np

from structcal import gaussian_lab as gl
from structcal.calibrators import apply, fit
from structcal.metrics import logloss

spec = gl.preset("binary-unequal-variance")
orc = gl.binary_oracle(spec)
print(f"analytic map: a={orc.a:+.4f} b={orc.b:+.4f} c={orc.c:+.4f}")

s_cal, s_test = np.random.SeedSequence(0).spawn(2)
p_cal, y_cal, _ = gl.sample(spec, 200_000, s_cal)
p_test, y_test, _ = gl.sample(spec, 500_000, s_test)

quad = fit("binary-quadratic", p_cal, y_cal)
print("fitted       gamma={:+.4f} alpha={:+.4f} beta={:+.4f}".format(*quad.gamma_beta))

print(f"\n{'method':<18}test logloss")
print(f"{'uncalibrated':<18}{logloss(p_test, y_test):.5f}")
for method in ("binary-linear", "binary-affine", "binary-quadratic"):
    ll = logloss(apply(fit(method, p_cal, y_cal), p_test), y_test)
    print(f"{method:<18}{ll:.5f}")
print(f"{'Bayes oracle':<18}{logloss(orc.calibrate(p_test), y_test):.5f}")
