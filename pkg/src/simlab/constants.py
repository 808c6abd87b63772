"""Pilot-calibrated constants.

None of these have known closed forms; each was fixed by a small pilot
run and is only a default. Every value can be overridden through
:class:`simlab.estimators.EstimatorConfig` or the harness config.
"""

# online SGD step size eta = c * beta * d^(-l/2); 0.5 overshoots once the
# iterate leaves the equator (Q_l' grows like d^(l/2) there)
SGD_ETA_CONST = 0.1

# Hermite SGD uses the same formula with beta = E[T*(y) He_k(<w*, x>)]
HESGD_ETA_CONST = 0.1

# spectral l=2 on GaussianHermite(k=2, sigma=0.5): m = C d gives >= 90% success
# (about 98% at d = 50..400 with SPECTRAL_KAPPA)
SPECTRAL2_SAMPLE_CONST = 3.0

# clipping level of T_l for the spectral estimators; at 10 a handful of
# samples with large |T| and z near w dominate the spectrum and the
# threshold drifts upward with d
SPECTRAL_KAPPA = 2.0

# clipping level of T_l elsewhere
TRANSFORM_KAPPA = 10.0

# single boost step from overlap 0.1 at l=3: chunk = C d^l doubles the overlap
BOOST_CHUNK_CONST = 1.6

# calibration draws for data-driven transformations
N_CAL = 30000
