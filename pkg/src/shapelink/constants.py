"""Numerical constants shared by the demapper, decoders and channel."""

# Every LLR produced by a soft block is clamped to this magnitude.
LLR_CLIP = 30.0

# arctanh argument bound inside the check-node update.
TANH_CLIP = 1.0 - 1e-12

# DVB-S2 32APSK ring radius ratios (r2/r1, r3/r1) for code rate 3/4.
APSK32_GAMMA = (2.84, 5.27)
APSK32_RING_SIZES = (4, 12, 16)


def equalized_noise_variance(rho):
    """Residual noise variance of an LMMSE-equalized symbol, y_eq = rho*x + nu.

    The closed form usually quoted for this model is rho**2 - rho, which is
    negative on (0, 1); the physically meaningful value is its negation.
    """
    return rho * (1.0 - rho)
