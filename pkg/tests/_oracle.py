"""Frozen oracle values for the radial ground profile.

Regeneration recipe (independent of the production solver): shoot with
scipy.integrate.solve_ivp(DOP853, rtol=1e-13, atol=1e-14) from the series
start at r0 = 1e-6, classify overshoot/undershoot, locate w(0) with
scipy.optimize.brentq to 1e-13, continue the profile past r = 10 with the
decaying Bessel mode (growing component projected out at the junction), and
integrate moments with scipy.integrate.simpson on dr = 0.001 out to R = 30.
"""

# w(0) of the radial ground profile
W0 = 2.206200864650725

# critical interaction strength: int w^2 = int |grad w|^2 = (1/2) int w^4
A_STAR = 11.700896524561033

# plane moments of the profile
SECOND_MOMENT = 13.89486163637763      # int |x|^2 w^2
THIRD_MOMENT = 23.72774386058513       # int |x|^3 w^2
FOURTH_MOMENT = 50.778982291920045     # int |x|^4 w^2

# lambda = (p/2 * int |x|^p w^2)^(1/(2+p)) for the pure power traps
LAMBDA_P = {2: 1.9306944876213974, 3: 2.043005524055218, 4: 2.159992938591822}

# amplitude of the K0 tail
TAIL_AMP = 2.807007510103917
