"""Frozen constants from tests/oracles/derive_golden.py (mpmath, 50 digits)."""

ALPHA_BAR_1000 = 0.000040358297653756833148
ALPHA_BAR_500 = 0.078587242881778237343
PERTURB_500 = (1.2402366355991948574, -0.6795683098243987034)
POSTERIOR_T4_MU = (0.37851016427526591281, -0.65343797136474113563)
POSTERIOR_T4_VAR = 0.071428571428571428571
KL_1D_T300 = 0.0010047086757950173387
ORACLE_EPS = 0.28284271247461900976
DDPM_T4_CHAIN = 0.57561575411489904692
EM_STEP = 0.77821105039519043194
LANGEVIN_STEP = 0.11600505063388334658
FRECHET_DIAG = 11.25
SW_UNIT_SHIFT_2D = 0.63661977236758134308

# hand count of layer shapes for (stack, N=8, width=64, in_dim=2, time_embed=32, ff_mult=2)
#   embed   2*64 + 32*64 + 64                      = 2240
#   block   2*64 + (32*64+64) + (64*128+128) + (128*64+64) = 18816, eight of them
#   head    2*64 + 64*2 + 2 + 2*2                  = 262
PARAM_COUNT_STACK8_W64 = 2240 + 8 * 18816 + 262
