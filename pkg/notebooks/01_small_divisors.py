# %% [markdown]
# # Small divisors at the golden period
#
# The period T = 2 pi sqrt(sigma) with sigma the golden ratio keeps every
# space-time divisor lambda(m, n) = 2 pi m / T - sqrt(|n|^2 + 1) away from zero.
# This notebook measures how fast the divisors shrink with the shell index.

# %%
import math

from pflab.smalldiv import continued_fraction, diophantine_constants, flow_separation_bound, lambda_spectrum

golden = (1 + math.sqrt(5)) / 2
T = 2 * math.pi * math.sqrt(golden)

# %% [markdown]
# Continued fraction and Diophantine constant.  The constant approaches 1/sqrt(5).

# %%
cf = continued_fraction(golden)
print(cf.quotients[:12], cf.convergents[:6])
rep = diophantine_constants(golden, 10_000)
print(f"best_c {rep.best_c:.6f}  1/sqrt(5) {1 / math.sqrt(5):.6f}  fitted r {rep.fitted_r}")

# %% [markdown]
# Shell minima of |lambda| and the fitted decay exponent.

# %%
sp = lambda_spectrum(T, 32, 64)
print(f"min |lambda| {sp.min_abs:.3e} at {sp.witness}")
print(f"exponent {sp.fitted_exponent:.2f}, record slope {sp.record_slope:.2f}")
for N, v in list(zip(sp.shell_N, sp.shell_min))[::40]:
    print(f"N = {int(N):5d}  min|lambda| = {v:.3e}  N*min = {N * v:.3f}")

# %% [markdown]
# Separation of the free flow from the identity after one period, unweighted.

# %%
for k in (4, 8, 16, 32, 64):
    print(k, f"{flow_separation_bound(T, k, 0.0, 0.0):.3e}")

# %% [markdown]
# A rational sigma gives an exact resonance.

# %%
print(lambda_spectrum(2 * math.pi, 4, 4).min_abs)
