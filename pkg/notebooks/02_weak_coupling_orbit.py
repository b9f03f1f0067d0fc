# %% [markdown]
# # A periodic orbit at weak coupling
#
# Alternating field solves and particle shooting converge to a periodic
# orbit of the weak-coupling benchmark.  Action descent from a nearby loop
# then checks the energy bookkeeping.

# %%
import math

import numpy as np

from pflab.dynamics import CutoffParams, LoopState, gauge_transform
from pflab.experiment import build_spec, load_config
from pflab.geometry import ParticleState
from pflab.orbit_solver import (alternating_fixed_point, double_winding, field_spectrum, floer_descent,
                                orbit_residual)
from pflab.smalldiv import decay_fit

spec = build_spec(load_config("weak-coupling"))

# %%
orbit = alternating_fixed_point(ParticleState((math.pi - 1.0, math.pi), (0.0, 0.0)), spec)
print(f"residual {orbit.residual:.2e} after {orbit.iterations} sweeps, action {orbit.action:.6f}")
print("sweep residuals", [f"{r:.1e}" for r in orbit.trace])

# %% [markdown]
# The field of the orbit decays exponentially in space-time frequency.
# Doubling the winding does not give an orbit.

# %%
fit = decay_fit(field_spectrum(orbit.loop))
print(f"alpha {fit.alpha:.3f}  C {fit.C:.3e}")
print(f"doubled winding residual {orbit_residual(double_winding(orbit.loop), spec).total:.3f}")

# %% [markdown]
# Descent from a perturbed loop.  The accumulated energy should match the action drop.

# %%
nt = orbit.loop.nt
th = math.pi + 0.3 + 0.1 * np.sin(2 * math.pi * np.arange(nt) / nt)
q = np.column_stack([math.pi + np.cos(th), math.pi + np.sin(th)])
u0 = LoopState(q, np.zeros_like(q), np.zeros((nt, spec.modes.size)), spec.T, spec.modes)
u, tr = floer_descent(gauge_transform(u0, "forward"), CutoffParams(10.0, 3.0), spec)
print(f"action {tr.actions[0]:.6f} -> {tr.actions[-1]:.6f}, energy {tr.energy:.6f}")
print(f"mismatch {100 * tr.energy_mismatch():.2f}%  converged {tr.converged}")
