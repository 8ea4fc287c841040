"""Loss-curve fitting and the probability update rule, step by step.

A synthetic loss history is fit with the decaying exponential, the fit
predicts the improvement still available over the next window, and ten
scheduler updates show how utilities move the sampling distribution.
"""

import numpy as np

from domainmix import (
    LossHistory,
    UtilityVector,
    fit_decay,
    loss_improvement,
    potential,
    uniform_state,
    update_probs,
    utilities,
)
from domainmix.impact import ImpactMatrix

# --- decay fit ---------------------------------------------------------------
rng = np.random.default_rng(1)
steps = np.arange(0, 2001, 200)
true = 1.8 * np.exp(-0.002 * steps) + 0.6
observed = np.abs(true + rng.normal(0, 0.01, size=steps.size))
history = LossHistory(task_id=0, points=tuple(zip(steps.tolist(), observed.tolist())))

fit = fit_decay(history)
print(f"fitted a={fit.a:.3f} b={fit.b:.5f} c={fit.c:.3f} (rms {fit.residual:.4f})")
print(f"latest improvement: {loss_improvement(history):.4f}")
current = observed[-1]
print(f"predicted headroom over next 200 steps: "
      f"{potential(fit, t=2000, tau=200, current_loss=current):.4f}")

# --- probability updates -----------------------------------------------------
# Three domains, one task. The normalized impact column favors domain 0;
# the scheduler converts that plus the loss signals into sampling mass.
impact = ImpactMatrix(
    raw=np.array([[0.2], [1.0], [3.0]]),
    normalized=np.array([[0.55], [0.30], [0.15]]),
    metric="fim_kl",
)
state = uniform_state(3, beta=0.5, tau=200)
print("\nupdate  probs")
print(f"  0     {np.round(state.probs, 3)}")
for update in range(1, 11):
    dl, lp = 0.05, 0.04  # steady loss signal keeps the example legible
    u = utilities(impact, [dl], [lp], state.probs)
    state = update_probs(state, u, temperature=0.05)
    print(f"{update:>3}     {np.round(state.probs, 3)}")

print("\ndomain 0 gains mass until the importance correction (divide by its")
print("own probability) balances its impact advantage")
