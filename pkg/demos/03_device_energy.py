"""Batteries, per-depth prices, and what "depleted" means.

Builds the three device classes, prints what each depth costs each class,
then drains one device round by round until it can no longer afford even
the shallowest sub-model.
"""

import numpy as np

from fedbatt import devices as dv
from fedbatt import model as fm

rng = np.random.default_rng(0)
reference = fm.LayerwiseModel(depth=4, input_dim=32, width=64, bottleneck=32,
                              num_classes=10, rng=rng)
model_bytes = reference.view_bytes()
multipliers = dv.depth_multipliers(
    [sum(t.data.size for t in reference.view(m).tensors())
     for m in range(1, 5)])
print("depth cost multipliers (parameter fraction of the full model):",
      [f"{m:.3f}" for m in multipliers])

profiles, states = dv.build_population(num_devices=6, battery_joules=2000.0)
for p in profiles:
    p.shard_size = 100

print("\nper-round energy price by depth (joules, 5 local epochs):")
for tag in ("small", "medium", "large"):
    prof = next(p for p in profiles if p.class_tag == tag)
    costs = dv.action_costs(prof, 5, model_bytes, multipliers)
    pretty = "  ".join(f"d{m + 1}={c:6.1f}" for m, c in enumerate(costs))
    print(f"  {tag:6s} {pretty}")

# drain one small device at full depth until it cannot afford anything
prof, state = profiles[0], states[0]
print(f"\ndraining {prof.class_tag} device {prof.device_id} "
      f"(battery {state.e_remain:.0f} J) at the deepest affordable depth:")
round_index = 0
while True:
    mask = dv.feasible_actions(prof, state, 5, model_bytes, multipliers)
    if not mask[:-1].any():
        break
    depth = int(np.flatnonzero(mask[:-1]).max()) + 1
    entry = dv.round_cost_entry(prof, depth, 5, model_bytes, multipliers)
    dv.charge_round(state, entry)
    round_index += 1
    print(f"  round {round_index}: trained depth {depth} "
          f"for {entry.total_energy:6.1f} J -> {state.e_remain:7.1f} J left")

dv.refresh_depleted(prof, state, 5, model_bytes, multipliers)
print(f"depleted={state.depleted} after {round_index} rounds; "
      f"{state.e_remain:.1f} J stranded below the depth-1 price")
