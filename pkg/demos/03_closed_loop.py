# %% [markdown]
# # Closed loop: perceive, plan, act, replan
#
# The scenarios live in the package data; the same files drive the CLI.

# %%
from importlib import resources

from magpie_sim.executive import perceive, run_batch, run_episode
from magpie_sim.scenario import load_scenario

scenarios = resources.files("magpie_sim") / "data" / "scenarios"

tower = load_scenario(scenarios / "tower.json")
scene = tower.scene()
seen = perceive(scene, tower.noise, seed=0)
print("detected:", seen.labels)
print("facts:", sorted(map(str, seen.facts)))

# %% [markdown]
# ## A knocked-over tower
# After the first action a tower gets scattered. The stack step's effect is
# not observed, the executive re-perceives, and a second plan finishes.

# %%
events = []
report = run_episode(load_scenario(scenarios / "tower_knock.json").episode_config(), events)
for e in events:
    if e["event"] in ("plan", "act", "perturb", "bt", "end"):
        print(e)
print(report.to_json())

# %% [markdown]
# ## An object that leaves the table
# The goal names it, so no plan can be built: ObjectLost.

# %%
print(run_episode(load_scenario(scenarios / "tower_outofview.json").episode_config()).failure_reason)

# %% [markdown]
# ## Batch statistics
# 30% grasp slips per action and a 2% chance per episode that the goal base
# vanishes. Expected success: 0.98 * (1 - 0.3**10).

# %%
noisy = load_scenario(scenarios / "batch.json")
reports, summary = run_batch(noisy.episode_config(), 50)
print(summary)
