# %% [markdown]
# # From PDDL to a behavior tree

# %%
from magpie_sim.btree import Executor, FactWorld, compile_plan, to_dot
from magpie_sim.executive import blocksworld_domain
from magpie_sim.pddl import parse_problem, print_problem
from magpie_sim.planner import ground, h_relax, search, validate

domain = blocksworld_domain()
problem = parse_problem("""
(define (problem swap)
  (:domain blocksworld)
  (:objects a b c - block)
  (:init (on a b) (on b c) (ontable c) (clear a) (handempty))
  (:goal (and (on c b) (on b a))))
""", domain)
print(print_problem(problem))

# %% [markdown]
# Grounding keeps only operators whose parameters are distinct objects.

# %%
task = ground(domain, problem)
print(len(task.operators), "ground operators,", len(task.facts), "facts")
print("h_add at the start:", h_relax(task.init_mask, task))

for strategy, heuristic in [("astar", "blind"), ("astar", "hadd"), ("gbfs", "hadd")]:
    plan = search(task, strategy, heuristic)
    print(f"{strategy:5s}+{heuristic:5s} cost {plan.cost}: {' '.join(map(str, plan.steps))}")

# %% [markdown]
# Each step becomes skip-if-done, else check preconditions, act, check effects.

# %%
plan = search(task, "astar", "blind")
assert validate(task, plan)
tree = compile_plan(plan, task)
print(len(list(tree.nodes())), "nodes")

# a world where the third action fails
world = FactWorld.from_init(task, fail_steps={2})
print("run:", Executor(tree, world).run())

print(to_dot(tree)[:400], "...")
