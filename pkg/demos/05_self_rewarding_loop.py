# coding: utf-8

# # Five self-rewarding rounds on two conflicting languages
#
# Two synthetic languages share half of their token region but walk through it
# in opposite directions, so their gradients on the shared bigram rows
# disagree. Each round the policy samples 4 responses per prompt, a noisy
# scripted judge scores them, the best and worst become a pair, and the
# filter decides which pairs to train on (round 1 trains on all of them).

from congrad.config import ExperimentConfig
from congrad.filtering import FilterConfig
from congrad.selfloop import build_scenario, run_experiment

cfg = ExperimentConfig(languages=("a", "b"), rounds=5, seed=0)
scenario = build_scenario(cfg)
for t in scenario.tasks:
    print(t.name, "region", t.region, "direction", t.direction)

arms = {"congrad-max": ("congrad", "max"), "random": ("random", "max"), "congrad-min": ("congrad", "min"),
        "reward-max": ("reward_margin", "max"), "reward-min": ("reward_margin", "min")}
curves = {}
for name, (kind, direction) in arms.items():
    rep = run_experiment(cfg.with_overrides(filter=FilterConfig(0.5, direction, kind)), scenario)
    curves[name] = [r["joint_heldout_loss"] for r in rep["rounds"]]

# Held-out joint LP-DPO loss (lower is better) per round:

for name, c in curves.items():
    print(f"{name:<12}", " ".join(f"{v:.4f}" for v in c))

# Round 1 is identical across arms since filtering is bypassed there.

print("final ranking:", sorted(curves, key=lambda n: curves[n][-1]))
