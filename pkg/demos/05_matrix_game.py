"""The cooperative Q-learner solving a 2-agent coordination game.

Only the joint action (1, 1) pays anything, so both agents must commit to
action 1 simultaneously — a classic trap for independent learners, and the
reason the team is trained through a joint mixing value.
"""

import numpy as np

from fedbatt.oracles import (matrix_game_optimum, matrix_game_payoffs,
                             run_matrix_game)
from fedbatt.qmix import mix

payoffs = matrix_game_payoffs()
print("payoff table (rows = agent A, cols = agent B):")
print(payoffs)
print("optimal joint action:", matrix_game_optimum(payoffs))

for mode in ("qmix", "vdn"):
    rate, learner = run_matrix_game(mode, budget=4000, seed=0,
                                    eval_episodes=200)
    print(f"\n{mode}: optimal joint action in {rate:.0%} of 200 greedy "
          f"episodes after {learner.train_steps} train steps")
    obs = np.eye(2)
    learner.begin_episode()
    _, q_values = learner.select_actions(obs, np.ones((2, 2), bool),
                                         explore=False)
    for agent in range(2):
        print(f"  agent {agent} Q-values: "
              + "  ".join(f"a{a}={q_values[agent, a]:+.2f}" for a in range(2)))

# the mixer's monotonicity: raising any agent's Q never lowers the team value
from fedbatt.autodiff import Tensor

rate, learner = run_matrix_game("qmix", budget=2000, seed=1, eval_episodes=1)
state = Tensor(np.eye(2).reshape(1, -1))
base_q = np.array([[1.0, 2.0]])
base = float(mix(learner.mixer, Tensor(base_q), state).data)
bumped = float(mix(learner.mixer, Tensor(base_q + [[0.5, 0.0]]), state).data)
print(f"\nmixer monotonicity: Q_tot {base:+.3f} -> {bumped:+.3f} "
      f"after raising agent 0 by +0.5 (never decreases)")
