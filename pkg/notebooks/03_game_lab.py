"""Walkthrough: checking the multiplicative-weights guarantee on exact games.

Rows of a matrix game play the role of parameter settings and columns the
robust losses.  With a finite row set the cost-sensitive oracle and the pure
minimax value are exact, so the guarantee can be checked to the last digit.
"""

import numpy as np

from multirep import game_lab as gl

game = gl.MatrixGame(np.array([[0.9, 0.1, 0.5],
                               [0.2, 0.8, 0.4],
                               [0.5, 0.5, 0.7]]))
value, row = gl.pure_minimax(game)
rep = gl.verify_theorem1(game, eps=0.1)
print(f"pure minimax {value:.3f} (row {row}); MWU mixture worst column {rep.achieved:.3f}")
print(f"schedule: eta={rep.eta}, T={rep.T}; bound holds: {rep.passed}")

# The mixture can beat every pure row: that is the point of randomizing.
chain = gl.verify_regret_chain(rep.trace, game, rep.eta)
print(f"regret margin {chain.regret_margin:.4f}, oracle margin {chain.oracle_margin:.2e}")

# An oracle that wastes up to delta of its slack still meets the relaxed bound.
slack = gl.OracleSlack(0.05, adversarial=True)
print("with delta=0.05:", gl.verify_theorem1(game, 0.1, slack).as_dict())

# A small suite, as run by ``multirep verify-game``.
rows = gl.run_game_suite(n_games=10, eps=0.2, deltas=(0.0,), seed=1)
print(f"{sum(r['pass'] for r in rows)}/{len(rows)} random games pass")

# Ensembles of linear softmax models are never worse than the average member.
for r in gl.run_convex_suite(n_traces=3, seed=0):
    print("ensemble", np.round(r.ensemble_losses, 3), "<= mean member", np.round(r.expected_losses, 3))
