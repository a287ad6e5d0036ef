"""Shared builders for synthetic schedules used across the test suite."""

import numpy as np

from homefield.schedule import ScheduleMatrix


def schedule_from_pairs(pairs, d=None, n_teams=None):
    """Build a ScheduleMatrix from (home_index, away_index) pairs."""
    if n_teams is None:
        n_teams = max(max(p) for p in pairs) + 1
    n = len(pairs)
    Z = np.zeros((n, n_teams))
    for i, (h, a) in enumerate(pairs):
        Z[i, h] = 1.0
        Z[i, a] = -1.0
    if d is None:
        d = np.zeros(n)
    width = len(str(n_teams - 1))
    teams = tuple(f"T{j:0{width}d}" for j in range(n_teams))
    return ScheduleMatrix(d=np.asarray(d, dtype=float), Z=Z, teams=teams,
                          net_home=Z.sum(axis=0).astype(np.int64))


def random_pairs(rng, n_teams, n_games):
    """Uniformly random home/away matchups (generally unbalanced)."""
    out = []
    for _ in range(n_games):
        h, a = rng.choice(n_teams, size=2, replace=False)
        out.append((int(h), int(a)))
    return out


def balanced_pairs(rng, n_teams, rounds=1):
    """Random cyclic rounds: every team hosts and visits once per round."""
    out = []
    for _ in range(rounds):
        cyc = rng.permutation(n_teams)
        for i in range(n_teams):
            out.append((int(cyc[i]), int(cyc[(i + 1) % n_teams])))
    return out


def simulate_margins(rng, sm, lambda0=3.0, sigma2_g=4.0, sigma2=100.0):
    """Margins from the generating model: d = lambda0 + Z eta + noise."""
    eta = rng.normal(0.0, np.sqrt(sigma2_g), size=sm.n_teams)
    noise = rng.normal(0.0, np.sqrt(sigma2), size=sm.n_games)
    return sm.with_margins(lambda0 + sm.Z @ eta + noise), eta
