"""Synthetic series where driver nodes broadcast shocks to the whole network.

The first node(s) are drivers, the rest followers. Every node relaxes
toward zero under its own pole and takes a fresh shock each step; on top
of that, every node absorbs the average of the other drivers' shocks two
steps delayed. The driver-to-everyone links (each driver paired with
every other node) are the ground truth for link-recovery checks.

The two roles are built to pull apart a model with and one without
neighbor aggregation. A driver is a jittery, near-white source: its own
history says almost nothing about its next value, and its newest value
is almost exactly the shock it just took, so the upcoming broadcast can
be read nearly verbatim off the drivers' latest visible values. The
followers are slow integrators whose own history helps but who still
take most of their step-to-step variance from the broadcast. A model
that cannot see its neighbors therefore misses the dominant,
perfectly-knowable part of every follower's next step, while a model
that aggregates driver values gets it almost for free. Follower values
are no substitute: they mix the same broadcast one step staler with
noise that never propagates, so follower-sourced links are genuinely
absent. Each follower also gets its own pole, which keeps the series
linearly distinguishable and keeps the driver's near-white signature
unique after per-node normalization (normalization erases scale, never
autocorrelation).
"""

from __future__ import annotations

from collections.abc import Sequence

import numpy as np

from .attention import EdgeSet
from .data import Dataset

FOLLOWER_POLES = (0.9, 0.8, 0.7, 0.6, 0.5)


def shock_relay(n_nodes: int = 6, n_rows: int = 300, seed: int = 0,
                driver_pole: float = 0.1,
                follower_pole: float | Sequence[float] = FOLLOWER_POLES,
                shock_gain: float = 2.0, follower_noise: float = 1.0,
                noise: float = 0.05, burn_in: int = 100,
                n_drivers: int = 1) -> Dataset:
    """Generate ``n_drivers`` driver series followed by follower series:

        driver   x[i, t] = driver_pole * x[i, t-1] + shock[i, t]
                           + shock_gain * mean(other drivers' shock[t-2])
        follower x[i, t] = pole_i * x[i, t-1] + follower_noise * shock[i, t]
                           + shock_gain * mean(all drivers' shock[t-2])

    with i.i.d. normal shocks scaled by ``noise``. ``follower_pole`` is a
    single pole or a sequence cycled across the followers. The returned
    dataset carries one true edge from each driver to every other node.
    A burn-in prefix is discarded so the series starts near
    stationarity. All poles must lie inside the unit interval in
    magnitude; the broadcast is purely shock-driven and never affects
    stability.
    """
    if n_nodes < 2:
        raise ValueError(f"need at least 2 nodes, got {n_nodes}")
    if not 1 <= n_drivers < n_nodes:
        raise ValueError(f"n_drivers must be in [1, {n_nodes - 1}], "
                         f"got {n_drivers}")
    fp = ((follower_pole,) if isinstance(follower_pole, (int, float))
          else tuple(follower_pole))
    n_followers = n_nodes - n_drivers
    poles = np.empty(n_nodes)
    poles[:n_drivers] = driver_pole
    poles[n_drivers:] = [fp[k % len(fp)] for k in range(n_followers)]
    for i, pole in enumerate(poles):
        if not abs(pole) < 1.0:
            raise ValueError(f"unstable dynamics: node {i} pole {pole} "
                             f"must stay below 1 in magnitude")
    if follower_noise < 0:
        raise ValueError(f"follower_noise must be >= 0, "
                         f"got {follower_noise}")
    rng = np.random.default_rng(seed)
    total = burn_in + n_rows
    shocks = noise * rng.normal(size=(total, n_nodes))
    drivers = np.arange(n_drivers)
    scaled = shocks.copy()
    scaled[:, n_drivers:] *= follower_noise
    # What node i absorbs from the broadcast: the mean over drivers other
    # than itself (a driver never re-absorbs its own shock).
    driver_sum = shocks[:, drivers].sum(axis=1)
    absorbed = np.empty((total, n_nodes))
    absorbed[:, n_drivers:] = (driver_sum / n_drivers)[:, None]
    if n_drivers == 1:
        absorbed[:, :1] = 0.0
    else:
        absorbed[:, :n_drivers] = ((driver_sum[:, None]
                                    - shocks[:, drivers])
                                   / (n_drivers - 1))
    rows = np.zeros((total, n_nodes))
    rows[0] = scaled[0]
    if total > 1:
        rows[1] = poles * rows[0] + scaled[1]
    for t in range(2, total):
        rows[t] = (poles * rows[t - 1] + scaled[t]
                   + shock_gain * absorbed[t - 2])
    edges = EdgeSet(n_nodes, [(int(d), i) for d in drivers
                              for i in range(n_nodes) if i != d])
    return Dataset(timestamps=[str(t) for t in range(n_rows)],
                   node_ids=[f"n{i}" for i in range(n_nodes)],
                   values=rows[burn_in:],
                   edges=edges)
