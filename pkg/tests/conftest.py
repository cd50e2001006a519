"""Shared builders and the brute-force objective oracle used across tests."""

from __future__ import annotations

import numpy as np

from carqte import ArmQuantileProblem, Dataset, WeightVector, index_strata, solve_arm_quantile
from carqte.data import weighted_arm_counts


def make_stratified_dataset(rng, n=40, k=2, d=1, y=None):
    """Random dataset guaranteeing every (arm, stratum) cell is populated."""
    if n < 3 * k:
        raise ValueError("need n >= 3k to populate every cell")
    s = np.concatenate([np.repeat(np.arange(k), 2), rng.integers(0, k, n - 2 * k)])
    a = np.concatenate([np.tile([0, 1], k), rng.integers(0, 2, n - 2 * k)])
    perm = rng.permutation(n)
    s, a = s[perm], a[perm]
    if y is None:
        y = rng.normal(0.0, 2.0, n)
    x = rng.normal(0.0, 1.0, (n, d)) if d else np.empty((n, 0))
    return Dataset.from_arrays(y, a, s, x)


def brute_force_arm(arm, ds, xi, pis, mhat, tau):
    """Smallest minimizer of the objective over observed arm outcomes.

    Evaluates the full objective at every candidate via broadcasting; ties
    resolve to the smallest candidate because ``np.unique`` sorts.
    """
    cands = np.unique(ds.y[ds.a == arm])
    pi_full = pis[ds.s]
    af = ds.a.astype(float)
    u = ds.y[None, :] - cands[:, None]
    rho = u * (tau - (u <= 0.0))
    if arm == 1:
        main = rho @ (xi * af / pi_full)
        slope = float(np.sum(xi * (af - pi_full) / pi_full * mhat))
    else:
        main = rho @ (xi * (1.0 - af) / (1.0 - pi_full))
        slope = -float(np.sum(xi * (af - pi_full) / (1.0 - pi_full) * mhat))
    vals = main + slope * cands
    return float(cands[int(np.flatnonzero(vals <= vals.min())[0])])


def estimated_pis(ds, xi):
    n1w, nw = weighted_arm_counts(ds.s, ds.a.astype(float), xi, ds.n_strata)
    return n1w / nw


def solve_both_ways(ds, xi, mhat, tau, arm, kind="bootstrap"):
    """(solver output, brute-force output) for one arm problem."""
    stats = index_strata(ds, target_pi=0.5)
    wv = WeightVector(xi, kind=kind)
    prob = ArmQuantileProblem(arm=arm, tau=tau, weights=wv, mhat_values=mhat)
    got = solve_arm_quantile(prob, ds, stats)
    want = brute_force_arm(arm, ds, xi, estimated_pis(ds, xi), mhat, tau)
    return got, want


class TableModel:
    """Duck-typed adjustment model backed by explicit per-unit values.

    ``values[(arm, tau)]`` is an n-vector; used to exercise the estimator
    with arbitrary adjustments and per-(arm, stratum) shifts.
    """

    def __init__(self, values):
        self.values = {(a, float(t)): np.asarray(v, float) for (a, t), v in values.items()}

    def evaluate_all(self, arm, tau, dataset):
        return self.values[(arm, float(tau))]

    def shifted(self, dataset, shifts):
        """New model with per-(arm, stratum) constants added."""
        out = {}
        for (a, t), v in self.values.items():
            c = np.array([shifts[(a, int(s))] for s in dataset.s])
            out[(a, t)] = v + c
        return TableModel(out)
