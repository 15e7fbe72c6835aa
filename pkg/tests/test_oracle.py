"""Exhaustive enumeration oracle: counts, contents, containment checks."""

import math

import numpy as np
import pytest

from traincert.errors import ConfigError
from traincert.nn import Architecture, LossKind, TrainConfig, params_flatten
from traincert.oracle import (
    EnumerationPlan,
    FeatureGrid,
    LabelFlips,
    Removals,
    check_containment,
    check_trajectory_containment,
    empirical_reachable_params,
    empirical_reachable_trajectories,
    enumerate_perturbed_datasets,
)
from traincert.training import (
    BoundedPerturbation,
    interval_train,
    make_schedule,
)


def tiny_data(n=4):
    rng = np.random.Generator(np.random.PCG64(0))
    x = rng.normal(size=(n, 2))
    y = np.array([0, 1] * (n // 2))
    return x, y


def test_plan_counts():
    x, y = tiny_data(4)
    assert EnumerationPlan(LabelFlips(1), x, y).count() == 5
    assert EnumerationPlan(LabelFlips(2), x, y).count() == 1 + math.comb(4, 2)
    assert EnumerationPlan(Removals(1), x, y).count() == 5
    # grid with 2 points per axis in 2-d: 4 corners plus the centre
    plan = EnumerationPlan(FeatureGrid(1, epsilon=0.1), x, y)
    assert plan.count() == 1 + 4 * 5
    # odd per-axis grids already include the centre
    plan3 = EnumerationPlan(FeatureGrid(1, epsilon=0.1, points_per_axis=3), x, y)
    assert plan3.count() == 1 + 4 * 9


def test_plan_validation():
    x, y = tiny_data(4)
    with pytest.raises(ConfigError):
        EnumerationPlan(LabelFlips(2), x, y, cap=3)  # 7 > 3
    with pytest.raises(ConfigError):
        EnumerationPlan(LabelFlips(5), x, y)  # n > N
    with pytest.raises(ConfigError):
        EnumerationPlan(LabelFlips(1), x, np.array([0, 2, 0, 2]))  # not binary


def test_flip_enumeration_contents():
    x, y = tiny_data(4)
    variants = list(enumerate_perturbed_datasets(EnumerationPlan(LabelFlips(1), x, y)))
    assert len(variants) == 5
    assert np.array_equal(variants[0].labels, y)  # nominal first
    flipped_rows = [
        int(np.nonzero(v.labels != y)[0][0]) for v in variants[1:]
    ]
    assert flipped_rows == [0, 1, 2, 3]
    for v in variants:
        assert np.array_equal(v.features, x)  # flips never touch features


def test_removal_enumeration_contents():
    x, y = tiny_data(4)
    variants = list(enumerate_perturbed_datasets(EnumerationPlan(Removals(1), x, y)))
    assert variants[0].removed == ()
    assert [v.removed for v in variants[1:]] == [(0,), (1,), (2,), (3,)]


def test_grid_enumeration_moves_one_sample():
    x, y = tiny_data(2)
    plan = EnumerationPlan(FeatureGrid(1, epsilon=0.5), x, y)
    variants = list(enumerate_perturbed_datasets(plan))
    assert len(variants) == 1 + 2 * 5
    for v in variants[1:]:
        moved = np.sum(np.any(v.features != x, axis=1))
        assert moved <= 1
        # movement stays within the epsilon box
        assert np.all(np.abs(v.features - x) <= 0.5 + 1e-12)


def test_trajectory_containment_against_interval_train():
    x, y = tiny_data(8)
    arch = Architecture((2, 1))
    cfg = TrainConfig(
        alpha=0.3, batch_size=4, epochs=2, loss=LossKind.HINGE, init_scale=0.1, seed=1
    )
    sched = make_schedule(8, 4, 2, cfg.seed)
    pm = BoundedPerturbation(n=1, nu=1.0, q=0)
    abstract = interval_train(x, y, arch, cfg, pm, schedule=sched)
    plan = EnumerationPlan(LabelFlips(1), x, y)
    trajectories = empirical_reachable_trajectories(plan, arch, cfg, sched)
    report = check_trajectory_containment(trajectories, abstract, tol=1e-9)
    assert report.all_contained
    assert report.total == 9
    assert report.worst_excess <= 1e-9
    # the empirical envelope is inside the certified box
    assert abstract.final_bounds.encloses(report.envelope, tol=1e-12)


def test_final_params_containment_report_flags_outliers():
    x, y = tiny_data(8)
    arch = Architecture((2, 1))
    cfg = TrainConfig(
        alpha=0.3, batch_size=4, epochs=1, loss=LossKind.HINGE, init_scale=0.1, seed=1
    )
    sched = make_schedule(8, 4, 1, cfg.seed)
    plan = EnumerationPlan(LabelFlips(1), x, y)
    finals = empirical_reachable_params(plan, arch, cfg, sched)
    pm = BoundedPerturbation(n=1, nu=1.0, q=0)
    abstract = interval_train(x, y, arch, cfg, pm, schedule=sched)
    good = check_containment(finals, abstract.final_bounds, tol=1e-9)
    assert good.all_contained

    # shrink the box to a point: everything but the nominal must violate
    degenerate = abstract.bounds[0]
    bad = check_containment(finals, degenerate, tol=1e-12)
    assert not bad.all_contained
    assert bad.worst_excess > 0
    assert bad.contained < bad.total


def test_removal_trajectories_share_prefix_until_removal_matters():
    x, y = tiny_data(8)
    arch = Architecture((2, 1))
    cfg = TrainConfig(
        alpha=0.2, batch_size=8, epochs=1, loss=LossKind.SQUARED_ERROR,
        init_scale=0.1, seed=2,
    )
    sched = make_schedule(8, 8, 1, cfg.seed)
    plan = EnumerationPlan(Removals(1), x, y)
    trajectories = empirical_reachable_trajectories(plan, arch, cfg, sched)
    # all runs share the seeded initialisation
    first = params_flatten(trajectories[0][0])
    for traj in trajectories[1:]:
        assert np.array_equal(params_flatten(traj[0]), first)
    # single full batch: removing any sample changes the sole update
    final0 = params_flatten(trajectories[0][-1])
    for traj in trajectories[1:]:
        assert not np.array_equal(params_flatten(traj[-1]), final0)
