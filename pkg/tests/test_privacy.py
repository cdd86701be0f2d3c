import dataclasses

import numpy as np
import pytest

from oracles import mixed_deviation
from ppsd.engine import NetworkState, run
from ppsd.errors import AuditPreconditionError, InsufficientInformation, InvalidArgument, ResampleRequired
from ppsd.objective import make_rendezvous
from ppsd.privacy import (
    ShadowSpec,
    construct_shadow,
    deviation,
    eavesdropper_view,
    inference_attack,
    privacy_sweep,
    record_view,
    verify_eavesdropper,
    verify_indistinguishable,
)
from ppsd.schedule import assemble_augmented
from ppsd.topology import ring

A45 = (4, 5)


def test_empty_adversary_gives_empty_log(audit_run):
    log = record_view(audit_run, [], kappa=10)
    assert len(log.sets) == 11
    assert log.flatten().size == 0


def test_log_contains_push_products_and_no_y_beta(audit_run):
    log = record_view(audit_run, A45, kappa=50)
    g = audit_run.graph
    assert 4 in g.out_neighbors(1)
    for k in range(51):
        s, w = audit_run.states[k], audit_run.weights[k]
        c41 = w.expanded().C[w.pattern.index(4, 1)]
        np.testing.assert_array_equal(log.get(k, (1, "C_y", 4)), c41 * s.y_alpha[0])
        keys = log.sets[k].keys()
        assert not any(f == "y_beta" for _, f, _ in keys)
        assert not any(a == 1 and f == "y_alpha" for a, f, _ in keys)
    # weights of other agents appear only from k = 1
    assert (1, "Lambda", 0) not in log.sets[0].entries
    assert (1, "Lambda", 0) in log.sets[1].entries
    with pytest.raises(InsufficientInformation):
        log.get(3, (1, "y_beta", 0))


def test_record_view_arguments(audit_run):
    with pytest.raises(InvalidArgument):
        record_view(audit_run, [9])
    with pytest.raises(InvalidArgument):
        record_view(audit_run, A45, kappa=audit_run.iterations)


def test_deviation_metric_matches_oracle():
    rng = np.random.default_rng(0)
    a = rng.standard_normal(50) * 10.0 ** rng.integers(-3, 6, 50)
    b = a * (1 + 1e-10 * rng.standard_normal(50))
    assert float(deviation(a, b).max()) == mixed_deviation(a, b)
    assert deviation([0.0], [1e-12])[0] == pytest.approx(1e-12)


def test_shadow_step_size_example():
    g = ring(3)
    inst = make_rendezvous(3, d=1, seed=2)
    rec = run(g, inst, gamma=0.1, k_max=5, eps=0, seed=0)
    s0 = rec.states[0]
    ya = s0.y_alpha.copy()
    ya[0] = 0.2
    yb = inst.gradients(s0.x) - ya
    w0 = rec.weights[0]
    Lam = w0.Lam.copy()
    Lam[0] = 0.5
    rec = dataclasses.replace(
        rec,
        states=[NetworkState(0, s0.x, ya, yb)] + rec.states[1:],
        weights=rec.weights.replaced(0, w0.with_fields(Lam=Lam)),
    )
    assert 2 in g.out_neighbors(1)
    setup = construct_shadow(rec, ShadowSpec.make(1, 2, [0.3], case="I", delta_alpha=[0.1]))
    assert setup.weights[0].Lam[0, 0] == pytest.approx(0.5 * 0.2 / 0.3)
    assert setup.state0.y_alpha[0, 0] == pytest.approx(0.3)


def test_zero_delta_is_identity(audit_run):
    setup = construct_shadow(audit_run, ShadowSpec.make(1, 2, [0.0, 0.0]))
    for f in ("R", "A", "C", "Lam", "PhiA", "PhiB"):
        a = getattr(audit_run.weights[0].expanded(), f)
        assert getattr(setup.weights[0], f).tobytes() == a.tobytes()
    v = verify_indistinguishable(audit_run, ShadowSpec.make(1, 2, [0.0, 0.0]), A45, kappa=100)
    assert v.passed and v.max_deviation == 0.0 and v.absorption == 0.0


@pytest.mark.parametrize("case,m", [("I", 4), ("II", 2), ("I", 2)])
def test_shadow_keeps_augmented_columns_stochastic(audit_run, case, m):
    rng = np.random.default_rng(1)
    for _ in range(5):
        delta = rng.uniform(0, 5000, 2)
        setup = construct_shadow(audit_run, ShadowSpec.make(1, m, delta, case=case))
        M = assemble_augmented(setup.weights[0])
        np.testing.assert_allclose(M.sum(axis=1), 1.0, atol=1e-12)


def test_shadow_case_preconditions(audit_run):
    g = audit_run.graph
    assert 3 not in g.out_neighbors(1) and 3 in g.in_neighbors(1)
    with pytest.raises(AuditPreconditionError):
        construct_shadow(audit_run, ShadowSpec.make(1, 3, [1.0, 1.0], case="I"))
    with pytest.raises(AuditPreconditionError):
        construct_shadow(audit_run, ShadowSpec.make(1, 4, [1.0, 1.0], case="II"))
    with pytest.raises(InvalidArgument):
        construct_shadow(audit_run, ShadowSpec.make(1, 2, [1.0]))


def test_pinned_split_below_floor_needs_resample(audit_run):
    ya = audit_run.states[0].y_alpha[0]
    with pytest.raises(ResampleRequired):
        construct_shadow(audit_run, ShadowSpec.make(1, 2, [1.0, 1.0], delta_alpha=-ya))


@pytest.mark.parametrize("case,m", [("I", 2), ("II", 2), ("I", 4), ("II", 3)])
def test_scenario_audit_passes(audit_run, case, m):
    A = (4, 5) if m != 4 else (3, 5)
    delta = np.random.default_rng(7).uniform(0, 5000, 2)
    v = verify_indistinguishable(audit_run, ShadowSpec.make(1, m, delta, case=case), A, kappa=120)
    assert v.passed, v.max_deviation
    assert v.max_deviation <= 1e-9
    assert v.gradient_shift_error <= 1e-12
    if case == "I":
        assert v.absorption <= 1e-10


def test_negative_control_fails(audit_run):
    spec = ShadowSpec.make(1, 2, [300.0, -20.0], case="I")
    v = verify_indistinguishable(audit_run, spec, A45, kappa=120, negative_control=True)
    assert not v.passed
    assert v.max_deviation > 1e-3


def test_sweep_ladder_and_preconditions(audit_run):
    ladder = [[10.0**e, -(10.0**e)] for e in (0, 2, 4, 6)]
    res = privacy_sweep(audit_run, 1, 2, ladder, A45, kappa=120)
    assert (res.passed, res.total) == (4, 4) and res.all_passed
    single = privacy_sweep(audit_run, 1, 2, [[0.0, 0.0]], A45, kappa=20)
    assert (single.passed, single.total) == (1, 1)
    with pytest.raises(AuditPreconditionError):
        privacy_sweep(audit_run, 1, 2, ladder, (2, 3, 4, 5))
    with pytest.raises(AuditPreconditionError):
        privacy_sweep(audit_run, 1, 4, ladder, A45)


def test_attack_recovers_gradient(testbed, rendezvous5):
    rec = run(testbed, rendezvous5, seed=4, eps=1e-10)
    assert rec.stop_reason == "converged"
    log = record_view(rec, (2, 3, 4, 5), kappa=rec.iterations - 1)
    res = inference_attack(log, rec, 1)
    truth = rendezvous5.x_star - rendezvous5.objectives[0].params["p"]
    np.testing.assert_allclose(res.true_gradient, truth)
    assert res.error < 1e-4
    assert res.anchor_error <= 1e-14 * (1 + np.abs(rec.states[0].y_alpha).max())


def test_attack_needs_all_neighbours(audit_run):
    with pytest.raises(InsufficientInformation):
        inference_attack(record_view(audit_run, A45, kappa=10), audit_run, 1)
    eve = eavesdropper_view(audit_run, (1, 2), kappa=10)
    with pytest.raises(InsufficientInformation):
        inference_attack(eve, audit_run, 1)


def test_eavesdropper_log_excludes_hidden_link(audit_run):
    eve = eavesdropper_view(audit_run, (1, 2), kappa=20)
    assert eve.hidden == (1, 2)
    for s in eve.sets:
        assert (1, "C_y", 2) not in s.entries
        assert (1, "C_y", 4) in s.entries
    with pytest.raises(AuditPreconditionError):
        eavesdropper_view(audit_run, None)
    with pytest.raises(AuditPreconditionError):
        eavesdropper_view(audit_run, (2, 5))


def test_eavesdropper_ladder(audit_run):
    for e in (0, 2, 4, 6):
        v = verify_eavesdropper(audit_run, (1, 2), [10.0**e, 3.0 * 10.0**e], kappa=120)
        assert v.passed, (e, v.max_deviation)
        assert v.delta_alpha == [0.0, 0.0]
    bad = verify_eavesdropper(audit_run, (1, 2), [50.0, 5.0], kappa=120, negative_control=True)
    assert not bad.passed


def test_verdict_serializes(audit_run):
    v = verify_indistinguishable(audit_run, ShadowSpec.make(1, 2, [1.0, 2.0]), A45, kappa=30)
    d = v.to_dict()
    assert d["verdict"] == "pass" and d["case"] == "I"
    assert "logs" not in d
