import math

import numpy as np
import pytest
from scipy.stats import chisquare

from prlcsim.policies import (PolicyKind, PullPolicy, SchedulingError, WorkerState, asgd_apply,
                              decide_pull, local_step_pr, local_step_prlc, round_robin_staleness)
from prlcsim.vecmath import DimensionError, RngStream


def worker(model=(1.0, 2.0), seed=0):
    return WorkerState(np.array(model), RngStream(seed, 10), RngStream(seed, 11))


def geometric_chisquare(ks, r, max_k=10):
    """p-value of observed staleness values against r(1-r)^k, tail pooled."""
    hist = np.bincount(np.minimum(ks, max_k + 1), minlength=max_k + 2)
    probs = np.array([r * (1 - r) ** k for k in range(max_k + 1)] + [(1 - r) ** (max_k + 1)])
    return chisquare(hist, probs * hist.sum()).pvalue


def test_policy_validation():
    with pytest.raises(ValueError):
        PullPolicy("PRLC", 0.0)
    with pytest.raises(ValueError):
        PullPolicy("PR", 1.5)
    with pytest.raises(ValueError):
        PullPolicy("ASGD", asgd_max_staleness=0)
    with pytest.raises(ValueError):
        PullPolicy("BOGUS")
    assert PullPolicy("prlc".upper(), 0.4).compensates
    assert not PullPolicy("PR", 0.4).compensates


def test_nsgd_and_r1_always_pull():
    w = worker()
    assert all(decide_pull(PullPolicy("NSGD"), w) for _ in range(1000))
    assert all(decide_pull(PullPolicy("PRLC", 1.0), w) for _ in range(1000))
    assert all(decide_pull(PullPolicy("PR", 1.0), w) for _ in range(1000))


def test_decide_pull_rejects_asgd():
    with pytest.raises(TypeError):
        decide_pull(PullPolicy("ASGD"), worker())


def test_decide_pull_touches_only_the_pull_stream():
    w = worker()
    before = w.batch_stream.generator.bit_generator.state
    decide_pull(PullPolicy("PRLC", 0.5), w)
    assert w.batch_stream.generator.bit_generator.state == before
    assert w.staleness == 0 and w.pulls == 0


def test_staleness_geometric_law():
    r, n = 0.3, 10**5
    pol = PullPolicy("PRLC", r)
    w = worker(seed=17)
    g = np.zeros(2)
    ks = []
    for _ in range(n):
        pulled = decide_pull(pol, w)
        if pulled:
            ks.append(w.staleness)
        w = local_step_prlc(w, pulled, g, g, 0.0)
    assert geometric_chisquare(np.array(ks), r) > 0.01


def test_expected_pulls_binomial():
    r, T = 0.4, 5000
    pol = PullPolicy("PR", r)
    for seed in range(5):
        w = worker(seed=seed)
        for _ in range(T):
            w = local_step_pr(w, decide_pull(pol, w), w.local_model)
        assert abs(w.pulls - r * T) <= 4 * math.sqrt(T * r * (1 - r))


def test_prlc_pull_branch():
    w = worker()
    new = np.array([7.0, 8.0])
    out = local_step_prlc(w, True, new, np.array([1.0, 1.0]), 0.1)
    assert np.array_equal(out.local_model, new) and out.staleness == 0 and out.pulls == 1
    new[0] = 99.0  # the worker holds its own copy
    assert out.local_model[0] == 7.0


def test_prlc_compensation_branch():
    w = worker()
    same = local_step_prlc(w, False, np.zeros(2), np.array([3.0, 3.0]), 0.0)
    assert np.array_equal(same.local_model, w.local_model) and same.staleness == 1
    stepped = local_step_prlc(w, False, np.zeros(2), np.array([1.0, -1.0]), 0.5)
    assert np.array_equal(stepped.local_model, np.array([0.5, 2.5]))
    assert stepped.pulls == 0


def test_pr_branches():
    w = worker()
    new = np.array([7.0, 8.0])
    a = local_step_pr(w, True, new)
    b = local_step_prlc(w, True, new, np.zeros(2), 0.3)
    assert np.array_equal(a.local_model, b.local_model) and (a.staleness, a.pulls) == (b.staleness, b.pulls)
    kept = local_step_pr(w, False, new)
    assert kept.local_model is w.local_model and kept.staleness == 1


def test_dimension_mismatch():
    with pytest.raises(DimensionError):
        local_step_prlc(worker(), True, np.zeros(3), np.zeros(2), 0.1)
    with pytest.raises(DimensionError):
        local_step_pr(worker(), False, np.zeros(3))


def test_asgd_apply():
    m = np.array([1.0, 2.0])
    g = np.array([0.5, -0.5])
    assert np.array_equal(asgd_apply(m, g, 0.0), m)
    assert np.array_equal(asgd_apply(m, g, 0.1), m - 0.1 * g)
    with pytest.raises(SchedulingError):
        asgd_apply(m, g, 0.1, staleness=4, max_staleness=3)


def test_round_robin_staleness_after_warmup():
    P = 4
    trace = round_robin_staleness(P, 100)
    assert trace[:P] == list(range(P))
    assert all(k == P - 1 for k in trace[P - 1:])


def test_policy_kind_serialises():
    assert PullPolicy("PRLC", 0.4).to_dict() == {"kind": "PRLC", "ratio": 0.4}
    assert PullPolicy("ASGD").to_dict() == {"kind": "ASGD", "asgd_mode": "round_robin"}
    assert PolicyKind("NSGD") is PolicyKind.NSGD
