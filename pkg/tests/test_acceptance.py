"""Acceptance criteria, each run at its stated tolerance and time limit.

Run under pytest (one test per criterion) or directly with
``python tests/test_acceptance.py`` for a plain PASS/FAIL listing.
"""

from __future__ import annotations

import math
import sys
import time
from pathlib import Path

import numpy as np
import pytest
from scipy.stats import chisquare

sys.path.insert(0, str(Path(__file__).parent))
from test_objectives import fd_max_rel_error, random_points  # noqa: E402

from prlcsim import theory as th  # noqa: E402
from prlcsim.harness import presets  # noqa: E402
from prlcsim.objectives import make_logreg, make_mlp1, make_quadratic  # noqa: E402
from prlcsim.policies import PullPolicy  # noqa: E402
from prlcsim.simulator import (EtaSchedule, ExperimentConfig, pulling_stats, run,  # noqa: E402
                               staleness_histogram)
from prlcsim.vecmath import RngStream  # noqa: E402

SANITY_QUAD = {"kind": "quadratic", "d": 2, "N": 10, "condition_number": 5.0}


def _const(policy, P, T, B=1, eta=0.1, seed=42, objective=SANITY_QUAD, **kw):
    return ExperimentConfig(objective=objective, policy=policy, P=P, T=T, B=B,
                            eta_schedule=EtaSchedule("constant", eta0=eta), seed=seed, **kw)


def _trajectory(config):
    out = []
    run(config, on_iteration=lambda v: out.append(v.global_after.copy()))
    return np.array(out)


def c1_degeneracy():
    ref = _trajectory(_const(PullPolicy("NSGD"), 4, 1000))
    checks = {
        "PRLC(r=1)": np.array_equal(ref, _trajectory(_const(PullPolicy("PRLC", 1.0), 4, 1000))),
        "PR(r=1)": np.array_equal(ref, _trajectory(_const(PullPolicy("PR", 1.0), 4, 1000))),
        "PRLC(P=1,r=0.3)": np.array_equal(_trajectory(_const(PullPolicy("NSGD"), 1, 1000)),
                                          _trajectory(_const(PullPolicy("PRLC", 0.3), 1, 1000))),
    }
    return all(checks.values()), ", ".join(f"{k} {'==' if v else '!='} NSGD" for k, v in checks.items())


def c2_staleness_law():
    r, max_k = 0.3, 10
    s = run(_const(PullPolicy("PRLC", r), 4, 10**5, record_every=1000))
    probs = np.array([r * (1 - r) ** k for k in range(max_k + 1)] + [(1 - r) ** (max_k + 1)])
    pvals = []
    for w in range(4):
        hist = staleness_histogram(s, w, max_k)
        pvals.append(chisquare(hist, probs * hist.sum()).pvalue)
    return min(pvals) > 0.01, "per-worker p-values " + ", ".join(f"{p:.3f}" for p in pvals)


def c3_pull_accounting():
    cfg = ExperimentConfig(objective=dict(presets.LOGISTIC, seed=0), policy=PullPolicy("PRLC", 0.4),
                           P=20, T=10**4, B=10, seed=0, record_every=100)
    _, per_it = pulling_stats(run(cfg))
    return 0.39 <= per_it <= 0.41, f"pulls_per_iteration={per_it:.5f}"


def c4_gradients():
    objs = {
        "quadratic": make_quadratic(10, 200, 10.0, RngStream(1, 1))[0],
        "logistic": make_logreg(20, 2000, 2.0, RngStream(1, 1)),
        "mlp1": make_mlp1(5, 8, 500, RngStream(1, 1)),
    }
    errs = {k: fd_max_rel_error(o, random_points(o.dim, 10, 99, 0.5)) for k, o in objs.items()}
    return max(errs.values()) <= 1e-5, ", ".join(f"{k} {v:.2e}" for k, v in errs.items())


def c5_strong_convex_bound():
    s = presets.strong_convex_bound()
    return s["bound_violations"] == 0, (f"violations={s['bound_violations']}, "
                                        f"max(gap-bound)={s['max_gap_minus_bound']:.3g}, eta={s['eta']:.4g}")


def c6_nonconvex_bound():
    s = presets.nonconvex_bound()
    return s["ergodic_avg_sq_grad"] <= s["bound"], (f"ergodic={s['ergodic_avg_sq_grad']:.3e} <= "
                                                    f"bound={s['bound']:.3e} (L_hat={s['L']:.3g}, eta={s['eta']:.3g})")


def c7_compensation():
    s = presets.fig3_desk()
    detail = "; ".join(f"seed {r['seed']}: {r['prlc_final_loss']:.4f} vs {r['pr_final_loss']:.4f}"
                       for r in s["seeds"])
    return s["prlc_beats_pr"], "PRLC vs PR final loss " + detail


def c8_same_floor():
    s = presets.fig2_desk()
    d = s["final_loss_rel_diff"]
    return d <= 0.02, f"relative difference {d:.2e}"


def c9_theory_suite():
    checks = {}
    checks["eta_max_prlc(1,0.5)=1/6"] = abs(th.eta_max_prlc(1, 0.5) - 1 / 6) <= 1e-9
    checks["eta_max_pr(1,0.5)"] = abs(th.eta_max_pr(1, 0.5) - (-4 + math.sqrt(32)) / 8) <= 1e-9
    t_min = th.min_T_prlc(th.TheoryInputs(eta=0.1, L=1, r=0.5, sigma2=1, P=4, f_gap=1))[0]
    checks["min_T=144"] = abs(t_min - 144) <= 1e-6
    checks["r->1 limits"] = (abs(th.eta_max_prlc(1, 1 - 1e-8) - 0.5) <= 1e-6
                             and abs(th.eta_max_pr(1, 1 - 1e-8) - 0.25) <= 1e-6)
    rel = 0.0
    for r in np.linspace(0.05, 1.0, 20):
        for P in (1, 4, 64):
            inp = th.TheoryInputs(eta=0.5 * th.eta_max_prlc(1.0, r), L=1.0, r=r, G=1.3, sigma2=0.7, P=P,
                                  T=1000, f_gap=2.0)
            c0, c1, c2 = th.decomposition_constants(1.0, r, 1.3, 0.7)
            alt = 2 * 2.0 / (inp.eta * 1000) + inp.eta * (c0 / P + inp.eta * (c1 / P + c2))
            rel = max(rel, abs(th.bound_prlc_nonconvex(inp) - alt) / alt)
    checks["decomposition identity"] = rel <= 1e-12

    # Sign certificates on a 50 x 50 grid of step sizes up to (and including) each ceiling.
    L, P = 1.0, 4
    b_fail = h_fail = 0
    for r in np.linspace(0.02, 1.0, 50):
        ceiling = th.eta_max_prlc(L, r)
        for eta in np.linspace(ceiling / 50, ceiling, 50):
            b_fail += th.constant_B(th.TheoryInputs(eta=eta, L=L, r=r, P=P)) > 1e-15
    for r in np.linspace(0.51, 1.0, 50):
        ceiling = th.eta_max_pr(L, r)
        for eta in np.linspace(ceiling / 50, ceiling, 50):
            h_fail += th.constant_H(th.TheoryInputs(eta=eta, L=L, r=r, P=P)) > 1e-15
    checks[f"B<=0 ({b_fail}/2500 fail)"] = b_fail == 0
    checks[f"H<=0 ({h_fail}/2500 fail)"] = h_fail == 0
    return all(checks.values()), ", ".join(f"{k}:{'ok' if v else 'FAIL'}" for k, v in checks.items())


def c10_scalability():
    inp = th.TheoryInputs(eta=0.1, L=1.0, r=0.4, G=1.0, sigma2=1.0, P=1)
    rows = th.scalability_compare(inp, 1.0, 1.0, [2, 4, 8, 16, 32, 64, 128])
    dep = [r.prlc_p_dependent for r in rows]
    asgd = [r.asgd_term for r in rows]
    theory_ok = all(b < a for a, b in zip(dep, dep[1:])) and all(b > a for a, b in zip(asgd, asgd[1:]))
    s = presets.asgd_scalability()
    runs = "; ".join(f"P={r['P']} s{r['seed']}: {r['prlc_iterations']} vs {r['asgd_iterations']}"
                     for r in s["runs"])
    return theory_ok and s["prlc_faster_everywhere"], (f"theory directions {'ok' if theory_ok else 'FAIL'}; "
                                                       f"iterations to gap 1e-3 PRLC vs ASGD {runs}")


CRITERIA = [
    ("C1 degeneracy chain", c1_degeneracy, 1.0),
    ("C2 staleness law", c2_staleness_law, 10.0),
    ("C3 pull accounting", c3_pull_accounting, 30.0),
    ("C4 gradient correctness", c4_gradients, None),
    ("C5 strongly convex bound validity", c5_strong_convex_bound, 60.0),
    ("C6 non-convex bound validity", c6_nonconvex_bound, 120.0),
    ("C7 compensation advantage", c7_compensation, 120.0),
    ("C8 same-floor convergence", c8_same_floor, 120.0),
    ("C9 theory formula suite", c9_theory_suite, None),
    ("C10 scalability direction", c10_scalability, None),
]


def evaluate(name, fn, limit):
    start = time.perf_counter()
    ok, detail = fn()
    elapsed = time.perf_counter() - start
    in_time = limit is None or elapsed < limit
    budget = "" if limit is None else f" / limit {limit:g}s"
    line = f"[{'PASS' if ok and in_time else 'FAIL'}] {name}: {detail} ({elapsed:.2f}s{budget})"
    return ok and in_time, line


@pytest.mark.parametrize("name,fn,limit", CRITERIA, ids=[c[0].split()[0] for c in CRITERIA])
def test_criterion(name, fn, limit, capsys):
    ok, line = evaluate(name, fn, limit)
    with capsys.disabled():
        print("\n" + line)
    assert ok, line


if __name__ == "__main__":
    results = [evaluate(*c) for c in CRITERIA]
    for _, line in results:
        print(line)
    sys.exit(0 if all(ok for ok, _ in results) else 1)
