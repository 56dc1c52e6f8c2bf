"""Iteration loop for parameter-server SGD with intermittent pulls.

Each iteration every worker draws a mini-batch and evaluates a gradient at
its local model, the server averages the P gradients into the global model,
and every worker then either pulls the new global model or (PRLC) steps with
its own gradient / (PR) keeps its stale copy. ASGD instead applies one stale
gradient per iteration.

Records describe the global model *after* ``t`` iterations; the model before
the first iteration is kept in ``MetricsSeries.initial``.
"""

from __future__ import annotations

import collections
import hashlib
import json
import math
import time
from dataclasses import dataclass, field, fields
from typing import Callable, Optional

import numpy as np

from . import objectives as objmod
from .objectives import Objective
from .policies import (PolicyKind, PullPolicy, WorkerState, asgd_apply, decide_pull,
                       local_step_pr, local_step_prlc)
from .vecmath import (STREAM_ASGD_DELAY, STREAM_INIT, STREAM_OBJECTIVE, RngStream, axpy,
                      mean_of, sq_norm, worker_batch_stream, worker_pull_stream)


class ConfigError(ValueError):
    """Invalid or unparseable experiment configuration."""


class DivergenceError(ArithmeticError):
    def __init__(self, iteration: int, what: str):
        super().__init__(f"non-finite {what} at iteration {iteration}")
        self.iteration = iteration


def _strict_keys(d: dict, allowed: set, where: str, required: tuple = ()) -> None:
    if not isinstance(d, dict):
        raise ConfigError(f"{where} must be a JSON object")
    unknown = set(d) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {sorted(unknown)}")
    missing = [k for k in required if k not in d]
    if missing:
        raise ConfigError(f"missing key(s) in {where}: {missing}")


# ---------------------------------------------------------------------------
# Learning-rate schedules


@dataclass(frozen=True)
class EtaSchedule:
    """``constant``, ``step_decay`` or ``horizon`` step sizes.

    ``step_decay`` multiplies ``eta0`` by ``factor`` every ``every_n``
    iterations (``None`` means 30 epochs). ``horizon`` is the constant
    ``kappa * sqrt(P / T)``.
    """

    kind: str = "step_decay"
    eta0: float = 0.1
    factor: float = 0.1
    every_n: Optional[int] = None
    kappa: float = 1.0

    _KEYS = {
        "constant": ("eta0",),
        "step_decay": ("eta0", "factor", "every_n"),
        "horizon": ("kappa",),
    }

    def __post_init__(self):
        if self.kind not in self._KEYS:
            raise ConfigError(f"unknown eta schedule {self.kind!r}")
        if self.kind in ("constant", "step_decay") and not self.eta0 > 0:
            raise ConfigError("eta0 must be positive")
        if self.kind == "step_decay":
            if not self.factor > 0:
                raise ConfigError("decay factor must be positive")
            if self.every_n is not None and self.every_n < 1:
                raise ConfigError("every_n must be >= 1")
        if self.kind == "horizon" and not self.kappa > 0:
            raise ConfigError("kappa must be positive")

    @classmethod
    def from_dict(cls, d: dict) -> "EtaSchedule":
        kind = d.get("kind", "step_decay")
        if kind not in cls._KEYS:
            raise ConfigError(f"unknown eta schedule {kind!r}")
        _strict_keys(d, {"kind", *cls._KEYS[kind]}, "eta_schedule")
        return cls(kind=kind, **{k: v for k, v in d.items() if k != "kind"})

    def to_dict(self) -> dict:
        return {"kind": self.kind, **{k: getattr(self, k) for k in self._KEYS[self.kind]}}

    def resolve(self, P: int, T: int, epoch: int) -> Callable[[int], float]:
        if self.kind == "constant":
            eta0 = self.eta0
            return lambda t: eta0
        if self.kind == "horizon":
            eta = self.kappa * math.sqrt(P / T)
            return lambda t: eta
        every = self.every_n if self.every_n is not None else 30 * epoch
        eta0, factor = self.eta0, self.factor
        return lambda t: eta0 * factor ** ((t - 1) // every)


# ---------------------------------------------------------------------------
# Objective specs

_OBJECTIVE_KEYS = {
    "quadratic": ({"kind", "d", "N", "condition_number", "noise", "seed"}, ("d", "N")),
    "logistic": ({"kind", "d", "N", "separation", "lambda", "seed"}, ("d", "N")),
    "mlp1": ({"kind", "d", "h", "N", "noise", "lambda", "seed"}, ("d", "h", "N")),
    "csv": ({"kind", "path", "model", "header", "lambda", "hidden", "standardize"}, ("path", "model")),
}


def build_objective(spec: dict, default_seed: int) -> tuple[Objective, Optional[objmod.ProblemConstants], int]:
    """Construct the objective named by a config's ``objective`` block.

    Returns the objective, exact constants when they exist (quadratics), and
    the seed its data and initial point were drawn from.
    """
    kind = spec.get("kind") if isinstance(spec, dict) else None
    if kind not in _OBJECTIVE_KEYS:
        raise ConfigError(f"unknown objective kind {kind!r}; expected one of {sorted(_OBJECTIVE_KEYS)}")
    allowed, required = _OBJECTIVE_KEYS[kind]
    _strict_keys(spec, allowed, "objective", required)
    seed = int(spec.get("seed", default_seed))
    stream = RngStream(seed, STREAM_OBJECTIVE)
    exact = None
    if kind == "quadratic":
        obj, exact = objmod.make_quadratic(spec["d"], spec["N"], spec.get("condition_number", 10.0),
                                           stream, noise=spec.get("noise", 0.5))
    elif kind == "logistic":
        obj = objmod.make_logreg(spec["d"], spec["N"], spec.get("separation", 2.0), stream,
                                 lam=spec.get("lambda", objmod.DEFAULT_LOGREG_LAMBDA))
    elif kind == "mlp1":
        obj = objmod.make_mlp1(spec["d"], spec["h"], spec["N"], stream,
                               noise=spec.get("noise", 0.1), lam=spec.get("lambda", 0.0))
    else:
        model = spec["model"]
        data = objmod.load_dataset_csv(spec["path"], header=spec.get("header", False),
                                       classification=(model == "logistic"),
                                       standardize=spec.get("standardize", True))
        if model == "quadratic":
            obj = objmod.Quadratic(data)
            L, c, w_star, f_star = obj.exact_constants()
            exact = objmod.ProblemConstants(L=L, c=c, G=0.0, sigma2=0.0, f_star=f_star, omega_star=w_star)
        elif model == "logistic":
            obj = objmod.Logistic(data, lam=spec.get("lambda", objmod.DEFAULT_LOGREG_LAMBDA))
        elif model == "mlp1":
            obj = objmod.MLP1(data, hidden=spec.get("hidden", 8), lam=spec.get("lambda", 0.0))
        else:
            raise ConfigError(f"unknown csv model {model!r}")
    return obj, exact, seed


# ---------------------------------------------------------------------------
# Config


@dataclass(frozen=True)
class ExperimentConfig:
    objective: dict
    policy: PullPolicy
    P: int = 4
    T: int = 100
    B: int = 10
    eta_schedule: EtaSchedule = field(default_factory=EtaSchedule)
    seed: int = 0
    record_every: int = 1
    instrument_recursion: bool = False

    def __post_init__(self):
        if self.P < 1:
            raise ConfigError("P must be >= 1")
        if self.T < 1:
            raise ConfigError("T must be >= 1")
        if self.B < 1:
            raise ConfigError("B must be >= 1")
        if self.record_every < 1:
            raise ConfigError("record_every must be >= 1")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        names = {f.name for f in fields(cls)}
        _strict_keys(d, names, "config", ("objective", "policy"))
        kw = dict(d)
        obj = kw["objective"]
        kind = obj.get("kind") if isinstance(obj, dict) else None
        if kind not in _OBJECTIVE_KEYS:
            raise ConfigError(f"unknown objective kind {kind!r}; expected one of {sorted(_OBJECTIVE_KEYS)}")
        _strict_keys(obj, _OBJECTIVE_KEYS[kind][0], "objective", _OBJECTIVE_KEYS[kind][1])
        pol = kw["policy"]
        _strict_keys(pol, {"kind", "ratio", "asgd_max_staleness", "asgd_mode"}, "policy", ("kind",))
        try:
            kw["policy"] = PullPolicy(**pol)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if "eta_schedule" in kw:
            kw["eta_schedule"] = EtaSchedule.from_dict(kw["eta_schedule"])
        for k in ("P", "T", "B", "seed", "record_every"):
            if k in kw and (not isinstance(kw[k], int) or isinstance(kw[k], bool)):
                raise ConfigError(f"{k} must be an integer")
        return cls(**kw)

    def to_dict(self) -> dict:
        return {
            "objective": dict(self.objective),
            "policy": self.policy.to_dict(),
            "P": self.P,
            "T": self.T,
            "B": self.B,
            "eta_schedule": self.eta_schedule.to_dict(),
            "seed": self.seed,
            "record_every": self.record_every,
            "instrument_recursion": self.instrument_recursion,
        }

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def epoch_length(N: int, P: int, B: int) -> int:
    """Iterations per epoch: one pass over N samples by P workers of batch B."""
    return -(-N // (P * B))


# ---------------------------------------------------------------------------
# Results


@dataclass(frozen=True)
class IterationRecord:
    t: int
    eta: float
    global_loss: float
    global_sq_grad_norm: float
    avg_cum_pulls: float
    avg_local_gap: float
    optimality_gap: Optional[float] = None


@dataclass
class MetricsSeries:
    config_digest: str
    T: int
    record_every: int
    records: list = field(default_factory=list)
    initial: Optional[IterationRecord] = None
    summary: dict = field(default_factory=dict)
    final_model: Optional[np.ndarray] = None
    staleness_counts: list = field(default_factory=list)


def pulling_stats(series: MetricsSeries) -> tuple[float, float]:
    """``(avg cumulative pulls at the end, pulls per iteration)``."""
    if not series.records:
        raise ValueError("series has no records")
    last = series.records[-1]
    return last.avg_cum_pulls, last.avg_cum_pulls / last.t


def ergodic_avg_sq_grad(series: MetricsSeries) -> float:
    """Time average of the recorded global squared gradient norms."""
    if series.record_every != 1:
        raise ValueError("ergodic average needs a record at every iteration (record_every == 1)")
    if not series.records:
        raise ValueError("series has no records")
    first = series.records[0].global_sq_grad_norm
    return first + math.fsum(r.global_sq_grad_norm - first for r in series.records) / len(series.records)


def staleness_histogram(series: MetricsSeries, worker: int, max_k: int) -> np.ndarray:
    """Counts of the staleness at pull time for k = 0..max_k, plus a tail bin."""
    counts = series.staleness_counts[worker]
    hist = np.zeros(max_k + 2, dtype=np.int64)
    for k, n in counts.items():
        hist[min(k, max_k + 1)] += n
    return hist


# ---------------------------------------------------------------------------
# Driver


@dataclass
class IterationView:
    """Snapshot handed to ``on_iteration`` hooks after each iteration."""

    t: int
    eta: float
    global_before: np.ndarray
    global_after: np.ndarray
    models: np.ndarray
    batches: np.ndarray
    gradients: np.ndarray
    pulled: list
    workers: list


class _Recorder:
    def __init__(self, obj: Objective, f_star: Optional[float]):
        self.obj = obj
        self.f_star = f_star

    def make(self, t, eta, global_model, local_models, pulls) -> IterationRecord:
        loss = self.obj.loss(global_model)
        grad = self.obj.full_gradient(global_model)
        gap = np.mean([sq_norm(global_model - m) for m in local_models])
        rec = IterationRecord(
            t=t,
            eta=eta,
            global_loss=loss,
            global_sq_grad_norm=sq_norm(grad),
            avg_cum_pulls=float(np.mean(pulls)),
            avg_local_gap=float(gap),
            optimality_gap=None if self.f_star is None else loss - self.f_star,
        )
        if not (math.isfinite(rec.global_loss) and math.isfinite(rec.global_sq_grad_norm)
                and math.isfinite(rec.avg_local_gap)):
            raise DivergenceError(t, "loss or gradient norm")
        return rec


def run(config: ExperimentConfig, on_iteration: Optional[Callable[[IterationView], None]] = None,
        objective: Optional[Objective] = None, f_star: Optional[float] = None,
        initial_model: Optional[np.ndarray] = None) -> MetricsSeries:
    """Execute ``config.T`` iterations and return the recorded series.

    ``objective``/``f_star``/``initial_model`` override what the config's
    objective block would build; they are for callers (presets, tests) that
    already hold an objective.
    """
    started = time.perf_counter()
    if objective is None:
        objective, exact, obj_seed = build_objective(config.objective, config.seed)
        if f_star is None and exact is not None:
            f_star = exact.f_star
    else:
        obj_seed = int(config.objective.get("seed", config.seed)) if config.objective else config.seed
    if config.B > objective.N:
        raise ConfigError(f"batch size {config.B} exceeds dataset size {objective.N}")
    if initial_model is None:
        initial_model = objective.initial_point(RngStream(obj_seed, STREAM_INIT))
    w0 = np.array(initial_model, dtype=np.float64)
    if w0.shape != (objective.dim,):
        raise ConfigError(f"initial model has shape {w0.shape}, expected ({objective.dim},)")

    P, T = config.P, config.T
    eta_at = config.eta_schedule.resolve(P, T, epoch_length(objective.N, P, config.B))
    workers = [WorkerState(w0.copy(), worker_pull_stream(config.seed, i),
                           worker_batch_stream(config.seed, i)) for i in range(P)]
    recorder = _Recorder(objective, f_star)
    series = MetricsSeries(config_digest=config.digest(), T=T, record_every=config.record_every)
    series.initial = recorder.make(0, eta_at(1), w0, [w.local_model for w in workers], [0] * P)
    series.staleness_counts = [collections.Counter() for _ in range(P)]

    if config.policy.kind is PolicyKind.ASGD:
        global_model = _run_asgd(config, objective, workers, w0, eta_at, recorder, series, on_iteration)
    else:
        global_model = _run_sync(config, objective, workers, w0, eta_at, recorder, series, on_iteration)

    series.final_model = global_model
    series.summary.update(
        min_loss=min(r.global_loss for r in series.records),
        final_loss=series.records[-1].global_loss,
        total_pulls=int(sum(w.pulls for w in workers)),
        runtime_s=time.perf_counter() - started,
    )
    return series


def _check_finite(t: int, arr: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise DivergenceError(t, what)


# Batches are drawn this many iterations at a time (same values as one by one).
_BATCH_BLOCK = 1024


def _run_sync(config, obj, workers, w0, eta_at, recorder, series, hook):
    policy = config.policy
    P, T, B, N = config.P, config.T, config.B, obj.N
    global_model = w0.copy()
    instrument = config.instrument_recursion
    if instrument:
        anchor = [w0.copy() for _ in range(P)]
        own_sum = [np.zeros_like(w0) for _ in range(P)]
        glob_sum = [np.zeros_like(w0) for _ in range(P)]
        max_local_err = max_global_err = 0.0
        timing_mismatches = 0

    streams = [w.batch_stream for w in workers]
    for t in range(1, T + 1):
        eta = eta_at(t)
        j = (t - 1) % _BATCH_BLOCK
        if j == 0:
            block = objmod.sample_batch_block(streams, N, B, min(_BATCH_BLOCK, T - t + 1))
        batches = block[:, j]
        models = np.stack([w.local_model for w in workers])
        grads = obj.batch_gradients(models, batches, check=False)
        avg_grad = mean_of(grads)
        new_global = axpy(-eta, avg_grad, global_model)
        if not math.isfinite(float(new_global.sum())):
            _check_finite(t, grads, "gradient")
            raise DivergenceError(t, "global model")

        pulled = []
        for i, w in enumerate(workers):
            pull = decide_pull(policy, w)
            if pull:
                series.staleness_counts[i][w.staleness] += 1
            if policy.compensates:
                workers[i] = local_step_prlc(w, pull, new_global, grads[i], eta)
            else:
                workers[i] = local_step_pr(w, pull, new_global)
            pulled.append(pull)

        if instrument:
            for i in range(P):
                # The pushed gradient must be the one at the pre-update local model.
                if not np.array_equal(obj.stochastic_gradient(models[i], batches[i]), grads[i]):
                    timing_mismatches += 1
                if pulled[i]:
                    anchor[i] = new_global.copy()
                    own_sum[i][:] = 0.0
                    glob_sum[i][:] = 0.0
                    continue
                own_sum[i] += eta * grads[i]
                glob_sum[i] += eta * avg_grad
                if policy.compensates:
                    err = np.max(np.abs(workers[i].local_model - (anchor[i] - own_sum[i])))
                    max_local_err = max(max_local_err, float(err))
                err = np.max(np.abs(new_global - (anchor[i] - glob_sum[i])))
                max_global_err = max(max_global_err, float(err))

        if hook is not None:
            hook(IterationView(t, eta, global_model, new_global, models, batches, grads, pulled,
                               list(workers)))
        global_model = new_global
        if t % config.record_every == 0 or t == T:
            series.records.append(recorder.make(t, eta, global_model,
                                                [w.local_model for w in workers],
                                                [w.pulls for w in workers]))

    if instrument:
        series.summary.update(max_local_recursion_err=max_local_err,
                              max_global_recursion_err=max_global_err,
                              gradient_timing_mismatches=timing_mismatches)
    return global_model


def _run_asgd(config, obj, workers, w0, eta_at, recorder, series, hook):
    policy = config.policy
    P, T, B, N = config.P, config.T, config.B, obj.N
    bound = policy.asgd_max_staleness if policy.asgd_max_staleness is not None else max(1, P - 1)
    global_model = w0.copy()
    last_read = [0] * P
    history = collections.deque([w0.copy()], maxlen=P)
    delay_stream = RngStream(config.seed, STREAM_ASGD_DELAY)
    applied = []

    for t in range(1, T + 1):
        eta = eta_at(t)
        i = (t - 1) % P
        w = workers[i]
        batch = objmod.sample_batch(w.batch_stream, N, B)
        if policy.asgd_mode == "round_robin":
            staleness = (t - 1) - last_read[i]
            point = w.local_model
        else:
            staleness = int(delay_stream.generator.integers(0, min(P - 1, t - 1) + 1))
            point = history[-1 - staleness]
        grad = obj.stochastic_gradient(point, batch)
        _check_finite(t, grad, "gradient")
        new_global = asgd_apply(global_model, grad, eta, staleness, bound)
        _check_finite(t, new_global, "global model")
        applied.append(staleness)

        series.staleness_counts[i][w.staleness] += 1
        workers[i] = local_step_pr(w, True, new_global)
        for j in range(P):
            if j != i:
                workers[j] = local_step_pr(workers[j], False, new_global)
        last_read[i] = t
        history.append(new_global)

        if hook is not None:
            hook(IterationView(t, eta, global_model, new_global, point[None, :], batch[None, :],
                               grad[None, :], [j == i for j in range(P)], list(workers)))
        global_model = new_global
        if t % config.record_every == 0 or t == T:
            series.records.append(recorder.make(t, eta, global_model,
                                                [w.local_model for w in workers],
                                                [w.pulls for w in workers]))
    series.summary["asgd_staleness_trace"] = applied
    return global_model
