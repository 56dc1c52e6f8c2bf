"""Per-worker update rules: NSGD, PRLC, PR and stale-gradient ASGD."""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np

from .vecmath import DimensionError, RngStream, axpy, bernoulli


class PolicyKind(str, Enum):
    NSGD = "NSGD"
    PRLC = "PRLC"
    PR = "PR"
    ASGD = "ASGD"


class SchedulingError(RuntimeError):
    """An ASGD gradient arrived staler than the configured bound."""


ASGD_MODES = ("round_robin", "uniform")


@dataclass(frozen=True)
class PullPolicy:
    kind: PolicyKind
    ratio: float = 1.0
    asgd_max_staleness: Optional[int] = None
    asgd_mode: str = "round_robin"

    def __post_init__(self):
        object.__setattr__(self, "kind", PolicyKind(self.kind))
        if self.kind in (PolicyKind.PRLC, PolicyKind.PR):
            if not (0.0 < self.ratio <= 1.0) or not math.isfinite(self.ratio):
                raise ValueError(f"pulling ratio must lie in (0, 1], got {self.ratio}")
        if self.kind is PolicyKind.ASGD:
            if self.asgd_max_staleness is not None and self.asgd_max_staleness < 1:
                raise ValueError("asgd_max_staleness must be >= 1")
            if self.asgd_mode not in ASGD_MODES:
                raise ValueError(f"asgd_mode must be one of {ASGD_MODES}")

    @property
    def compensates(self) -> bool:
        """Whether a non-pulling worker applies its own gradient."""
        return self.kind is PolicyKind.PRLC

    def to_dict(self) -> dict:
        out = {"kind": self.kind.value}
        if self.kind in (PolicyKind.PRLC, PolicyKind.PR):
            out["ratio"] = self.ratio
        if self.kind is PolicyKind.ASGD:
            if self.asgd_max_staleness is not None:
                out["asgd_max_staleness"] = self.asgd_max_staleness
            out["asgd_mode"] = self.asgd_mode
        return out


@dataclass(frozen=True)
class WorkerState:
    local_model: np.ndarray
    pull_stream: RngStream
    batch_stream: RngStream
    staleness: int = 0
    pulls: int = 0


def decide_pull(policy: PullPolicy, worker: WorkerState) -> bool:
    if policy.kind is PolicyKind.ASGD:
        raise TypeError("ASGD has no pull step")
    if policy.kind is PolicyKind.NSGD:
        return True
    return bernoulli(worker.pull_stream, policy.ratio)


def _pulled(worker: WorkerState, new_global: np.ndarray) -> WorkerState:
    if new_global.shape != worker.local_model.shape:
        raise DimensionError(f"dimension mismatch: {new_global.shape} vs {worker.local_model.shape}")
    return WorkerState(new_global.copy(), worker.pull_stream, worker.batch_stream, 0, worker.pulls + 1)


def local_step_prlc(worker: WorkerState, pulled: bool, new_global: np.ndarray,
                    own_gradient: np.ndarray, eta: float) -> WorkerState:
    """Pull the fresh global model, or compensate with the worker's own step."""
    if pulled:
        return _pulled(worker, new_global)
    if new_global.shape != worker.local_model.shape:
        raise DimensionError(f"dimension mismatch: {new_global.shape} vs {worker.local_model.shape}")
    return WorkerState(axpy(-eta, own_gradient, worker.local_model), worker.pull_stream,
                       worker.batch_stream, worker.staleness + 1, worker.pulls)


def local_step_pr(worker: WorkerState, pulled: bool, new_global: np.ndarray) -> WorkerState:
    """Pull the fresh global model, or keep the stale one untouched."""
    if pulled:
        return _pulled(worker, new_global)
    if new_global.shape != worker.local_model.shape:
        raise DimensionError(f"dimension mismatch: {new_global.shape} vs {worker.local_model.shape}")
    return WorkerState(worker.local_model, worker.pull_stream, worker.batch_stream,
                       worker.staleness + 1, worker.pulls)


def asgd_apply(server_model: np.ndarray, stale_gradient: np.ndarray, eta: float,
               staleness: int = 0, max_staleness: int | None = None) -> np.ndarray:
    """Apply one worker's (possibly stale) gradient to the server model."""
    if max_staleness is not None and staleness > max_staleness:
        raise SchedulingError(f"staleness {staleness} exceeds bound {max_staleness}")
    return axpy(-eta, stale_gradient, server_model)


def round_robin_staleness(P: int, steps: int) -> list[int]:
    """Staleness of each applied gradient under round-robin application.

    Worker ``t mod P`` applies at step ``t`` a gradient taken on the model it
    read right after its previous application, so once every worker has
    applied once the staleness is exactly ``P - 1``.
    """
    last_read = [0] * P
    trace = []
    for t in range(steps):
        w = t % P
        trace.append(t - last_read[w])
        last_read[w] = t + 1
    return trace
