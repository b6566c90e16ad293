"""Deterministic logical-clock model of a worker cluster.

Tracks per-worker compute time (gradient steps cost the full per-step time,
pseudo-sync mixing steps a small configured fraction of it), synchronization
barriers, and a parametric ring all-reduce cost for every communication
event. No real networking: the point is exact, replayable accounting.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .vecmath import PURPOSE_JITTER, RngStream


@dataclass(frozen=True)
class AllReduceModel:
    latency_s: float = 0.0
    bandwidth_bytes_per_s: float = 1e9
    algorithm: str = "ring"

    def __post_init__(self):
        if self.algorithm != "ring":
            raise ValueError(f"only the ring all-reduce model is supported, got {self.algorithm!r}")
        if self.latency_s < 0 or self.bandwidth_bytes_per_s <= 0:
            raise ValueError("latency_s must be >= 0 and bandwidth_bytes_per_s > 0")


@dataclass(frozen=True)
class ClusterSpec:
    workers: int
    compute_time_per_step: float = 1.0
    worker_multipliers: tuple[float, ...] | None = None  # stragglers
    jitter: float = 0.0  # per-step multiplicative jitter half-width, seeded
    mixing_cost_fraction: float = 0.01
    allreduce: AllReduceModel = field(default_factory=AllReduceModel)
    bytes_per_param: int = 8

    def __post_init__(self):
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        if self.compute_time_per_step < 0:
            raise ValueError("compute_time_per_step must be >= 0")
        if self.worker_multipliers is not None and len(self.worker_multipliers) != self.workers:
            raise ValueError("worker_multipliers length must equal workers")
        if not 0.0 <= self.jitter < 1.0:
            raise ValueError("jitter must be in [0, 1)")
        if self.bytes_per_param not in (4, 8):
            raise ValueError("bytes_per_param must be 4 or 8")

    def step_cost(self, worker: int) -> float:
        mult = self.worker_multipliers[worker] if self.worker_multipliers else 1.0
        return self.compute_time_per_step * mult

    def payload_bytes(self, dim: int) -> int:
        return dim * self.bytes_per_param


def allreduce_time(payload_bytes: int, workers: int, model: AllReduceModel) -> float:
    """Ring all-reduce: 2(K-1) latency rounds plus 2(K-1)/K of the data over the wire."""
    if payload_bytes < 0 or workers < 1:
        raise ValueError("payload_bytes must be >= 0 and workers >= 1")
    if workers == 1:
        return 0.0
    return (model.latency_s * 2 * (workers - 1)
            + (2 * (workers - 1) / workers) * payload_bytes / model.bandwidth_bytes_per_s)


@dataclass
class CommEvent:
    step: int
    payload_bytes: int
    duration_s: float
    participants: int

    def to_json_obj(self) -> dict:
        return {"t": self.step, "bytes": self.payload_bytes,
                "duration_s": self.duration_s, "k": self.participants}


class SimClock:
    """Per-worker elapsed seconds plus an append-only communication log.

    A single owner (the trainer loop) advances the clock; global time is the
    max over workers and is realized at every barrier.
    """

    def __init__(self, spec: ClusterSpec, seed: int = 0):
        self.spec = spec
        self.worker_time = [0.0] * spec.workers
        self.events: list[CommEvent] = []
        self.comm_seconds = 0.0
        self._jitter_streams = (
            [RngStream(seed, k, PURPOSE_JITTER) for k in range(spec.workers)]
            if spec.jitter > 0 else None
        )

    @property
    def global_time(self) -> float:
        return max(self.worker_time)

    def advance_step(self, worker: int, is_gradient_step: bool) -> None:
        cost = self.spec.step_cost(worker)
        if not is_gradient_step:
            cost *= self.spec.mixing_cost_fraction
        if self._jitter_streams is not None:
            u = self._jitter_streams[worker].uniform()
            cost *= 1.0 + self.spec.jitter * (2.0 * u - 1.0)
        self.worker_time[worker] += cost

    def barrier(self, duration: float = 0.0) -> None:
        top = max(self.worker_time) + duration
        for k in range(self.spec.workers):
            self.worker_time[k] = top

    def record_allreduce(self, step: int, dim: int) -> CommEvent:
        """Barrier all workers through one all-reduce and log it."""
        payload = self.spec.payload_bytes(dim)
        duration = allreduce_time(payload, self.spec.workers, self.spec.allreduce)
        self.barrier(duration)
        self.comm_seconds += duration
        event = CommEvent(step=step, payload_bytes=payload, duration_s=duration,
                          participants=self.spec.workers)
        self.events.append(event)
        return event


def export_events_jsonl(events: list[CommEvent], path: str) -> None:
    with open(path, "w") as fh:
        for ev in events:
            fh.write(json.dumps(ev.to_json_obj()) + "\n")
