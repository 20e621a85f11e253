"""Run evaluation: latency-SLO satisfaction, throughput, accuracy, tier rollups.

All functions are pure post-processing over the per-sample lifetimes a run
produces. Throughput is finalized samples over the run makespan; satisfaction
counts samples whose end-to-end latency fits the objective, with any samples
still in flight at a forced horizon counted as violations.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import InvalidParamsError


def slo_satisfaction(lifetimes: Sequence, slo_ms: float, in_flight: int = 0) -> float:
    """Fraction of samples finishing within the latency objective.

    in_flight samples (cut off by a horizon) count against the rate.
    """
    if not lifetimes and in_flight == 0:
        raise InvalidParamsError("slo_satisfaction needs at least one sample")
    latencies = np.array([lt.latency_ms for lt in lifetimes], dtype=np.float64)
    satisfied = int((latencies <= slo_ms).sum()) if len(latencies) else 0
    return satisfied / (len(latencies) + in_flight)


def throughput(lifetimes: Sequence, makespan_ms: float) -> float:
    """Finalized samples per second over the run makespan."""
    if makespan_ms <= 0:
        raise InvalidParamsError(f"makespan must be positive, got {makespan_ms}")
    return len(lifetimes) / (makespan_ms / 1000.0)


def accuracy(lifetimes: Sequence) -> float:
    """Fraction of finalized samples answered correctly."""
    if not lifetimes:
        raise InvalidParamsError("accuracy needs at least one sample")
    return sum(1 for lt in lifetimes if lt.correct) / len(lifetimes)


def forward_rate(lifetimes: Sequence, in_flight: int = 0) -> float:
    """Fraction of decided samples that went to the server."""
    decided = len(lifetimes) + in_flight
    if decided == 0:
        return 0.0
    served = sum(1 for lt in lifetimes if lt.location == "server") + in_flight
    return served / decided


def windowed_throughput(lifetimes: Sequence, window_ms: float) -> list[tuple[float, float]]:
    """Completion rate per fixed window, for plateau visualization.

    Returns (window end ms, samples/s) pairs covering the whole run."""
    if window_ms <= 0:
        raise InvalidParamsError(f"window must be positive, got {window_ms}")
    if not lifetimes:
        return []
    end = max(lt.completion_ms for lt in lifetimes)
    buckets = int(end // window_ms) + 1
    counts = [0] * buckets
    for lt in lifetimes:
        counts[int(lt.completion_ms // window_ms)] += 1
    return [((i + 1) * window_ms, c / (window_ms / 1000.0))
            for i, c in enumerate(counts)]


def aggregate_by_tier(lifetimes: Sequence, device_tiers: dict[int, str],
                      makespan_ms: float, slos_ms: Sequence[float],
                      in_flight_by_tier: Optional[dict[str, int]] = None) -> dict:
    """Per-tier accuracy, throughput, and satisfaction.

    Tier throughputs share the run-wide makespan so they sum to the total.
    """
    in_flight_by_tier = in_flight_by_tier or {}
    by_tier: dict[str, list] = {}
    for lt in lifetimes:
        by_tier.setdefault(device_tiers[lt.device_id], []).append(lt)
    for tier in in_flight_by_tier:
        by_tier.setdefault(tier, [])

    report = {}
    for tier in sorted(by_tier):
        tier_lts = by_tier[tier]
        stuck = in_flight_by_tier.get(tier, 0)
        report[tier] = {
            "samples": len(tier_lts),
            "accuracy": accuracy(tier_lts) if tier_lts else 0.0,
            "throughput": throughput(tier_lts, makespan_ms) if makespan_ms > 0 else 0.0,
            "satisfaction": {
                float(slo): slo_satisfaction(tier_lts, slo, stuck)
                for slo in slos_ms
            } if (tier_lts or stuck) else {float(slo): 0.0 for slo in slos_ms},
        }
    return report


@dataclass
class MetricsReport:
    """Everything a single simulation run reports."""

    scheduler_kind: str
    device_count: int
    seed: int
    makespan_ms: float
    total_throughput: float
    cascade_accuracy: float
    device_mean_accuracy: float
    slo_satisfaction: dict[float, float]
    per_tier: dict[str, dict]
    forward_rate: float
    mean_queue_length: float
    arrival_rate: float
    server_throughput: float
    server_state: str
    samples_finalized: int
    samples_local: int
    samples_served: int
    samples_in_flight: int
    sample_lifetimes: Optional[list] = field(default=None, repr=False)
    event_log: Optional[list[str]] = field(default=None, repr=False)

    def to_dict(self, include_lifetimes: bool = False) -> dict:
        doc = {
            "scheduler_kind": self.scheduler_kind,
            "device_count": self.device_count,
            "seed": self.seed,
            "makespan_ms": self.makespan_ms,
            "total_throughput": self.total_throughput,
            "cascade_accuracy": self.cascade_accuracy,
            "device_mean_accuracy": self.device_mean_accuracy,
            "slo_satisfaction": {str(k): v for k, v in self.slo_satisfaction.items()},
            "per_tier": self.per_tier,
            "forward_rate": self.forward_rate,
            "mean_queue_length": self.mean_queue_length,
            "arrival_rate": self.arrival_rate,
            "server_throughput": self.server_throughput,
            "server_state": self.server_state,
            "samples_finalized": self.samples_finalized,
            "samples_local": self.samples_local,
            "samples_served": self.samples_served,
            "samples_in_flight": self.samples_in_flight,
        }
        if include_lifetimes and self.sample_lifetimes is not None:
            doc["sample_lifetimes"] = [
                {"device_id": lt.device_id, "sample_index": lt.sample_index,
                 "start_ms": lt.start_ms, "completion_ms": lt.completion_ms,
                 "location": lt.location, "correct": lt.correct,
                 "latency_ms": lt.latency_ms}
                for lt in self.sample_lifetimes
            ]
        return doc

    def to_json(self, include_lifetimes: bool = False) -> str:
        return json.dumps(self.to_dict(include_lifetimes), sort_keys=True, indent=2)


def mean_report(reports: Sequence[MetricsReport]) -> dict:
    """Average the numeric fields of several per-seed reports."""
    if not reports:
        raise InvalidParamsError("mean_report needs at least one report")
    first = reports[0]
    n = len(reports)

    def avg(get):
        return sum(get(r) for r in reports) / n

    slos = list(first.slo_satisfaction)
    tiers = sorted(first.per_tier)
    return {
        "scheduler_kind": first.scheduler_kind,
        "device_count": first.device_count,
        "seeds": [r.seed for r in reports],
        "makespan_ms": avg(lambda r: r.makespan_ms),
        "total_throughput": avg(lambda r: r.total_throughput),
        "cascade_accuracy": avg(lambda r: r.cascade_accuracy),
        "device_mean_accuracy": avg(lambda r: r.device_mean_accuracy),
        "slo_satisfaction": {str(s): avg(lambda r: r.slo_satisfaction[s]) for s in slos},
        "per_tier": {
            t: {
                "samples": avg(lambda r: r.per_tier[t]["samples"]),
                "accuracy": avg(lambda r: r.per_tier[t]["accuracy"]),
                "throughput": avg(lambda r: r.per_tier[t]["throughput"]),
                "satisfaction": {
                    str(s): avg(lambda r: r.per_tier[t]["satisfaction"][s]) for s in slos
                },
            }
            for t in tiers
        },
        "forward_rate": avg(lambda r: r.forward_rate),
        "mean_queue_length": avg(lambda r: r.mean_queue_length),
        "arrival_rate": avg(lambda r: r.arrival_rate),
        "server_throughput": avg(lambda r: r.server_throughput),
        "samples_finalized": avg(lambda r: r.samples_finalized),
        "samples_in_flight": avg(lambda r: r.samples_in_flight),
    }


SWEEP_CSV_HEADER = "devices,seed,scheduler,slo_ms,satisfaction,throughput,accuracy,forward_rate"


def sweep_csv_rows(reports: Sequence[MetricsReport]) -> list[str]:
    """Flatten reports into the sweep CSV row format, one row per (run, SLO)."""
    rows = []
    for r in reports:
        for slo, sat in r.slo_satisfaction.items():
            rows.append(f"{r.device_count},{r.seed},{r.scheduler_kind},{slo!r},"
                        f"{sat!r},{r.total_throughput!r},{r.cascade_accuracy!r},"
                        f"{r.forward_rate!r}")
    return rows
