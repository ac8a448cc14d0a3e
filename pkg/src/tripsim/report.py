"""Structured run reports and their file emission.

``report.json`` carries the full report including a config echo sufficient to
reproduce the run; ``metrics.csv`` and ``comm.csv`` are flat per-round views
for external plotting. Serialization is deterministic: re-emitting a parsed
report reproduces the original files byte for byte.
"""
from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field


@dataclass
class DomainMetrics:
    accuracy: float
    ce: float
    kl: float
    dropped_rate: float
    role: str  # "source" or "target"


@dataclass
class RoundRecord:
    round: int
    domain_metrics: dict[str, DomainMetrics]
    expert_utilization: list[float]
    uplink_params: int
    downlink_params: int


@dataclass
class RunReport:
    config: dict
    zero_shot: dict[str, float]
    rounds: list[RoundRecord]
    final_target_accuracy: float
    final_per_class: dict[str, float] = field(default_factory=dict)
    key_broadcast_rounds: list[int] = field(default_factory=list)
    key_params_broadcast: int = 0
    total_uplink_params: int = 0
    total_downlink_params: int = 0
    params_per_client_round: int = 0

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunReport":
        rounds = [
            RoundRecord(
                round=r["round"],
                domain_metrics={k: DomainMetrics(**v)
                                for k, v in r["domain_metrics"].items()},
                expert_utilization=list(r["expert_utilization"]),
                uplink_params=r["uplink_params"],
                downlink_params=r["downlink_params"],
            )
            for r in d["rounds"]
        ]
        return cls(
            config=d["config"],
            zero_shot=dict(d["zero_shot"]),
            rounds=rounds,
            final_target_accuracy=d["final_target_accuracy"],
            final_per_class=dict(d.get("final_per_class", {})),
            key_broadcast_rounds=list(d.get("key_broadcast_rounds", [])),
            key_params_broadcast=d.get("key_params_broadcast", 0),
            total_uplink_params=d.get("total_uplink_params", 0),
            total_downlink_params=d.get("total_downlink_params", 0),
            params_per_client_round=d.get("params_per_client_round", 0),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "RunReport":
        return cls.from_dict(json.loads(text))


METRICS_HEADER = "round,domain,accuracy,ce,kl,dropped_rate"
COMM_HEADER = "round,uplink_params,downlink_params"


def _fmt(x: float) -> str:
    return repr(float(x))


def metrics_csv(report: RunReport) -> str:
    lines = [METRICS_HEADER]
    for rec in report.rounds:
        for domain, m in rec.domain_metrics.items():
            lines.append(f"{rec.round},{domain},{_fmt(m.accuracy)},"
                         f"{_fmt(m.ce)},{_fmt(m.kl)},{_fmt(m.dropped_rate)}")
    return "\n".join(lines) + "\n"


def comm_csv(report: RunReport) -> str:
    lines = [COMM_HEADER]
    for rec in report.rounds:
        lines.append(f"{rec.round},{rec.uplink_params},{rec.downlink_params}")
    return "\n".join(lines) + "\n"


def emit_report(report: RunReport, out_dir) -> dict[str, str]:
    """Write report.json, metrics.csv, and comm.csv; returns the paths."""
    os.makedirs(out_dir, exist_ok=True)
    paths = {}
    for name, text in (("report.json", report.to_json()),
                       ("metrics.csv", metrics_csv(report)),
                       ("comm.csv", comm_csv(report))):
        path = os.path.join(out_dir, name)
        try:
            with open(path, "w", encoding="utf-8", newline="\n") as fh:
                fh.write(text)
        except OSError as exc:
            raise OSError(f"failed writing report file '{path}': {exc}") from exc
        paths[name] = path
    return paths
