"""Cycle accounting, activity ratios and the power-gating estimate."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Mapping, Optional

UNITS = ("adder", "multiplier", "divider", "exponential", "sqrt",
         "mac", "softmax", "layernorm", "memory")
COMPUTE_UNITS = UNITS[:-1]
PHASES = ("embed", "attention", "mlp", "head")

CLOCK_HZ = 100_000_000
INFERENCE_PERIOD_S = 30.0


@dataclass
class FlagEvent:
    phase: str
    op: str
    flag: str
    count: int


@dataclass
class ActivityTrace:
    """Busy cycles per unit and cycles per phase for one inference.

    Memory is active for the whole inference, so its busy count is the
    total rather than a tracked quantity.
    """

    busy: dict[str, int] = field(default_factory=lambda: dict.fromkeys(COMPUTE_UNITS, 0))
    phases: dict[str, int] = field(default_factory=lambda: dict.fromkeys(PHASES, 0))
    flag_events: list[FlagEvent] = field(default_factory=list)

    @property
    def total_cycles(self) -> int:
        return sum(self.phases.values())

    def busy_cycles(self, unit: str) -> int:
        if unit == "memory":
            return self.total_cycles
        return self.busy[unit]

    def charge(self, phase: str, cycles: int, busy: Optional[Mapping[str, int]] = None,
               count: int = 1) -> None:
        if phase not in self.phases:
            raise KeyError(f"unknown phase {phase!r}")
        self.phases[phase] += cycles * count
        for unit, n in (busy or {}).items():
            self.busy[unit] += n * count

    def flag(self, phase: str, op: str, flag: str, count: int) -> None:
        if count:
            self.flag_events.append(FlagEvent(phase, op, flag, int(count)))

    @property
    def flag_count(self) -> int:
        return sum(e.count for e in self.flag_events)

    def to_dict(self) -> dict:
        return {
            "total_cycles": self.total_cycles,
            "busy": dict(self.busy),
            "phases": dict(self.phases),
            "flag_events": [vars(e) for e in self.flag_events],
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "ActivityTrace":
        t = cls(busy=dict(d["busy"]), phases=dict(d["phases"]),
                flag_events=[FlagEvent(**e) for e in d.get("flag_events", [])])
        if "total_cycles" in d and d["total_cycles"] != t.total_cycles:
            raise ValueError("trace phases do not sum to total_cycles")
        return t


@dataclass(frozen=True)
class UnitPower:
    dynamic_mw: float
    leakage_mw: float


# unit power constants, in mW
TABLE_III_POWER = {
    "adder": UnitPower(9.83e-3, 23.7e-3),
    "multiplier": UnitPower(50.1e-3, 245e-3),
    "divider": UnitPower(9.1e-3, 50.1e-3),
    "exponential": UnitPower(20.4e-3, 75.3e-3),
    "sqrt": UnitPower(9.6e-3, 41.8e-3),
    "mac": UnitPower(75.4e-3, 113e-3),
    "softmax": UnitPower(106.2e-3, 562e-3),
    "layernorm": UnitPower(51.6e-3, 97.9e-3),
    "weights_sram": UnitPower(18.8e-3, 2.75),
    "intermediate_sram": UnitPower(5.79, 6.87),
}


@dataclass(frozen=True)
class PowerModel:
    units: Mapping[str, UnitPower] = field(default_factory=lambda: dict(TABLE_III_POWER))
    # the reported design totals include logic not itemized per unit
    dynamic_total_mw: float = 6.54
    leakage_total_mw: float = 11.0
    gating_efficiency: float = 0.95
    inference_period_s: float = INFERENCE_PERIOD_S
    clock_hz: float = CLOCK_HZ

    def __post_init__(self) -> None:
        if not 0.0 <= self.gating_efficiency <= 1.0:
            raise ValueError("gating_efficiency must be within [0, 1]")
        if self.inference_period_s <= 0 or self.clock_hz <= 0:
            raise ValueError("period and clock must be positive")

    @property
    def itemized_dynamic_mw(self) -> float:
        return sum(u.dynamic_mw for u in self.units.values())

    @property
    def itemized_leakage_mw(self) -> float:
        return sum(u.leakage_mw for u in self.units.values())


def duty_cycle(total_cycles: int, pm: PowerModel) -> float:
    return total_cycles / pm.clock_hz / pm.inference_period_s


def power_from_duty(duty: float, pm: PowerModel) -> float:
    """Average power (mW) when active a fraction ``duty`` of each period and gated otherwise."""
    if not 0.0 <= duty <= 1.0:
        raise ValueError(f"duty {duty} outside [0, 1]")
    active = pm.dynamic_total_mw + pm.leakage_total_mw
    gated = (1.0 - pm.gating_efficiency) * pm.leakage_total_mw
    return duty * active + (1.0 - duty) * gated


def effective_power(trace: ActivityTrace, pm: Optional[PowerModel] = None) -> float:
    pm = pm or PowerModel()
    if trace.total_cycles <= 0:
        raise ValueError("trace has no cycles")
    return power_from_duty(duty_cycle(trace.total_cycles, pm), pm)


@dataclass(frozen=True)
class ActivityRow:
    unit: str
    busy_cycles: int
    ratio_inference: float
    ratio_period: float


def activity_ratios(trace: ActivityTrace, pm: Optional[PowerModel] = None) -> list[ActivityRow]:
    pm = pm or PowerModel()
    total = trace.total_cycles
    if total <= 0:
        raise ValueError("empty trace")
    period_cycles = pm.inference_period_s * pm.clock_hz
    rows = []
    for unit in UNITS:
        busy = trace.busy_cycles(unit)
        rows.append(ActivityRow(unit, busy, busy / total, busy / period_cycles))
    return rows


def latency_report(trace: ActivityTrace, clock_hz: float = CLOCK_HZ,
                   period_s: float = INFERENCE_PERIOD_S) -> dict:
    total = trace.total_cycles
    return {
        "cycles": total,
        "seconds": total / clock_hz,
        "epoch_fraction": total / clock_hz / period_s,
        "phases": {
            name: {"cycles": c, "seconds": c / clock_hz,
                   "fraction": c / total if total else 0.0}
            for name, c in trace.phases.items()
        },
    }


def summary(trace: ActivityTrace, pm: Optional[PowerModel] = None) -> dict:
    pm = pm or PowerModel()
    lat = latency_report(trace, pm.clock_hz, pm.inference_period_s)
    return {
        "latency_cycles": lat["cycles"],
        "latency_s": lat["seconds"],
        "epoch_fraction": lat["epoch_fraction"],
        "effective_power_mw": effective_power(trace, pm),
        "dynamic_power_mw": pm.dynamic_total_mw,
        "leakage_power_mw": pm.leakage_total_mw,
        "gating_efficiency": pm.gating_efficiency,
    }


def activity_csv(rows: list[ActivityRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["unit", "ratio_inference", "ratio_period", "busy_cycles"])
    for r in rows:
        w.writerow([r.unit, repr(r.ratio_inference), repr(r.ratio_period), r.busy_cycles])
    return buf.getvalue()


def latency_csv(report: dict) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["phase", "cycles", "seconds", "fraction"])
    for name, p in report["phases"].items():
        w.writerow([name, p["cycles"], repr(p["seconds"]), repr(p["fraction"])])
    w.writerow(["total", report["cycles"], repr(report["seconds"]), "1.0"])
    return buf.getvalue()


def summary_csv(s: dict) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["metric", "value"])
    for k, v in s.items():
        w.writerow([k, repr(v)])
    return buf.getvalue()


def to_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"
