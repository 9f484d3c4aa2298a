"""Run-metrics ledger: per-phase counters, weighted-matvec main cost, JSONL IO.

The main cost of a phase is a machine-independent flop proxy built from raw
solver tallies: every matrix-vector product is charged the nnz of the matrix
it touches (complement-stiffness products are charged the nnz of the level
stiffness they wrap). Costs are also reported in units of nnz(A0) so runs on
different inputs are comparable at a glance.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

SCHEMA_VERSION = 1


@dataclass
class PhaseRecord:
    level: int
    phase: str                      # coarse_solve | refine | extend | baseline | certificate
    pairs_in: int = 0
    pairs_out: int = 0
    iterations: int = 0             # refinement sweeps (0 elsewhere)
    pcg_calls_a: int = 0
    a_matvecs_total: int = 0
    a_matvecs_max: int = 0
    m_solve_calls: int = 0
    m_iters_total: int = 0
    cg_calls_b: int = 0
    b_matvecs_total: int = 0
    nnz_a: int = 0
    nnz_m: int = 0
    nnz_a0: int = 0
    main_cost_flops: int = 0
    main_cost_units: float = 0.0
    wall_s: float = 0.0
    per_call_a_matvecs: list = field(default_factory=list)

    @property
    def mean_a_matvecs(self) -> float:
        return self.a_matvecs_total / self.pcg_calls_a if self.pcg_calls_a else 0.0

    @property
    def mean_b_matvecs(self) -> float:
        return self.b_matvecs_total / self.cg_calls_b if self.cg_calls_b else 0.0

    @property
    def mean_m_iters(self) -> float:
        return self.m_iters_total / self.m_solve_calls if self.m_solve_calls else 0.0


def main_cost_flops(rec: PhaseRecord) -> int:
    """Recompute the weighted-matvec cost from raw counters.

    Refinement: total B products charged at nnz of the level stiffness, plus
    total A products charged at nnz(A) and nested Gram-solve iterations
    charged at nnz(M). Extension and baseline use the same A/M terms.
    """
    cost = (rec.b_matvecs_total + rec.a_matvecs_total) * rec.nnz_a
    cost += rec.m_iters_total * rec.nnz_m
    return int(cost)


def phase_from_lists(level: int, phase: str, *, pairs_in: int, pairs_out: int,
                     iterations: int, a_matvecs: list, m_iters: list,
                     m_calls: list, b_matvecs: list, nnz_a: int, nnz_m: int,
                     nnz_a0: int, wall_s: float) -> PhaseRecord:
    rec = PhaseRecord(
        level=level, phase=phase, pairs_in=pairs_in, pairs_out=pairs_out,
        iterations=iterations,
        pcg_calls_a=len(a_matvecs),
        a_matvecs_total=int(sum(a_matvecs)),
        a_matvecs_max=int(max(a_matvecs)) if a_matvecs else 0,
        m_solve_calls=int(sum(m_calls)),
        m_iters_total=int(sum(m_iters)),
        cg_calls_b=len(b_matvecs),
        b_matvecs_total=int(sum(b_matvecs)),
        nnz_a=nnz_a, nnz_m=nnz_m, nnz_a0=nnz_a0, wall_s=wall_s,
        per_call_a_matvecs=[int(v) for v in a_matvecs])
    rec.main_cost_flops = main_cost_flops(rec)
    rec.main_cost_units = rec.main_cost_flops / nnz_a0 if nnz_a0 else 0.0
    return rec


@dataclass
class RunMetrics:
    header: dict = field(default_factory=dict)
    records: list = field(default_factory=list)

    def add(self, rec: PhaseRecord) -> None:
        self.records.append(rec)

    def total_main_cost(self, phases=("coarse_solve", "refine", "extend", "baseline")) -> int:
        return sum(r.main_cost_flops for r in self.records if r.phase in phases)

    def total_units(self) -> float:
        nnz0 = max((r.nnz_a0 for r in self.records), default=0)
        return self.total_main_cost() / nnz0 if nnz0 else 0.0

    def to_jsonl(self, path) -> None:
        with open(path, "w") as fh:
            head = {"kind": "run", "schema": SCHEMA_VERSION}
            head.update(self.header)
            fh.write(json.dumps(head) + "\n")
            for rec in self.records:
                row = {"kind": "phase", "schema": SCHEMA_VERSION}
                row.update(asdict(rec))
                fh.write(json.dumps(row) + "\n")

    @classmethod
    def from_jsonl(cls, path) -> "RunMetrics":
        run = cls()
        with open(path) as fh:
            for line in fh:
                row = json.loads(line)
                kind = row.pop("kind", "phase")
                row.pop("schema", None)
                if kind == "run":
                    run.header = row
                else:
                    run.add(PhaseRecord(**row))
        return run


def render_table(metrics: RunMetrics) -> str:
    """Per-level, per-phase summary table in CSV form."""
    cols = ["level", "phase", "pairs_in", "pairs_out", "iters", "cg_calls_B",
            "mean_B", "pcg_calls_A", "mean_A", "max_A", "mean_M",
            "main_cost_units", "wall_s"]
    lines = [",".join(cols)]
    for r in metrics.records:
        lines.append(",".join([
            str(r.level), r.phase, str(r.pairs_in), str(r.pairs_out),
            str(r.iterations), str(r.cg_calls_b), f"{r.mean_b_matvecs:.2f}",
            str(r.pcg_calls_a), f"{r.mean_a_matvecs:.2f}", str(r.a_matvecs_max),
            f"{r.mean_m_iters:.2f}", f"{r.main_cost_units:.4g}", f"{r.wall_s:.3f}"]))
    return "\n".join(lines) + "\n"


def compare_runs(a: RunMetrics, b: RunMetrics) -> dict:
    """Join two metric files: totals, ratio, and per-call iteration profiles."""
    ca, cb = a.total_main_cost(), b.total_main_cost()
    profile_a = [v for r in a.records for v in r.per_call_a_matvecs
                 if r.phase in ("extend", "baseline")]
    profile_b = [v for r in b.records for v in r.per_call_a_matvecs
                 if r.phase in ("extend", "baseline")]
    return {
        "main_cost_a": ca,
        "main_cost_b": cb,
        "cost_ratio_a_over_b": ca / cb if cb else float("inf"),
        "main_cost_units_a": a.total_units(),
        "main_cost_units_b": b.total_units(),
        "wall_a": sum(r.wall_s for r in a.records),
        "wall_b": sum(r.wall_s for r in b.records),
        "iteration_profile_a": profile_a,
        "iteration_profile_b": profile_b,
    }
