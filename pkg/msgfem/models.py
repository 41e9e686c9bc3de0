from __future__ import annotations

import math
from dataclasses import dataclass

BOUND_SLACK = 1e-8


@dataclass(frozen=True)
class LocalErrors:
    """Per-subdomain error terms of one GFEM solve."""

    index: int
    best_error: float
    particular_error: float
    nwidth: float | None = None

    def local_bound(self) -> float | None:
        """d_{h,n} ||u_h - ψ||_{a,ε,ω*}, when the n-width is known."""
        return None if self.nwidth is None else self.nwidth * self.particular_error


@dataclass(frozen=True)
class ErrorReport:
    err_energy: float
    err_rel: float
    bound_thm21: float
    kappa: int
    kappa_star: int
    coarse_dim: int
    dropped: int
    galerkin_residual: float
    local: tuple[LocalErrors, ...] = ()
    t_local_s: float = math.nan
    t_coarse_s: float = math.nan

    @property
    def bound_holds(self) -> bool:
        return self.err_energy <= self.bound_thm21 * (1.0 + BOUND_SLACK) + 1e-300


@dataclass(frozen=True)
class OracleReport:
    """One independent check: what the method produced against what the oracle says."""

    case_id: str
    method: float
    oracle: float
    tolerance: float
    passed: bool
    kind: str = "match"
    detail: str = ""

    @property
    def deviation(self) -> float:
        return abs(self.method - self.oracle) / max(abs(self.method), abs(self.oracle), 1e-30)

    @classmethod
    def match(cls, case_id: str, method: float, oracle: float, tolerance: float) -> OracleReport:
        dev = abs(method - oracle) / max(abs(method), abs(oracle), 1e-30)
        return cls(case_id, float(method), float(oracle), tolerance, bool(dev <= tolerance), "match")

    @classmethod
    def bound(cls, case_id: str, value: float, bound: float, slack: float = BOUND_SLACK) -> OracleReport:
        """Passes when value <= bound * (1 + slack)."""
        return cls(case_id, float(value), float(bound), slack, bool(value <= bound * (1.0 + slack)), "bound")

    @classmethod
    def at_least(cls, case_id: str, value: float, minimum: float) -> OracleReport:
        return cls(case_id, float(value), float(minimum), 0.0, bool(value >= minimum), "at_least")

    @classmethod
    def skipped(cls, case_id: str, detail: str) -> OracleReport:
        return cls(case_id, math.nan, math.nan, math.nan, True, "skip", detail)

    @classmethod
    def check(cls, case_id: str, passed: bool, detail: str = "") -> OracleReport:
        """A yes/no property with no numeric oracle."""
        flag = 1.0 if passed else 0.0
        return cls(case_id, flag, 1.0, 0.0, bool(passed), "check", detail)

    @classmethod
    def failure(cls, case_id: str, detail: str) -> OracleReport:
        return cls(case_id, math.nan, math.nan, math.nan, False, "error", detail)


@dataclass(frozen=True)
class ResultRow:
    """One CSV row: a sweep point's provenance plus its ErrorReport."""

    seed: int | None
    n: int
    N: int
    ell: int
    eps: float
    nloc: int
    contrast: float
    report: ErrorReport
    version: str

    @property
    def h(self) -> float:
        return 1.0 / self.n
