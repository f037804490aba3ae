"""Uniform pass/fail reports for the verification checks."""

from __future__ import annotations

from dataclasses import dataclass, field


@dataclass(frozen=True)
class CheckReport:
    """Outcome of one named check.

    ``worst_margin`` is the smallest slack encountered (negative means a
    violation); ``violations`` lists human-readable offender descriptions.
    """

    check: str
    passed: bool
    worst_margin: float
    violations: tuple[str, ...] = field(default_factory=tuple)

    def to_json_dict(self) -> dict:
        out = {"check": self.check, "pass": self.passed, "worst_margin": self.worst_margin}
        if self.violations:
            out["violations"] = list(self.violations)
        return out


def combine(check: str, reports: list[CheckReport]) -> CheckReport:
    """Conjunction of sub-reports under one name, keeping the worst margin."""
    worst = min((r.worst_margin for r in reports), default=float("inf"))
    violations = tuple(v for r in reports for v in r.violations)
    return CheckReport(
        check=check,
        passed=all(r.passed for r in reports),
        worst_margin=worst,
        violations=violations,
    )
