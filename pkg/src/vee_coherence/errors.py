"""Domain exceptions."""

from __future__ import annotations

from typing import Optional, Sequence


class GridTooCoarse(ValueError):
    pass


class GridTooShort(ValueError):
    pass


class GridMismatch(ValueError):
    pass


class OutOfGrid(ValueError):
    pass


class InvalidSpec(ValueError):
    pass


class EmptyEnsemble(ValueError):
    pass


class WrongScenario(ValueError):
    pass


class EmptyWindow(ValueError):
    pass


class AllSentinel(ValueError):
    pass


class ParseError(ValueError):
    pass


class ValidationError(ValueError):
    def __init__(self, problems: Sequence[str]) -> None:
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))

    @property
    def field_paths(self) -> list[str]:
        return [problem.split(":", 1)[0] for problem in self.problems]


# Violations that shrink with the step size rather than pointing at a wrong equation.
NUMERICAL_INVARIANTS = frozenset({"positivity", "population"})


class InvariantViolation(RuntimeError):
    def __init__(
        self,
        violations: Sequence[object],
        *,
        step: int,
        time: float,
        seed: Optional[int] = None,
        realization: Optional[int] = None,
    ) -> None:
        self.violations = list(violations)
        self.step = step
        self.time = time
        self.seed = seed
        self.realization = realization
        details = ", ".join(repr(violation) for violation in self.violations)
        location = f"step={step} t={time:.6g}fs"
        if seed is not None:
            location += f" base_seed={seed}"
        if realization is not None:
            location += f" realization={realization}"
        super().__init__(f"Density matrix invariant violated at {location}: {details}")

    @property
    def numerical_only(self) -> bool:
        return bool(self.violations) and all(
            getattr(violation, "invariant", None) in NUMERICAL_INVARIANTS for violation in self.violations
        )


class ConvergenceNotReached(UserWarning):
    pass
