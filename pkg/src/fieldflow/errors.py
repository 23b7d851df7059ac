"""Exception types shared across the package.

The CLI maps these onto exit codes: contract violations exit with 2,
divergence errors with 3.
"""


class ContractViolation(ValueError):
    """An argument or state violates a documented precondition."""


class SimulationDiverged(RuntimeError):
    """Time integration produced a non-finite state."""

    def __init__(self, step: int, detail: str = ""):
        self.step = step
        msg = f"non-finite state at step {step}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class TrainingDiverged(RuntimeError):
    """A training loop produced a non-finite loss or gradient."""
