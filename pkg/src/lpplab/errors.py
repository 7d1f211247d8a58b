class LppError(Exception):
    """Base class for all lpplab errors."""


class BudgetExceeded(LppError):
    def __init__(self, cells: int, budget: int):
        super().__init__(f"DP rectangle of {cells} cells exceeds the budget of {budget}")
        self.cells = cells
        self.budget = budget


class OrderViolation(LppError):
    pass


class OutOfSpan(LppError):
    pass


class NoStabilization(LppError):
    """Coalescence/stabilisation not reached within the target budget (censored replica)."""

    def __init__(self, n_last: int):
        super().__init__(f"no stabilisation up to target distance N={n_last}")
        self.n_last = n_last


class WindowClipped(LppError):
    pass


class TieDetected(LppError):
    pass


class DegenerateCounts(LppError):
    pass


class MissingManifest(LppError):
    pass


class ConfigError(LppError):
    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field
