"""Exception hierarchy. CLI exit codes: InputError -> 2, NumericalError -> 1."""


class MomentAnnError(Exception):
    pass


class InputError(MomentAnnError, ValueError):
    """Malformed, missing or inconsistent input data."""


class NumericalError(MomentAnnError, ArithmeticError):
    """Estimation could not produce a usable numerical result."""


class RankDeficiencyError(NumericalError):
    pass


class ConvergenceError(NumericalError):
    pass
