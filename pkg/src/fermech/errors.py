class FermechError(Exception):
    exit_code = 1


class ShapeError(FermechError, ValueError):
    pass


class DomainError(FermechError, ValueError):
    pass


class DegenerateVectorError(DomainError):
    """A vector whose norm is too small for a direction to be defined."""


class ContractError(FermechError, ValueError):
    pass


class OracleError(FermechError, ArithmeticError):
    pass


class ConfigError(FermechError):
    exit_code = 1


class DataError(FermechError):
    exit_code = 2


class TrainingError(FermechError, ArithmeticError):
    """Non-finite loss or gradient during optimisation."""

    exit_code = 3
