from typing import Any, Optional, Set, Type

from mcusum.types import is_union


def _type_name(type_: Type) -> str:
    return type_.__name__ if hasattr(type_, "__name__") and not is_union(type_) else str(type_)


class McusumError(Exception):
    pass


class ConfigError(McusumError):
    def __init__(self, field_path: Optional[str] = None) -> None:
        super().__init__()
        self.field_path = field_path

    def update_path(self, parent: str) -> None:
        """Prefix the path with the enclosing field once the error has bubbled up a level."""
        self.field_path = f"{parent}.{self.field_path}" if self.field_path else parent


class WrongTypeError(ConfigError):
    def __init__(self, field_type: Type, value: Any, field_path: Optional[str] = None) -> None:
        super().__init__(field_path=field_path)
        self.field_type = field_type
        self.value = value

    def __str__(self) -> str:
        expected, actual = _type_name(self.field_type), _type_name(type(self.value))
        return f'field "{self.field_path}" expects {expected}, got {self.value!r} ({actual})'


class UnionMatchError(WrongTypeError):
    def __str__(self) -> str:
        return (
            f'field "{self.field_path}" matches none of {_type_name(self.field_type)}, '
            f"got {self.value!r} ({_type_name(type(self.value))})"
        )


class MissingValueError(ConfigError):
    def __str__(self) -> str:
        return f'field "{self.field_path}" is required'


class UnexpectedDataError(ConfigError):
    def __init__(self, keys: Set[str], field_path: Optional[str] = None) -> None:
        super().__init__(field_path=field_path)
        self.keys = keys

    def __str__(self) -> str:
        formatted_keys = ", ".join(f'"{key}"' for key in sorted(self.keys))
        where = f' in "{self.field_path}"' if self.field_path else ""
        return f"unknown key(s) {formatted_keys}{where}"


class ConfigValidationError(ConfigError):
    def __init__(self, message: str, field_path: Optional[str] = None) -> None:
        super().__init__(field_path=field_path)
        self.message = message

    def __str__(self) -> str:
        if self.field_path:
            return f'invalid value for field "{self.field_path}": {self.message}'
        return self.message


class InvalidParameterError(McusumError, ValueError):
    pass


class DomainError(McusumError, ArithmeticError):
    pass


class InvalidUseError(McusumError):
    pass


class CalibrationError(McusumError):
    def __init__(self, target_gamma: float, threshold_b: float, mtfa: float) -> None:
        super().__init__()
        self.target_gamma = target_gamma
        self.threshold_b = threshold_b
        self.mtfa = mtfa

    def __str__(self) -> str:
        return (
            f"can not bracket target MTFA {self.target_gamma:g}: "
            f"estimate at b={self.threshold_b:g} is only {self.mtfa:g}"
        )


class GridPointError(McusumError):
    def __init__(self, detector: str, policy: str, grid_value: float, cause: Exception) -> None:
        super().__init__()
        self.detector = detector
        self.policy = policy
        self.grid_value = grid_value
        self.cause = cause

    def __str__(self) -> str:
        return (
            f'grid point (detector="{self.detector}", policy="{self.policy}", value={self.grid_value:g}): '
            f"{self.cause}"
        )
