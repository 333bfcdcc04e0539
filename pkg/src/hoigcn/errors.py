"""Exception types shared across the toolkit."""


class HoiError(Exception):
    """Base class for all toolkit errors."""


class ParseError(HoiError, ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)


class DuplicateFrameError(ParseError):
    pass


class InputError(HoiError, ValueError):
    pass


class LabelError(HoiError, ValueError):
    pass


class ShapeError(HoiError, ValueError):
    pass


class ConfigError(HoiError, ValueError):
    pass


class GraphSpecError(ConfigError):
    pass


class StateError(HoiError, RuntimeError):
    pass


class NonFiniteError(HoiError, FloatingPointError):
    pass


class DivergenceError(HoiError, RuntimeError):
    pass


class EvaluationError(HoiError, ValueError):
    pass
