class RolerLabError(Exception):
    """Base class for all library errors."""


class ConfigError(RolerLabError, ValueError):
    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")


class ParseError(RolerLabError, ValueError):
    def __init__(self, path, line, message):
        self.path = path
        self.line = line
        super().__init__(f"{path}:{line}: {message}")


class ParameterError(RolerLabError, ValueError):
    pass


class FeatureError(RolerLabError, ValueError):
    def __init__(self, user, message):
        self.user = user
        super().__init__(f"user {user}: {message}")


class PreconditionError(RolerLabError, ValueError):
    pass


class TrainingDiverged(RolerLabError, RuntimeError):
    def __init__(self, message, diagnostics=None):
        self.diagnostics = diagnostics or {}
        super().__init__(message)
