class InvalidArgument(ValueError):
    pass


class UnsupportedFormat(ValueError):
    pass


class NumericalFailure(RuntimeError):
    def __init__(self, message: str, step: int | None = None):
        super().__init__(message)
        self.step = step


class UndefinedCorrelation(ValueError):
    pass
