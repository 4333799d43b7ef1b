class GraphAEError(Exception):
    """Базовое исключение библиотеки graph_ae."""


class DimensionMismatchError(GraphAEError, ValueError):
    pass


class InvalidGraphError(GraphAEError, ValueError):
    pass


class DecoderSizeError(GraphAEError):
    pass


class NonFiniteGradientError(GraphAEError):
    pass


class DivergenceError(GraphAEError):
    def __init__(self, epoch, loss):
        self.epoch = epoch
        self.loss = loss
        super().__init__(f"Обучение разошлось на эпохе {epoch}: loss={loss}")

    def __reduce__(self):
        return self.__class__, (self.epoch, self.loss)


class DatasetFormatError(GraphAEError):
    def __init__(self, path, line_number, message):
        self.path = path
        self.line_number = line_number
        self.message = message
        super().__init__(f"{path}:{line_number}: {message}")

    def __reduce__(self):
        return self.__class__, (self.path, self.line_number, self.message)


class SplitError(GraphAEError):
    pass


class RepetitionError(GraphAEError):
    def __init__(self, repetition, seed, cause):
        self.repetition = repetition
        self.seed = seed
        self.cause = cause
        super().__init__(f"Повтор {repetition} (seed={seed}) завершился ошибкой: {cause}")

    def __reduce__(self):
        return self.__class__, (self.repetition, self.seed, self.cause)


class ReportFormatError(GraphAEError, ValueError):
    pass


class ReferenceMismatchError(GraphAEError):
    pass
