from __future__ import annotations


class R2ifError(Exception):
    pass


class InvalidValue(R2ifError):
    pass


class ConfigError(R2ifError):
    pass


class InputError(R2ifError):
    pass


class GroupTooSmall(R2ifError):
    pass


class InvalidGroup(R2ifError):
    pass


class DatasetError(R2ifError):
    """
    A dataset or instance does not satisfy the instance schema.

    line and field are filled in by the loader when known, so the message reads like
    "line 12: gt_document.calls: 2 entries for 3 ground-truth calls".
    """
    def __init__(self, reason: str, line: int | None = None, field: str | None = None):
        super().__init__(reason)
        self.reason = reason
        self.line = line
        self.field = field

    def at(self, line: int) -> DatasetError:
        return DatasetError(self.reason, line, self.field)

    def __str__(self):
        prefix = ''
        if self.line is not None:
            prefix += f'line {self.line}: '
        if self.field:
            prefix += f'{self.field}: '
        return prefix + self.reason


class BackendError(R2ifError):
    def __init__(self, component: str, reason: str, request_id: str | None = None):
        super().__init__(reason)
        self.component = component
        self.reason = reason
        self.request_id = request_id

    def __str__(self):
        rid = f' (request {self.request_id})' if self.request_id else ''
        return f'{self.component} backend failed{rid}: {self.reason}'


class MockMissError(BackendError):
    pass


class ComponentError(R2ifError):
    """
    Raised by the composite reward when one of its parts fails. The original exception is chained.
    """
    def __init__(self, component: str, cause: Exception):
        super().__init__(f'{component}: {cause}')
        self.component = component
        self.cause = cause
