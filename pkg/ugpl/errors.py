#! /usr/bin/python3
from typing import List, Sequence, TYPE_CHECKING
if TYPE_CHECKING:
    from .event import Event


class EventError(Exception):
    """Error thrown when a pipeline stage fails at run time"""
    def __init__(self, event: 'Event', message: str):
        super().__init__(message)
        self.eventpath = [event]
        self.message = message

    def add_path(self, event: 'Event') -> None:
        self.eventpath = [event] + self.eventpath

    def __str__(self) -> str:
        return "{}: {}".format(' -> '.join(str(e) for e in self.eventpath), self.message)


class ConfigError(Exception):
    """Error thrown when the configuration (or stage wiring) is invalid"""
    def __init__(self, message: str):
        super().__init__(message)
        self.message = message


class ShapeError(Exception):
    """An operator was handed operands whose shapes do not fit"""
    def __init__(self, op: str, *shapes: Sequence[int]):
        self.op = op
        self.shapes = [tuple(s) for s in shapes]
        self.message = "{}: shape mismatch {}".format(op, ' vs '.join(str(s) for s in self.shapes))
        super().__init__(self.message)


class DomainError(Exception):
    """An operator was handed values outside its domain"""
    def __init__(self, op: str, message: str):
        self.op = op
        self.message = "{}: {}".format(op, message)
        super().__init__(self.message)


class DatasetError(Exception):
    """Loading a dataset failed; problems holds one line per offending file"""
    def __init__(self, problems: List[str]):
        self.problems = problems
        self.message = "{} problem(s) loading dataset:\n  {}".format(len(problems), '\n  '.join(problems))
        super().__init__(self.message)


class CheckpointError(Exception):
    """A checkpoint file is malformed or does not match the model"""
    def __init__(self, message: str):
        super().__init__(message)
        self.message = message
