"""
Exception hierarchy for advgame.

Every error carries the process exit code the command line reports for it.
"""

from __future__ import annotations

from typing import Iterable, List, Optional


class AdvGameError(Exception):
    exit_code = 1


class ConfigError(AdvGameError):
    """Invalid configuration; lists every violation, not just the first"""

    exit_code = 2

    def __init__(self, violations: Iterable[str] | str):
        if isinstance(violations, str):
            violations = [violations]
        self.violations: List[str] = list(violations)
        super().__init__("; ".join(self.violations))


class InputError(AdvGameError):
    exit_code = 2


class ShapeError(AdvGameError):
    exit_code = 2

    def __init__(self, what: str, expected, got):
        self.expected = expected
        self.got = got
        super().__init__(f"{what}: expected {expected}, got {got}")


class UnsupportedError(AdvGameError):
    exit_code = 2


class StateError(AdvGameError):
    exit_code = 3


class NumericError(AdvGameError):
    """Non-finite values; keeps where it happened so runs can be resumed"""

    exit_code = 3

    def __init__(
        self,
        message: str,
        *,
        index: Optional[int] = None,
        epoch: Optional[int] = None,
        step: Optional[int] = None,
        checkpoint: Optional[str] = None,
    ):
        self.index = index
        self.epoch = epoch
        self.step = step
        self.checkpoint = checkpoint
        context = []
        if index is not None:
            context.append(f"index={index}")
        if epoch is not None:
            context.append(f"epoch={epoch}")
        if step is not None:
            context.append(f"step={step}")
        if checkpoint is not None:
            context.append(f"last checkpoint={checkpoint}")
        if context:
            message = f"{message} ({', '.join(context)})"
        super().__init__(message)


class SingularityError(AdvGameError):
    exit_code = 3


class DataIOError(AdvGameError):
    exit_code = 4
