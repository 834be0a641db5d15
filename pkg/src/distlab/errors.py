"""Exception types shared across modules."""

from __future__ import annotations


class AlgorithmFailure(RuntimeError):
    """A confidence set came out empty, which falsifies realizability or beta."""

    def __init__(self, message: str, episode: int | None = None, policy: int | None = None):
        super().__init__(message)
        self.episode = episode
        self.policy = policy


class InstanceTooLarge(ValueError):
    """A brute-force routine was asked to enumerate more than its guard allows."""
