"""Bounded FIFO store of learner transitions with uniform minibatch sampling."""

from __future__ import annotations

import numpy as np

from .env import ObservedTransition, Trajectory, _strip


class RolloutBuffer:
    """Keeps the most recent ``capacity`` learner transitions (reward-free view).

    Storage is a ring: once full, each push overwrites the oldest slot.
    ``insert_count`` counts every transition ever pushed, evicted or not.
    """

    def __init__(self, capacity: int = 200_000):
        if capacity < 1:
            raise ValueError(f"capacity must be >= 1, got {capacity}")
        self.capacity = int(capacity)
        self._storage: list[ObservedTransition] = []
        self._next = 0
        self.insert_count = 0

    def __len__(self):
        return len(self._storage)

    def push(self, trajectory) -> "RolloutBuffer":
        transitions = trajectory.transitions if isinstance(trajectory, Trajectory) else trajectory
        for t in transitions:
            t = _strip(t)
            if len(self._storage) < self.capacity:
                self._storage.append(t)
            else:
                self._storage[self._next] = t
            self._next = (self._next + 1) % self.capacity
            self.insert_count += 1
        return self

    def sample(self, batch_size: int, rng: np.random.Generator) -> list[ObservedTransition]:
        """Uniform draw with replacement over the current contents."""
        if not self._storage:
            raise ValueError("cannot sample from an empty buffer")
        if batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {batch_size}")
        idx = rng.integers(0, len(self._storage), size=batch_size)
        return [self._storage[i] for i in idx]

    def contents(self) -> list[ObservedTransition]:
        """Stored transitions, oldest first."""
        if len(self._storage) < self.capacity:
            return list(self._storage)
        return self._storage[self._next:] + self._storage[:self._next]
