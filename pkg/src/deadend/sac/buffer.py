"""Ring replay buffer with uniform sampling and a line-oriented text format."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Iterator, Optional

import numpy as np

from deadend.sac.agent import Batch

BUFFER_VERSION = 1


class ReplayBuffer:
    """Fixed-capacity ring of transitions ``(s, a, r, s2, done)``.

    Storage grows geometrically up to ``capacity`` so a large nominal
    capacity does not allocate memory up front.
    """

    def __init__(self, obs_dim: int = 45, act_dim: int = 2, capacity: int = 1_000_000):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.obs_dim, self.act_dim, self.capacity = obs_dim, act_dim, int(capacity)
        self.size = 0
        self.cursor = 0
        self._alloc(min(self.capacity, 1024))

    def _alloc(self, n: int) -> None:
        def grow(old, shape):
            new = np.zeros(shape)
            if old is not None:
                new[: len(old)] = old
            return new

        get = lambda name: getattr(self, name, None)
        self.s = grow(get("s"), (n, self.obs_dim))
        self.a = grow(get("a"), (n, self.act_dim))
        self.r = grow(get("r"), (n,))
        self.s2 = grow(get("s2"), (n, self.obs_dim))
        self.d = grow(get("d"), (n,))

    def __len__(self) -> int:
        return self.size

    def add(self, s, a, r, s2, done) -> None:
        if not np.isfinite(r):
            raise ValueError("reward must be finite")
        i = self.cursor
        if i >= len(self.r):
            self._alloc(min(self.capacity, 2 * len(self.r)))
        self.s[i], self.a[i], self.r[i], self.s2[i], self.d[i] = s, a, r, s2, float(done)
        self.cursor = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def _order(self) -> np.ndarray:
        """Storage indices from oldest to newest."""
        if self.size < self.capacity:
            return np.arange(self.size)
        return (np.arange(self.size) + self.cursor) % self.capacity

    def sample(self, batch_size: int, rng: np.random.Generator) -> Batch:
        if self.size < batch_size:
            raise ValueError(f"buffer holds {self.size} transitions, need {batch_size}")
        idx = rng.integers(0, self.size, batch_size)
        return Batch(self.s[idx], self.a[idx], self.r[idx], self.s2[idx], self.d[idx])

    def transitions(self) -> Iterator[tuple]:
        for i in self._order():
            yield self.s[i], self.a[i], float(self.r[i]), self.s2[i], bool(self.d[i])

    def tail(self, n: int) -> "ReplayBuffer":
        """The ``n`` most recent transitions as a new buffer of the same capacity."""
        out = ReplayBuffer(self.obs_dim, self.act_dim, self.capacity)
        for t in list(self.transitions())[max(0, self.size - n):]:
            out.add(*t)
        return out


def dumps_buffer(buf: ReplayBuffer) -> str:
    header = {"schema_version": BUFFER_VERSION, "obs_dim": buf.obs_dim, "act_dim": buf.act_dim,
              "capacity": buf.capacity, "size": buf.size}
    lines = [json.dumps(header, sort_keys=True)]
    for s, a, r, s2, d in buf.transitions():
        lines.append(json.dumps([s.tolist(), a.tolist(), r, s2.tolist(), d], separators=(",", ":")))
    return "\n".join(lines) + "\n"


def loads_buffer(text: str) -> ReplayBuffer:
    lines = text.splitlines()
    if not lines:
        raise ValueError("empty buffer file")
    header = json.loads(lines[0])
    if header.get("schema_version") != BUFFER_VERSION:
        raise ValueError(f"unsupported buffer schema_version {header.get('schema_version')!r}")
    buf = ReplayBuffer(header["obs_dim"], header["act_dim"], header["capacity"])
    body = lines[1:]
    if len(body) != header["size"]:
        raise ValueError(f"buffer header says {header['size']} transitions, file has {len(body)}")
    for k, line in enumerate(body):
        s, a, r, s2, d = json.loads(line)
        if len(s) != buf.obs_dim or len(s2) != buf.obs_dim or len(a) != buf.act_dim:
            raise ValueError(f"transition {k} has wrong dimensions")
        buf.add(np.array(s, float), np.array(a, float), float(r), np.array(s2, float), bool(d))
    return buf


def save_buffer(buf: ReplayBuffer, path) -> None:
    Path(path).write_text(dumps_buffer(buf))


def load_buffer(path) -> ReplayBuffer:
    return loads_buffer(Path(path).read_text())
