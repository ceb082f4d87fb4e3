"""Episode-structured replay storage, sequence sampling and dataset files."""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

DATASET_MAGIC = b"ADMD"
DATASET_VERSION = 1


class SamplingError(ValueError):
    """No valid window exists for the requested sequence length."""


@dataclass
class Transition:
    s: np.ndarray
    a: np.ndarray
    r: float
    s_next: np.ndarray
    done: bool
    episode_id: int


@dataclass
class SequenceSample:
    s_start: np.ndarray
    actions: np.ndarray
    r_end: float
    s_end: np.ndarray
    k: int


@dataclass
class SequenceBatch:
    """Batched k-step training tuples.

    ``actions`` has shape (B, m, action_dim); only the first ``k[i]`` rows of
    sample ``i`` are meaningful, the rest are zero.
    """

    s_start: np.ndarray
    actions: np.ndarray
    r_end: np.ndarray
    s_end: np.ndarray
    k: np.ndarray

    def __len__(self):
        return len(self.k)

    def __getitem__(self, i) -> SequenceSample:
        k = int(self.k[i])
        return SequenceSample(self.s_start[i], self.actions[i, :k], float(self.r_end[i]), self.s_end[i], k)

    def subset(self, idx) -> "SequenceBatch":
        return SequenceBatch(self.s_start[idx], self.actions[idx], self.r_end[idx], self.s_end[idx], self.k[idx])


@dataclass
class RolloutSeed:
    """m-step seed windows: ``states`` (B, m, S) and ``actions`` (B, m-1, A)."""

    states: np.ndarray
    actions: np.ndarray
    index: np.ndarray


class ReplayBuffer:
    """Real-environment transitions kept in insertion order, grouped by episode.

    ``done`` marks the last transition of an episode (termination or time
    limit); ``terminal`` is the termination predicate alone and is what value
    targets should mask on.
    """

    _FIELDS = ("s", "a", "r", "s_next", "done", "terminal", "episode_id")

    def __init__(self, state_dim: int, action_dim: int, capacity: int = 1_000_000):
        self.state_dim = state_dim
        self.action_dim = action_dim
        self.capacity = int(capacity)
        self._n = 0
        self._alloc(1024)
        self._next_episode = 0
        self._open_episode = False
        self._rem = None

    def _alloc(self, size):
        old = {f: getattr(self, f, None) for f in self._FIELDS}
        self.s = np.zeros((size, self.state_dim))
        self.a = np.zeros((size, self.action_dim))
        self.r = np.zeros(size)
        self.s_next = np.zeros((size, self.state_dim))
        self.done = np.zeros(size, dtype=bool)
        self.terminal = np.zeros(size, dtype=bool)
        self.episode_id = np.zeros(size, dtype=np.int64)
        if old["s"] is not None:
            for f in self._FIELDS:
                getattr(self, f)[: self._n] = old[f][: self._n]

    def __len__(self):
        return self._n

    @property
    def n_episodes(self) -> int:
        return len(np.unique(self.episode_id[: self._n])) if self._n else 0

    def add(self, s, a, r, s_next, done: bool, terminal: bool | None = None) -> None:
        if not np.isfinite(r):
            raise ValueError(f"non-finite reward {r!r}")
        if self._n >= self.capacity:
            self._evict(max(1, self.capacity // 10))
        if self._n == len(self.r):
            self._alloc(min(2 * len(self.r), self.capacity))
        if not self._open_episode:
            self._current = self._next_episode
            self._next_episode += 1
            self._open_episode = True
        i = self._n
        self.s[i] = s
        self.a[i] = a
        self.r[i] = r
        self.s_next[i] = s_next
        self.done[i] = done
        self.terminal[i] = bool(done) if terminal is None else terminal
        self.episode_id[i] = self._current
        self._n += 1
        if done:
            self._open_episode = False
        self._rem = None

    def end_episode(self) -> None:
        """Close the open episode without a done flag (e.g. a truncated run)."""
        self._open_episode = False

    def _evict(self, count: int) -> None:
        for f in self._FIELDS:
            arr = getattr(self, f)
            arr[: self._n - count] = arr[count: self._n]
        self._n -= count
        self._rem = None

    @classmethod
    def from_arrays(cls, s, a, r, s_next, done, episode_id, terminal=None, capacity=None):
        n = len(r)
        buf = cls(s.shape[1], a.shape[1], capacity=capacity or max(n, 1))
        buf._alloc(max(n, 1))
        buf.s[:n], buf.a[:n], buf.r[:n], buf.s_next[:n] = s, a, r, s_next
        buf.done[:n] = done
        buf.terminal[:n] = done if terminal is None else terminal
        buf.episode_id[:n] = episode_id
        buf._n = n
        buf._next_episode = int(episode_id.max()) + 1 if n else 0
        return buf

    def arrays(self) -> dict:
        return {f: getattr(self, f)[: self._n] for f in self._FIELDS}

    def transition(self, i: int) -> Transition:
        return Transition(self.s[i], self.a[i], float(self.r[i]), self.s_next[i], bool(self.done[i]),
                          int(self.episode_id[i]))

    def remaining(self) -> np.ndarray:
        """For each index, the number of transitions left in its episode (inclusive)."""
        if self._rem is None:
            n = self._n
            if n == 0:
                return np.zeros(0, dtype=np.int64)
            ep = self.episode_id[:n]
            # each index's distance to the end of its run of equal episode ids
            ends = np.append(np.flatnonzero(np.diff(ep) != 0), n - 1)
            run_end = np.repeat(ends, np.diff(np.concatenate([[-1], ends])))
            self._rem = run_end - np.arange(n) + 1
        return self._rem

    def max_episode_length(self) -> int:
        return int(self.remaining().max()) if self._n else 0

    def _valid_starts(self, k: int) -> np.ndarray:
        valid = np.flatnonzero(self.remaining() >= k)
        if len(valid) == 0:
            raise SamplingError(
                f"no window of length k={k}; longest available episode has {self.max_episode_length()} transitions"
            )
        return valid

    def sample(self, batch: int, rng: np.random.Generator) -> dict:
        idx = rng.integers(0, self._n, size=batch)
        return {f: getattr(self, f)[idx] for f in ("s", "a", "r", "s_next", "terminal")}

    def sample_sequences(self, batch: int, m: int, rng: np.random.Generator, k="uniform") -> SequenceBatch:
        """Draw k-step tuples (s_t, a_{t:t+k-1}, r_{t+k}, s_{t+k}) within single episodes.

        ``k="uniform"`` draws k per sample from {1..m}; an int fixes it.
        """
        if m < 1:
            raise ValueError("m must be >= 1")
        if k == "uniform":
            ks = rng.integers(1, m + 1, size=batch)
        else:
            k = int(k)
            if not 1 <= k <= m:
                raise ValueError(f"fixed k={k} outside [1, {m}]")
            ks = np.full(batch, k)
        starts = np.empty(batch, dtype=np.int64)
        for kv in np.unique(ks):
            sel = np.flatnonzero(ks == kv)
            valid = self._valid_starts(int(kv))
            starts[sel] = valid[rng.integers(0, len(valid), size=len(sel))]
        return self.gather_sequences(starts, ks, m)

    def gather_sequences(self, starts, ks, m: int) -> SequenceBatch:
        starts, ks = np.asarray(starts), np.asarray(ks)
        steps = np.arange(m)
        idx = np.minimum(starts[:, None] + steps[None, :], self._n - 1)
        actions = self.a[idx] * (steps[None, :] < ks[:, None])[..., None]
        last = starts + ks - 1
        return SequenceBatch(
            s_start=self.s[starts].copy(),
            actions=actions,
            r_end=self.r[last].copy(),
            s_end=self.s_next[last].copy(),
            k=ks.astype(np.int64),
        )

    def all_sequences(self, k: int, m: int) -> SequenceBatch:
        starts = self._valid_starts(k)
        return self.gather_sequences(starts, np.full(len(starts), k), m)

    def sample_rollout_starts(self, batch: int, m: int, rng: np.random.Generator) -> RolloutSeed:
        """Seed windows of m consecutive states and the m-1 actions between them."""
        valid = self._valid_starts(m)
        starts = valid[rng.integers(0, len(valid), size=batch)]
        return self.gather_rollout_starts(starts, m)

    def gather_rollout_starts(self, starts, m: int) -> RolloutSeed:
        starts = np.asarray(starts, dtype=np.int64)
        idx = starts[:, None] + np.arange(m)[None, :]
        return RolloutSeed(states=self.s[idx].copy(), actions=self.a[idx[:, : m - 1]].copy(), index=starts)


class ModelBuffer:
    """FIFO store of single-step model-generated transitions."""

    def __init__(self, state_dim: int, action_dim: int, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = int(capacity)
        self.s = np.zeros((capacity, state_dim))
        self.a = np.zeros((capacity, action_dim))
        self.r = np.zeros(capacity)
        self.s_next = np.zeros((capacity, state_dim))
        self.terminal = np.zeros(capacity, dtype=bool)
        self._ptr = 0
        self._n = 0
        self.total_added = 0

    def __len__(self):
        return self._n

    def add_batch(self, s, a, r, s_next, terminal) -> None:
        n = len(r)
        if n == 0:
            return
        if n > self.capacity:
            s, a, r, s_next, terminal = (x[-self.capacity:] for x in (s, a, r, s_next, terminal))
            n = self.capacity
        idx = (self._ptr + np.arange(n)) % self.capacity
        self.s[idx], self.a[idx], self.r[idx], self.s_next[idx], self.terminal[idx] = s, a, r, s_next, terminal
        self._ptr = (self._ptr + n) % self.capacity
        self._n = min(self._n + n, self.capacity)
        self.total_added += n

    def ordered(self) -> dict:
        """Surviving transitions, oldest first."""
        start = (self._ptr - self._n) % self.capacity
        idx = (start + np.arange(self._n)) % self.capacity
        return {"s": self.s[idx], "a": self.a[idx], "r": self.r[idx], "s_next": self.s_next[idx],
                "terminal": self.terminal[idx]}

    def sample(self, batch: int, rng: np.random.Generator) -> dict:
        idx = rng.integers(0, self._n, size=batch)
        return {"s": self.s[idx], "a": self.a[idx], "r": self.r[idx], "s_next": self.s_next[idx],
                "terminal": self.terminal[idx]}


def mixed_batch(real: ReplayBuffer, model: ModelBuffer | None, batch: int, real_fraction: float,
                rng: np.random.Generator) -> dict:
    """Sample ``batch`` transitions, ``real_fraction`` of them from the real buffer."""
    if model is None or len(model) == 0:
        n_real = batch
    else:
        n_real = int(round(batch * real_fraction))
    parts = []
    if n_real > 0:
        parts.append(real.sample(n_real, rng))
    if batch - n_real > 0:
        parts.append(model.sample(batch - n_real, rng))
    return {k: np.concatenate([p[k] for p in parts]) for k in parts[0]}


# ---------------------------------------------------------------- dataset files

def write_dataset(path, buffer: ReplayBuffer, manifest: dict) -> None:
    arr = buffer.arrays()
    n = len(buffer)
    header = DATASET_MAGIC + struct.pack("<IIIQ", DATASET_VERSION, buffer.state_dim, buffer.action_dim, n)
    blob = json.dumps(manifest, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(header)
        for key in ("s", "a", "r", "s_next"):
            fh.write(np.ascontiguousarray(arr[key], dtype="<f4").tobytes())
        fh.write(arr["done"].astype("u1").tobytes())
        fh.write(arr["episode_id"].astype("<u4").tobytes())
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)


def read_dataset(path, terminal_fn=None):
    """Load a dataset file.  Returns ``(ReplayBuffer, manifest)``.

    ``terminal_fn`` maps next states to the termination predicate; without it
    termination is read from the manifest's env name when possible.
    """
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:4] != DATASET_MAGIC:
        raise ValueError(f"{path}: not a dataset file")
    version, sd, ad, n = struct.unpack_from("<IIIQ", buf, 4)
    if version != DATASET_VERSION:
        raise ValueError(f"{path}: unsupported dataset version {version}")
    off = 4 + struct.calcsize("<IIIQ")

    def take(dtype, count, shape):
        nonlocal off
        out = np.frombuffer(buf, dtype=dtype, count=count, offset=off).reshape(shape)
        off += np.dtype(dtype).itemsize * count
        return out

    s = take("<f4", n * sd, (n, sd)).astype(np.float64)
    a = take("<f4", n * ad, (n, ad)).astype(np.float64)
    r = take("<f4", n, (n,)).astype(np.float64)
    s_next = take("<f4", n * sd, (n, sd)).astype(np.float64)
    done = take("u1", n, (n,)).astype(bool)
    episode_id = take("<u4", n, (n,)).astype(np.int64)
    (mlen,) = struct.unpack_from("<Q", buf, off)
    off += 8
    manifest = json.loads(buf[off: off + mlen].decode("utf-8"))
    if terminal_fn is None and "env" in manifest:
        from .envs import make_env

        terminal_fn = make_env(manifest["env"]).is_terminal
    terminal = terminal_fn(s_next) & done if terminal_fn is not None else done
    return ReplayBuffer.from_arrays(s, a, r, s_next, done, episode_id, terminal=terminal), manifest
