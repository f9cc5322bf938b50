"""Subarray row splits, energy-based trimming and secondary (hierarchical) splits."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .model import ChannelRealization


@dataclass(frozen=True)
class SubarrayPartition:
    """Contiguous row blocks of the array; ``sizes[c]`` antennas start at ``offsets[c]``."""

    sizes: tuple[int, ...]
    offsets: tuple[int, ...]

    def __post_init__(self):
        if not self.sizes or min(self.sizes) < 1:
            raise ValueError("every subarray needs at least one antenna")
        expected = tuple(int(v) for v in np.concatenate([[0], np.cumsum(self.sizes)[:-1]]))
        if tuple(self.offsets) != expected:
            raise ValueError("offsets must be contiguous and ordered")

    @classmethod
    def from_sizes(cls, sizes) -> "SubarrayPartition":
        sizes = tuple(int(s) for s in sizes)
        offsets = tuple(int(v) for v in np.concatenate([[0], np.cumsum(sizes)[:-1]]))
        return cls(sizes, offsets)

    @property
    def n_antennas(self) -> int:
        return int(sum(self.sizes))

    @property
    def n_subarrays(self) -> int:
        return len(self.sizes)

    @property
    def uniform(self) -> bool:
        return len(set(self.sizes)) == 1

    def slices(self) -> list[slice]:
        return [slice(o, o + s) for o, s in zip(self.offsets, self.sizes)]

    def split(self, a: np.ndarray) -> list[np.ndarray]:
        """Row blocks of ``a`` (channel matrix or receive vector)."""
        if a.shape[0] != self.n_antennas:
            raise ValueError(f"expected {self.n_antennas} rows, got {a.shape[0]}")
        return [a[s] for s in self.slices()]

    def stack(self, a: np.ndarray) -> np.ndarray:
        """Blocks stacked on a new leading axis; requires equal sizes."""
        if not self.uniform:
            raise ValueError("stacking requires equal subarray sizes")
        return a.reshape(self.n_subarrays, self.sizes[0], *a.shape[1:])


def partition_uniform(n: int, subarray_size: int) -> SubarrayPartition:
    if subarray_size < 1 or n % subarray_size:
        raise ValueError(f"subarray size {subarray_size} does not divide N={n}")
    return SubarrayPartition.from_sizes([subarray_size] * (n // subarray_size))


def reassemble(blocks: list[np.ndarray]) -> np.ndarray:
    return np.concatenate(blocks, axis=0)


@dataclass(frozen=True, eq=False)
class TrimmedPartition:
    """Per-subarray served-user sets and the matching column-trimmed channels.

    ``served[c]`` is sorted ascending; ``serving_of_user[k]`` lists the
    subarrays whose served set contains ``k``. ``zero_energy_users`` flags users
    whose channel column was identically zero.
    """

    base: SubarrayPartition
    served: tuple[np.ndarray, ...]
    trimmed_h: tuple[np.ndarray, ...]
    serving_of_user: tuple[np.ndarray, ...]
    n_users: int
    zero_energy_users: tuple[int, ...] = ()

    @property
    def n_served(self) -> np.ndarray:
        return np.array([len(s) for s in self.served])

    @property
    def is_full(self) -> bool:
        return all(len(s) == self.n_users for s in self.served)

    def summary(self) -> str:
        lines = [f"subarrays={self.base.n_subarrays} users={self.n_users} total_served={int(self.n_served.sum())}"]
        for c, (o, size, s) in enumerate(zip(self.base.offsets, self.base.sizes, self.served)):
            users = ",".join(str(int(k)) for k in s) if len(s) else "-"
            lines.append(f"c={c} rows={o}:{o + size} K_c={len(s)} users={users}")
        if self.zero_energy_users:
            lines.append("zero_energy_users=" + ",".join(map(str, self.zero_energy_users)))
        return "\n".join(lines) + "\n"


def _from_served(h: np.ndarray, part: SubarrayPartition, served, zero_users=()) -> TrimmedPartition:
    k = h.shape[1]
    served = tuple(np.asarray(sorted(s), dtype=np.int64) for s in served)
    blocks = part.split(h)
    trimmed = tuple(np.ascontiguousarray(b[:, s]) for b, s in zip(blocks, served))
    serving = tuple(
        np.array([c for c, s in enumerate(served) if u in set(s.tolist())], dtype=np.int64) for u in range(k)
    )
    return TrimmedPartition(part, served, trimmed, serving, k, tuple(zero_users))


def full_service(h: ChannelRealization | np.ndarray, part: SubarrayPartition) -> TrimmedPartition:
    """Every subarray serves every user (no trimming)."""
    hm = h.h if isinstance(h, ChannelRealization) else np.asarray(h)
    k = hm.shape[1]
    return _from_served(hm, part, [range(k)] * part.n_subarrays)


def subarray_energies(h: np.ndarray, part: SubarrayPartition) -> np.ndarray:
    """``e[c, k] = ||H_c[:, k]||^2``."""
    return np.stack([np.sum(np.abs(b) ** 2, axis=0) for b in part.split(h)])


def trim(h: ChannelRealization | np.ndarray, part: SubarrayPartition, power_threshold: float) -> TrimmedPartition:
    """Keep, for each user, the fewest strongest subarrays holding ``power_threshold`` of its energy.

    Subarrays are ranked per user by column energy (descending, ties to the
    lower index); the minimal prefix reaching the threshold fraction of that
    user's total energy serves the user.
    """
    if not 0.0 < power_threshold <= 1.0:
        raise ValueError(f"power threshold must lie in (0, 1], got {power_threshold}")
    hm = h.h if isinstance(h, ChannelRealization) else np.asarray(h)
    energy = subarray_energies(hm, part)
    n_sub, k = energy.shape
    served: list[list[int]] = [[] for _ in range(n_sub)]
    zero_users = []
    for u in range(k):
        e = energy[:, u]
        order = np.lexsort((np.arange(n_sub), -e))
        cum = np.cumsum(e[order])
        total = cum[-1]
        if total <= 0.0:
            zero_users.append(u)
            served[int(order[0])].append(u)
            continue
        need = int(np.searchsorted(cum, power_threshold * total, side="left")) + 1
        for c in order[:need]:
            served[int(c)].append(u)
    if zero_users:
        warnings.warn(f"users {zero_users} have all-zero channels; assigned to a single subarray", RuntimeWarning)
    return _from_served(hm, part, served, zero_users)


@dataclass(frozen=True)
class Hierarchy:
    """Secondary block sizes inside each subarray."""

    secondary_sizes: tuple[tuple[int, ...], ...]

    @property
    def n_secondary(self) -> tuple[int, ...]:
        return tuple(len(s) for s in self.secondary_sizes)


def split_hierarchy(part: SubarrayPartition, secondary_size: int) -> Hierarchy:
    if secondary_size < 1 or any(n_c % secondary_size for n_c in part.sizes):
        raise ValueError(f"secondary size {secondary_size} does not divide every subarray size {part.sizes}")
    return Hierarchy(tuple((secondary_size,) * (n_c // secondary_size) for n_c in part.sizes))


def flatten_hierarchy(part: SubarrayPartition, hierarchy: Hierarchy) -> tuple[SubarrayPartition, np.ndarray]:
    """Flat partition over secondary blocks plus the parent subarray of each block."""
    if len(hierarchy.secondary_sizes) != part.n_subarrays:
        raise ValueError("hierarchy does not match partition")
    sizes, parent = [], []
    for c, (n_c, sec) in enumerate(zip(part.sizes, hierarchy.secondary_sizes)):
        if sum(sec) != n_c:
            raise ValueError(f"secondary sizes {sec} do not sum to N_c={n_c}")
        sizes.extend(sec)
        parent.extend([c] * len(sec))
    return SubarrayPartition.from_sizes(sizes), np.asarray(parent, dtype=np.int64)
