"""Counter-based random streams addressed by tree node.

Every node of the b-ary tree owns one 4-word Philox block, addressed by its
global breadth-first index.  A draw therefore depends only on
(seed, replica, node), never on traversal order or thread count, so the
depth-first evaluator, the brute-force path enumerator, and partial
resampling all see the same environment realization.

Two stream families share the Philox key space without collision:

* ``TreeStream``  -- key carries (seed, replica); counter = node index.
  One key per replica; blocks for a contiguous node range come from one
  ``random_raw`` call.
* ``BatchStream`` -- key carries (seed, namespace bit); counter packs the
  node index into the high word and the replica into the low word, so all
  replicas of one node are contiguous.  Used by the moment verifiers where
  replicas are many and trees are small.

The replica field of ``TreeStream`` is masked to 63 bits; ``BatchStream``
sets bit 63 of the same key word, so the families never share a key.
"""

from __future__ import annotations

import numpy as np
from numpy.random import Philox

_MASK63 = (1 << 63) - 1
_MASK64 = (1 << 64) - 1
_U53 = float(2.0**-53)

# Sequential draws (plain i.i.d. sampling detached from any tree) live in
# counter region >= 2^64; node indices stay far below under any budget.
_SEQ_BASE = 1 << 64


def node_offset(b: int, g: int) -> int:
    """Global index of the first node at generation g (root = generation 0)."""
    return (b**g - 1) // (b - 1)


def _raw_blocks(key: int, counter: int, count: int) -> np.ndarray:
    """count consecutive 4-word Philox blocks starting at counter."""
    raw = Philox(key=key, counter=counter).random_raw(4 * count)
    return raw.reshape(count, 4)


class TreeStream:
    """Node-addressed stream for one (seed, replica) pair."""

    def __init__(self, seed: int, replica: int):
        self.seed = int(seed)
        self.replica = int(replica)
        self._key = ((self.seed & _MASK64) << 64) | (self.replica & _MASK63)
        self._cursor = _SEQ_BASE

    def node_block(self, b: int, g: int, i0: int, count: int) -> np.ndarray:
        """Raw words for nodes i0 .. i0+count-1 of generation g, shape (count, 4)."""
        return _raw_blocks(self._key, node_offset(b, g) + i0, count)

    def seq_block(self, count: int) -> np.ndarray:
        """Raw words for the next `count` sequential draws, shape (count, 4)."""
        out = _raw_blocks(self._key, self._cursor, count)
        self._cursor += count
        return out


class BatchStream:
    """Node-addressed stream vectorized across replicas (counter-transposed)."""

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._key = ((self.seed & _MASK64) << 64) | (1 << 63)

    def node_block(self, b: int, g: int, i: int, r0: int, count: int) -> np.ndarray:
        """Raw words for node (g, i) in replicas r0 .. r0+count-1, shape (count, 4)."""
        counter = ((node_offset(b, g) + i) << 64) | r0
        return _raw_blocks(self._key, counter, count)


def to_uniform(raw: np.ndarray) -> np.ndarray:
    """Map uint64 words to uniforms in [0, 1) with 53-bit resolution."""
    return (raw >> np.uint64(11)).astype(np.float64) * _U53


def normal_pair(raw0: np.ndarray, raw1: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Two standard normals per word pair via Box-Muller."""
    u1 = to_uniform(raw0)
    u2 = to_uniform(raw1)
    rho = np.sqrt(-2.0 * np.log1p(-u1))
    ang = (2.0 * np.pi) * u2
    return rho * np.cos(ang), rho * np.sin(ang)
