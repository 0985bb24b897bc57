"""Counter-based random streams.

Algorithm
---------
Each stream is a Philox4x64-10 counter generator (numpy's ``Philox``) whose
128-bit key is the first 16 bytes of ``BLAKE2b(repr(seed) | stream_id)``,
with the counter starting at zero. Because the key depends only on
``(seed, stream_id)``, a stream yields the same numbers no matter how many
other streams were consumed before it, which keeps masking and noise
independent of processing order.

* uniforms: ``((x >> 11) + 0.5) * 2**-53`` for each raw 64-bit word ``x``,
  giving doubles strictly inside ``(0, 1)``;
* normals: Box-Muller on consecutive uniform pairs ``(u1, u2)``:
  ``sqrt(-2 ln u1) * cos(2 pi u2)`` and ``sqrt(-2 ln u1) * sin(2 pi u2)``.
"""

from __future__ import annotations

import hashlib

import numpy as np

_TWO_M53 = 2.0 ** -53


def stream_key(seed: int, stream_id) -> int:
    if isinstance(stream_id, (tuple, list)):
        stream_id = "/".join(str(s) for s in stream_id)
    digest = hashlib.blake2b(f"{int(seed)}|{stream_id}".encode("utf-8"), digest_size=16).digest()
    return int.from_bytes(digest, "little")


class RngStream:
    """Deterministic stream of uniforms and standard normals."""

    def __init__(self, seed: int, stream_id=""):
        self.seed = int(seed)
        self.stream_id = stream_id
        self._bits = np.random.Philox(key=stream_key(seed, stream_id))

    def raw(self, n: int) -> np.ndarray:
        return self._bits.random_raw(int(n))

    def uniform(self, size=None) -> np.ndarray | float:
        n = 1 if size is None else int(np.prod(size))
        u = ((self.raw(n) >> np.uint64(11)).astype(np.float64) + 0.5) * _TWO_M53
        return float(u[0]) if size is None else u.reshape(size)

    def normal(self, size=None) -> np.ndarray | float:
        n = 1 if size is None else int(np.prod(size))
        m = (n + 1) // 2
        u = self.uniform(2 * m)
        r = np.sqrt(-2.0 * np.log(u[0::2]))
        theta = 2.0 * np.pi * u[1::2]
        z = np.empty(2 * m)
        z[0::2] = r * np.cos(theta)
        z[1::2] = r * np.sin(theta)
        z = z[:n]
        return float(z[0]) if size is None else z.reshape(size)

    def permutation(self, n: int) -> np.ndarray:
        return np.argsort(self.uniform(n), kind="stable")


def rng_stream(seed: int, stream_id="") -> RngStream:
    return RngStream(seed, stream_id)
