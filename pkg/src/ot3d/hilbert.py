"""Hilbert-curve ordering of 3D point sets.

Coordinates are quantized to a 21-bit lattice (63 key bits fit an
int64), converted axes -> transpose with Skilling's bit transform, and
bit-interleaved into a single sort key.  Used to give tet partitions
and site batches spatial locality.
"""

import numpy as np

BITS = 21


def hilbert_keys(points, bits=BITS):
    """Hilbert index of each point on the quantized lattice, as uint64."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError("points must be (n, 3)")
    n = pts.shape[0]
    if n == 0:
        return np.zeros(0, dtype=np.uint64)
    lo = pts.min(axis=0)
    extent = pts.max(axis=0) - lo
    extent[extent == 0.0] = 1.0
    side = (1 << bits) - 1
    x = np.rint((pts - lo) / extent * side).astype(np.uint64)

    # Skilling, axes to transpose: after this loop the Hilbert index is
    # the bit interleave of the three columns, most significant first.
    q = np.uint64(1) << np.uint64(bits - 1)
    one = np.uint64(1)
    while q > one:
        p = q - one
        for i in range(3):
            hi = (x[:, i] & q) != 0
            x[hi, 0] ^= p
            lo_rows = ~hi
            t = (x[lo_rows, 0] ^ x[lo_rows, i]) & p
            x[lo_rows, 0] ^= t
            x[lo_rows, i] ^= t
        q >>= one
    x[:, 1] ^= x[:, 0]
    x[:, 2] ^= x[:, 1]
    t = np.zeros(n, dtype=np.uint64)
    q = np.uint64(1) << np.uint64(bits - 1)
    while q > one:
        hi = (x[:, 2] & q) != 0
        t[hi] ^= q - one
        q >>= one
    x ^= t[:, None]

    key = np.zeros(n, dtype=np.uint64)
    for b in range(bits - 1, -1, -1):
        sb = np.uint64(b)
        for i in range(3):
            key = (key << one) | ((x[:, i] >> sb) & one)
    return key


def hilbert_order(points, bits=BITS):
    """Permutation sorting points along the Hilbert curve, ties by index."""
    return np.argsort(hilbert_keys(points, bits), kind="stable")
