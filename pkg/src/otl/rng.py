"""Counter-based random streams.

Every random draw in the package comes from a Philox generator keyed by
``(seed, stream...)``. A stream is a tuple of labels (strings or
non-negative ints) that names what the draws are for, e.g.
``("census", 17)`` for restart 17 of a census. Two different labels give
statistically independent streams, and the same label always gives the same
numbers regardless of how the work is split across processes.
"""
import hashlib

import numpy as np

__all__ = ["make_rng", "stream_key"]


def _word(label):
    if isinstance(label, (bool, np.bool_)):
        raise TypeError("stream labels must be str or int")
    if isinstance(label, (int, np.integer)):
        if label < 0:
            raise ValueError(f"negative stream label {label}")
        return int(label)
    if isinstance(label, str):
        # stable across interpreter runs, unlike hash()
        h = hashlib.sha256(label.encode("utf-8")).digest()
        return int.from_bytes(h[:8], "little")
    raise TypeError(f"unsupported stream label {label!r}")


def stream_key(*labels):
    """Map stream labels to the integer spawn key used by SeedSequence."""
    return tuple(_word(s) for s in labels)


def make_rng(seed, *stream):
    """Return a Philox-backed Generator for ``seed`` and stream labels.

    Parameters
    ----------
    seed : int
        Non-negative master seed.
    *stream : str or int
        Labels selecting an independent sub-stream.

    Examples
    --------
    >>> a = make_rng(0, "restart", 3).standard_normal(2)
    >>> b = make_rng(0, "restart", 3).standard_normal(2)
    >>> bool((a == b).all())
    True
    """
    seed = int(seed)
    if seed < 0:
        raise ValueError("seed must be non-negative")
    ss = np.random.SeedSequence(entropy=seed, spawn_key=stream_key(*stream))
    return np.random.Generator(np.random.Philox(ss))
