"""Named random sub-streams derived from a single integer seed."""
import hashlib
import zlib

import numpy as np

STREAMS = ("init", "mc", "mc-eval", "order", "thinning", "bootstrap", "data", "split")


def stream(seed: int, name: str, *extra: int) -> np.random.Generator:
    """Independent generator for ``name``; ``extra`` integers index sub-sub-streams
    (epoch, sequence number, ...)."""
    key = zlib.crc32(name.encode("utf-8"))
    return np.random.default_rng([int(seed) & 0xFFFFFFFF, key, *(int(e) for e in extra)])


def sequence_key(seq) -> tuple:
    """Stream key taken from a sequence's content, so per-sequence draws do not depend on dataset order."""
    h = hashlib.sha256(np.float64(seq.T).tobytes() + np.asarray(seq.times, dtype="<f8").tobytes()
                       + "\x00".join(seq.types).encode("utf-8")).digest()
    return tuple(int(x) for x in np.frombuffer(h[:16], dtype="<u4"))
