"""Deterministic random streams.

All randomness in the package flows through counter-based Philox-4x64-10
generators keyed by ``(seed, stream_id)`` with the 256-bit counter set from a
step index. The same (seed, stream, step) triple therefore yields the same
draws on every platform and in every process, which is what makes whole
experiment runs byte-reproducible.

Stream ids are small integers; the registry below is the single source of
truth so that two subsystems never collide on a stream.
"""

from __future__ import annotations

import numpy as np

# Stream registry. Never renumber; add new ids at the end.
STREAM_INIT = 1          # parameter initialization
STREAM_DATA_TRAIN = 2    # synthetic training data
STREAM_DATA_TEST = 3     # synthetic test data
STREAM_BATCH = 4         # mini-batch index sampling
STREAM_POWER = 5         # power-iteration start vectors
STREAM_SDE_NOISE = 6     # Brownian increments / sampled diffusion draws
STREAM_PROBE = 7         # spectral probes during metric logging
STREAM_HUTCH = 8         # Hutchinson trace probe vectors
STREAM_EVAL_BATCH = 9    # evaluation-batch selection at probe steps


def stream(seed: int, stream_id: int, step: int = 0) -> np.random.Generator:
    """Return a fresh Generator for the (seed, stream_id, step) triple.

    The Philox key is (seed, stream_id) and the counter starts at
    (step, 0, 0, 0), so streams at different steps are independent and
    reproducible without sequential advancement.
    """
    if seed < 0 or stream_id < 0 or step < 0:
        raise ValueError("seed, stream_id and step must be nonnegative")
    bitgen = np.random.Philox(key=np.array([seed, stream_id], dtype=np.uint64),
                              counter=np.array([step, 0, 0, 0], dtype=np.uint64))
    return np.random.Generator(bitgen)
