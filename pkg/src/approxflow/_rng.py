"""Counter-based random streams keyed by (seed, stage, index).

Every consumer of randomness derives its own Philox stream, so results do
not depend on the order in which partitions are processed.
"""

import numpy as np

STAGE_PARTITIONS = 0
STAGE_ITEMS = 1
STAGE_PILOT = 2
STAGE_ASRS = 3
STAGE_SYNTH = 4
STAGE_SAMPLE_OP = 16  # + position of the Sample op in the chain

_MASK64 = (1 << 64) - 1


def stream(seed, stage, index=0):
    """Return an independent generator for ``(seed, stage, index)``."""
    key = [int(seed) & _MASK64, int(stage), int(index)]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(key)))
