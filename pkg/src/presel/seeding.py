"""Derived random streams.

All randomness in the engine flows from one 64-bit root seed. Each stage (and
each task within a stage) gets its own counter-derived stream, so the draws a
component sees never depend on execution order or worker count.
"""

import numpy as np

_MASK64 = (1 << 64) - 1

# Stage counters. Values are part of the reproducibility contract: changing
# them changes every downstream draw.
STAGE_REF_SPLIT = 1
STAGE_KMEANS = 2
STAGE_BASELINE_RANDOM = 3
STAGE_SYNTH_STRUCTURE = 4
STAGE_SYNTH_FEATURES = 5
STAGE_SYNTH_LOSSES = 6


def derive_rng(seed: int, stage: int, index: int = 0) -> np.random.Generator:
    """Generator for (seed, stage, index); independent of call order."""
    ss = np.random.SeedSequence((int(seed) & _MASK64, int(stage), int(index)))
    return np.random.default_rng(ss)
