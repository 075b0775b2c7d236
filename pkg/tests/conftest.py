import numpy as np
import pytest

from presel.data import SampleRecord, build_manifest


def manifest_from(spec):
    """Build a manifest from (sample_id, task_ids, is_reference, text_only) tuples.

    Shorter tuples default the trailing flags to False.
    """
    records = []
    for row in spec:
        sid, tasks = row[0], row[1]
        is_ref = row[2] if len(row) > 2 else False
        text_only = row[3] if len(row) > 3 else False
        records.append(
            SampleRecord(
                sample_id=sid,
                task_ids=tuple(tasks),
                is_reference=is_ref,
                text_only=text_only,
            )
        )
    return build_manifest(records)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_manifest():
    return manifest_from(
        [
            ("s0", ["A"]),
            ("s1", ["A"], True),
            ("s2", ["B"]),
            ("s3", ["A", "B"]),
            ("s4", ["B"], True),
        ]
    )
