from pathlib import Path

import pytest

from fakeclip import TOYSET, FakeClipEncoder
from ttextract.extract import ExtractJob, extract


@pytest.fixture(scope="session")
def fake_encoder() -> FakeClipEncoder:
    return FakeClipEncoder(class_names=("cat", "dog"))


@pytest.fixture(scope="session")
def toyset_manifest(tmp_path_factory, fake_encoder) -> Path:
    """Toy fixture dataset extracted once with the fake ViT-B/16 encoder."""
    out_dir = tmp_path_factory.mktemp("toyset_features")
    job = ExtractJob(dataset_dir=TOYSET, backbone="ViT-B/16", out_dir=out_dir)
    return extract(job, encoder=fake_encoder)
