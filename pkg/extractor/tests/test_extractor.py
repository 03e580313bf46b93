"""Dataset enumeration, extraction, and alignment checks on the toy fixture."""

from __future__ import annotations

import numpy as np
import pytest

from fakeclip import TOYSET, FakeClipEncoder
from ttadapt import featurestore, pipeline
from ttadapt.config import TtaConfig
from ttextract.dataset import enumerate_imagefolder
from ttextract.encoders import BACKBONE_DIMS, resolve_encoder
from ttextract.errors import DatasetError, EncoderError
from ttextract.extract import ExtractJob, extract, verify_alignment


# ---------------------------------------------------------------------------
# dataset enumeration


def test_enumerate_toyset():
    folder = enumerate_imagefolder(TOYSET)
    assert folder.classes == ("cat", "dog")
    assert folder.n_images == 10
    assert folder.labels == (0,) * 5 + (1,) * 5
    assert [p.name for p in folder.paths[:5]] == [f"img_{i}.png" for i in range(5)]
    assert all(p.parent.name == "dog" for p in folder.paths[5:])


def test_enumerate_is_deterministic():
    a = enumerate_imagefolder(TOYSET)
    b = enumerate_imagefolder(TOYSET)
    assert a.paths == b.paths
    assert a.labels == b.labels


def test_enumerate_missing_root(tmp_path):
    with pytest.raises(DatasetError, match="not a directory"):
        enumerate_imagefolder(tmp_path / "nope")


def test_enumerate_needs_two_classes(tmp_path):
    (tmp_path / "only").mkdir()
    (tmp_path / "only" / "a.png").write_bytes(b"class=only idx=0\n")
    with pytest.raises(DatasetError, match="at least 2"):
        enumerate_imagefolder(tmp_path)


def test_enumerate_rejects_empty_class_dir(tmp_path):
    (tmp_path / "full").mkdir()
    (tmp_path / "full" / "a.png").write_bytes(b"class=full idx=0\n")
    (tmp_path / "empty").mkdir()
    with pytest.raises(DatasetError, match="no image files"):
        enumerate_imagefolder(tmp_path)


def test_enumerate_ignores_non_image_files(tmp_path):
    for cls in ("x", "y"):
        d = tmp_path / cls
        d.mkdir()
        (d / "a.png").write_bytes(f"class={cls} idx=0\n".encode())
        (d / "notes.txt").write_text("not an image")
    folder = enumerate_imagefolder(tmp_path)
    assert folder.n_images == 2
    assert all(p.suffix == ".png" for p in folder.paths)


# ---------------------------------------------------------------------------
# job validation


def test_job_rejects_unknown_backbone(tmp_path):
    with pytest.raises(EncoderError, match="unknown backbone"):
        ExtractJob(dataset_dir=TOYSET, backbone="ViT-L/14", out_dir=tmp_path)


def test_job_rejects_template_without_placeholder(tmp_path):
    with pytest.raises(EncoderError, match="placeholder"):
        ExtractJob(
            dataset_dir=TOYSET, backbone="ViT-B/16", out_dir=tmp_path,
            template="a photo of a cat.",
        )


def test_job_prompts_substitute_class_names(tmp_path):
    job = ExtractJob(dataset_dir=TOYSET, backbone="ViT-B/16", out_dir=tmp_path)
    assert job.prompts(("hermit_crab", "dog")) == [
        "a photo of a hermit crab.",
        "a photo of a dog.",
    ]


# ---------------------------------------------------------------------------
# extraction with the fake encoder


def test_extract_writes_valid_manifest(toyset_manifest):
    man = featurestore.load_manifest(toyset_manifest)
    assert man.dataset_name == "toyset"
    assert man.dim == 512
    assert man.classes == ("cat", "dog")
    count, dim = featurestore.read_feature_header(man.image_features)
    assert (count, dim) == (10, 512)
    count, dim = featurestore.read_feature_header(man.text_features)
    assert (count, dim) == (2, 512)
    labels = featurestore.load_label_file(man.labels, n_classes=2)
    assert labels.tolist() == [0] * 5 + [1] * 5


def test_extract_rows_are_unit_norm(toyset_manifest):
    man = featurestore.load_manifest(toyset_manifest)
    feats = featurestore.load_feature_file(man.image_features)
    text = featurestore.load_feature_file(man.text_features)
    assert np.linalg.norm(feats, axis=1) == pytest.approx(1.0, abs=1e-5)
    assert np.linalg.norm(text, axis=1) == pytest.approx(1.0, abs=1e-5)


def test_extract_resnet_width(tmp_path):
    # The RN50 tower is wider; the file headers must carry its dim.
    encoder = FakeClipEncoder(class_names=("cat", "dog"), dim=1024)
    job = ExtractJob(dataset_dir=TOYSET, backbone="ResNet-50", out_dir=tmp_path)
    manifest_path = extract(job, encoder=encoder)
    man = featurestore.load_manifest(manifest_path)
    assert man.dim == 1024
    assert featurestore.read_feature_header(man.image_features) == (10, 1024)


def test_extract_is_byte_deterministic(tmp_path, fake_encoder):
    outs = []
    for name in ("first", "second"):
        job = ExtractJob(
            dataset_dir=TOYSET, backbone="ViT-B/16", out_dir=tmp_path / name
        )
        outs.append(extract(job, encoder=fake_encoder))
    for filename in (
        "image_features.taf", "labels.tal", "text_features.taf", "manifest.json",
    ):
        first = (outs[0].parent / filename).read_bytes()
        second = (outs[1].parent / filename).read_bytes()
        assert first == second, filename


def test_extract_checks_dataset_before_encoder(tmp_path):
    # A broken layout must fail fast, not after a model load attempt.
    job = ExtractJob(
        dataset_dir=tmp_path / "missing", backbone="ResNet-50",
        out_dir=tmp_path / "out",
    )
    with pytest.raises(DatasetError):
        extract(job)


def test_extract_rejects_encoder_dim_mismatch(tmp_path):
    job = ExtractJob(dataset_dir=TOYSET, backbone="ViT-B/16", out_dir=tmp_path)
    with pytest.raises(EncoderError, match="dim 16"):
        extract(job, encoder=FakeClipEncoder(class_names=("cat", "dog"), dim=16))


class _NanImageEncoder(FakeClipEncoder):
    def encode_images(self, paths):
        rows = super().encode_images(paths)
        rows[0, 0] = np.nan
        return rows


class _ZeroTextEncoder(FakeClipEncoder):
    def encode_texts(self, prompts):
        rows = super().encode_texts(prompts)
        rows[-1] = 0.0
        return rows


class _ShortImageEncoder(FakeClipEncoder):
    def encode_images(self, paths):
        return super().encode_images(paths)[:-1]


def test_extract_rejects_non_finite_rows(tmp_path):
    job = ExtractJob(dataset_dir=TOYSET, backbone="ViT-B/16", out_dir=tmp_path)
    with pytest.raises(EncoderError, match="non-finite"):
        extract(job, encoder=_NanImageEncoder(class_names=("cat", "dog")))


def test_extract_rejects_zero_rows(tmp_path):
    job = ExtractJob(dataset_dir=TOYSET, backbone="ViT-B/16", out_dir=tmp_path)
    with pytest.raises(EncoderError, match="near-zero"):
        extract(job, encoder=_ZeroTextEncoder(class_names=("cat", "dog")))


def test_extract_rejects_wrong_row_count(tmp_path):
    job = ExtractJob(dataset_dir=TOYSET, backbone="ViT-B/16", out_dir=tmp_path)
    with pytest.raises(EncoderError, match="shape"):
        extract(job, encoder=_ShortImageEncoder(class_names=("cat", "dog")))


# ---------------------------------------------------------------------------
# alignment verification


def test_verify_aligned_manifest(toyset_manifest):
    report = verify_alignment(toyset_manifest)
    assert report.dataset_name == "toyset"
    assert report.n_images == 10
    assert report.n_classes == 2
    assert report.chance == 0.5
    assert report.top1 == 1.0
    assert not report.flagged


def _clone_feature_dir(src_manifest, dst_dir):
    dst_dir.mkdir()
    for item in src_manifest.parent.iterdir():
        (dst_dir / item.name).write_bytes(item.read_bytes())
    return dst_dir / "manifest.json"


def test_verify_flags_swapped_text_rows(toyset_manifest, tmp_path):
    bad_manifest = _clone_feature_dir(toyset_manifest, tmp_path / "swapped")
    text_path = bad_manifest.parent / "text_features.taf"
    text = featurestore.load_feature_file(text_path)
    featurestore.write_feature_file(text_path, text[::-1].copy())
    report = verify_alignment(bad_manifest)
    assert report.top1 == 0.0
    assert report.flagged


def test_verify_unlabeled_is_not_flagged(toyset_manifest, tmp_path):
    blind_manifest = _clone_feature_dir(toyset_manifest, tmp_path / "blind")
    featurestore.write_label_file(
        blind_manifest.parent / "labels.tal", np.full(10, -1, dtype=np.int32)
    )
    report = verify_alignment(blind_manifest)
    assert report.top1 is None
    assert not report.flagged


def test_verify_report_to_dict(toyset_manifest):
    d = verify_alignment(toyset_manifest).to_dict()
    assert list(d) == [
        "dataset_name", "n_images", "n_classes", "top1", "chance", "flagged",
    ]


# ---------------------------------------------------------------------------
# pretrained encoder resolution (no weights available here; errors must
# name the missing resource)


def test_resolve_unknown_backbone():
    with pytest.raises(EncoderError, match="ResNet-50, ViT-B/16"):
        resolve_encoder("ViT-H/14")


def test_resolve_resnet50_names_runtime():
    with pytest.raises(EncoderError, match="open_clip"):
        resolve_encoder("ResNet-50")


def test_resolve_vit_names_checkpoint(monkeypatch):
    monkeypatch.setenv("TRANSFORMERS_OFFLINE", "1")
    monkeypatch.setenv("HF_HUB_OFFLINE", "1")
    with pytest.raises(EncoderError, match="openai/clip-vit-base-patch16"):
        resolve_encoder("ViT-B/16")


def test_backbone_dims_registry():
    assert BACKBONE_DIMS == {"ResNet-50": 1024, "ViT-B/16": 512}


# ---------------------------------------------------------------------------
# interop: the streaming engine runs directly on extracted output


def test_engine_consumes_extracted_features(toyset_manifest):
    config = TtaConfig(seed=0)
    report = pipeline.run_stream(toyset_manifest, config)
    assert report.n_samples == 10
    assert report.zero_shot_top1 == 1.0
    assert report.overall_top1 == 1.0
    assert report.config["gamma"] == config.gamma
