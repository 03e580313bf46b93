import sys

import pytest

from ttadapt import featurestore


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """Echo the acceptance verdict lines after the run, outside capture."""
    module = sys.modules.get("test_acceptance")
    verdicts = getattr(module, "VERDICTS", None)
    if verdicts:
        terminalreporter.write_sep("-", "acceptance gate")
        for line in verdicts:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def benchmark_manifest(tmp_path_factory):
    """The fixed synthetic benchmark: 10 classes, dim 64, 2000 samples,
    sigma 0.25, rotation 0.5 rad, seed 0."""
    out = tmp_path_factory.mktemp("benchmark")
    return featurestore.synth_generate(
        n_classes=10,
        dim=64,
        n_samples=2000,
        intra_class_sigma=0.25,
        shift=featurestore.ShiftSpec.rotation(0.5, seed=0),
        seed=0,
        out_dir=out,
    )


@pytest.fixture(scope="session")
def quick_manifest(tmp_path_factory):
    """A small labeled stream for fast pipeline checks."""
    out = tmp_path_factory.mktemp("quick")
    return featurestore.synth_generate(
        n_classes=6,
        dim=16,
        n_samples=200,
        intra_class_sigma=0.35,
        shift=featurestore.ShiftSpec.rotation(0.4, seed=1),
        seed=3,
        out_dir=out,
    )
