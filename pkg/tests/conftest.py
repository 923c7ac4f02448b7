import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, suppress_health_check=(HealthCheck.too_slow,))
settings.load_profile(os.getenv("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture(scope="session")
def backbone_dir(tmp_path_factory):
    """ResNet50 and VGG16 truncated at stages 1 and 2, exported once per session."""
    pytest.importorskip("torch")
    pytest.importorskip("torchvision")
    from cband.export import export_backbone

    out = tmp_path_factory.mktemp("backbones")
    for arch in ("resnet50", "vgg16"):
        for stage in (1, 2):
            export_backbone(arch, stage, str(out))
    return out


@pytest.fixture(scope="session")
def resnet_manifest(backbone_dir):
    return str(backbone_dir / "resnet50-stage2.json")


@pytest.fixture(scope="session")
def vgg_manifest(backbone_dir):
    return str(backbone_dir / "vgg16-stage2.json")


@pytest.fixture(scope="session")
def resnet(resnet_manifest):
    from cband.backbone import load_backbone

    return load_backbone(None, resnet_manifest)


@pytest.fixture(scope="session")
def vgg(vgg_manifest):
    from cband.backbone import load_backbone

    return load_backbone(None, vgg_manifest)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter, config):
    from test_acceptance import ACCEPTANCE_KEY

    rows = sorted(config.stash.get(ACCEPTANCE_KEY, []))
    if not rows:
        return
    terminalreporter.section("acceptance criteria")
    for number, ok, detail in rows:
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
