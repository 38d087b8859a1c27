import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or report.when not in ("setup", "call"):
        return
    n = marker.args[0]
    ok = report.passed if report.when == "call" else not report.failed
    prev = _CRITERIA.get(n, True)
    if report.when == "call" or not ok:
        _CRITERIA[n] = prev and ok


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        terminalreporter.write_line(f"criterion {n}: {'PASS' if _CRITERIA[n] else 'FAIL'}")


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def tiny_config(**changes):
    """A model and dataset small enough for full training runs inside unit tests."""
    from depthkd.data import SceneSpec
    from depthkd.models import ModelConfig
    from depthkd.train import TrainConfig
    model = ModelConfig(student_widths=(4, 8, 8, 16), teacher_widths=(8, 8, 16, 16), teacher_heads=2,
                        decoder_channels=8, n_bins=4, fam_head_dim=8)
    data = SceneSpec(height=32, width=32, n_train=12, n_val=4)
    base = dict(epochs=2, warmup_epochs=1, batch=4, lr_start=1e-3, lr_end=1e-4, teacher_epochs=2,
                model=model, data=data, lambda_kd=0.5)
    base.update(changes)
    return TrainConfig(**base)


@pytest.fixture(scope="session")
def tiny_data():
    from depthkd.train.loop import load_data
    return load_data(tiny_config())


@pytest.fixture(scope="session")
def tiny_teacher(tiny_data):
    from depthkd.train import train_teacher
    return train_teacher(tiny_config(), *tiny_data)
