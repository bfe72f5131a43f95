import pytest

from xmodal4d.config import RunConfig
from xmodal4d.synth import SceneConfig

TINY_SCENE = SceneConfig(frames=8, points=64, height=16, width=16)


def tiny_config(**overrides) -> RunConfig:
    base = RunConfig(
        scene=TINY_SCENE, train_scenes=2, test_scenes=2, anchors=8, dim=8, point_layers=1,
        radius=0.5, neighbors=8, xmodal_layers=1, epochs=1, aug_views=2, warmup_epochs=0,
    )
    return base.with_overrides(**overrides)


@pytest.fixture
def tiny():
    return tiny_config


_VERDICTS: dict[int, tuple[bool, str]] = {}


def record_criterion(number: int, ok: bool, detail: str) -> None:
    _VERDICTS[number] = (ok, detail)


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_VERDICTS):
        ok, detail = _VERDICTS[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
