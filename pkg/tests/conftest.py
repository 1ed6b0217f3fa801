"""Shared fixtures: synthetic slides are session-scoped (generation is the
slow part) and opened per test."""

import pytest

from tilestream.container import CODEC_RAW, Slide, SynthSpec, synth_slide


@pytest.fixture(scope="session")
def small_slide_path(tmp_path_factory):
    path = tmp_path_factory.mktemp("slides") / "small.tilestream"
    synth_slide(
        SynthSpec(seed=101, width_px=2048, height_px=1536,
                  layer_downsamples=(1, 4), pattern="mixed"),
        path, codec=CODEC_RAW,
    ).close()
    return path


@pytest.fixture(scope="session")
def wide_slide_path(tmp_path_factory):
    path = tmp_path_factory.mktemp("slides") / "wide.tilestream"
    synth_slide(
        SynthSpec(seed=202, width_px=4096, height_px=2048,
                  layer_downsamples=(1, 4, 16), pattern="mixed"),
        path, codec=CODEC_RAW,
    ).close()
    return path


@pytest.fixture
def small_slide(small_slide_path):
    slide = Slide(small_slide_path)
    yield slide
    slide.close()
