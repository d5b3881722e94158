import numpy as np
import pytest

from sem_tsr.synth import SynthConfig, has_spanning_cell, synth_table


def test_deterministic_per_seed():
    cfg = SynthConfig(seed=3)
    a_img, a_ann = synth_table(cfg, 11)
    b_img, b_ann = synth_table(cfg, 11)
    assert a_img.tobytes() == b_img.tobytes()
    assert a_ann == b_ann
    c_img, _ = synth_table(cfg, 12)
    assert c_img.shape != a_img.shape or c_img.tobytes() != a_img.tobytes()


def test_no_spans_when_probability_zero():
    cfg = SynthConfig(span_prob=0.0)
    for s in range(30):
        _, ann = synth_table(cfg, s)
        assert all(c.rowspan == c.colspan == 1 for c in ann.cells)


def test_image_format_and_limits():
    cfg = SynthConfig(max_size=(256, 256))
    for s in range(20):
        img, ann = synth_table(cfg, s)
        assert img.dtype == np.uint8 and img.ndim == 3 and img.shape[2] == 3
        assert img.shape[:2] == ann.image_size
        assert min(img.shape[:2]) >= 32 and max(img.shape[:2]) <= 256


def test_default_corpus_has_spanning_tables():
    cfg = SynthConfig()
    frac = np.mean([has_spanning_cell(synth_table(cfg, s)[1]) for s in range(200)])
    assert frac >= 0.3


def test_text_render_and_multiline():
    cfg = SynthConfig(render="text", multiline_prob=1.0, span_prob=0.5)
    img, ann = synth_table(cfg, 0)
    assert img.std() > 0
    assert any(len(c.content_boxes or ()) > 1 for c in ann.cells)


@pytest.mark.parametrize("bad", [dict(span_prob=1.5), dict(rows=(4, 2)), dict(render="ink")])
def test_bad_config_rejected(bad):
    with pytest.raises(ValueError):
        SynthConfig(**bad)


def test_config_roundtrip():
    cfg = SynthConfig(rows=(3, 6), seed=9)
    assert SynthConfig.from_dict(cfg.to_dict()) == cfg


def test_ruling_style_changes_pixels_only():
    with pytest.raises(ValueError):
        SynthConfig(ruling_style="dotted")
    grid_img, grid_ann = synth_table(SynthConfig(ruling_prob=1.0, ruling_style="grid"), 3)
    head_img, head_ann = synth_table(SynthConfig(ruling_prob=1.0, ruling_style="header"), 3)
    assert [(c.span, c.bbox) for c in grid_ann.cells] == [(c.span, c.bbox) for c in head_ann.cells]
    assert not np.array_equal(grid_img, head_img)
    # every cell outline is drawn: the left edge of each cell is dark over its full height
    for c in grid_ann.cells:
        b = c.bbox
        col = grid_img[int(b.y1) + 1:int(b.y2), int(b.x1), 0].astype(float)
        assert col.mean() < 180
