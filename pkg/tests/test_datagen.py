import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from taco.datagen import (
    COLOR_TABLE, MIXED, NUM_COLORS, AttributeLabel, DatagenConfig, DatasetManifest, FontSet,
    SegmentSpec, generate_dataset, load_corpus, render_segment, rule_thickness, validate_manifest,
)
from taco.errors import ConfigError, DataError, InvalidSpecError


@pytest.fixture(scope="module")
def fonts():
    return FontSet.from_dir(limit=4)


def label(font=0, color=0, **flags):
    return AttributeLabel(font, color, **flags)


def test_palette_has_fourteen_named_colors():
    assert NUM_COLORS == 14 == len(COLOR_TABLE)
    names = [n for n, _ in COLOR_TABLE.values()]
    assert names[:3] == ["black", "white", "red"]
    assert len(set(names)) == 14


def test_bundled_fonts(fonts):
    assert len(fonts) == 4
    assert len(set(fonts.table.values())) == 4


def test_single_label_two_chars(fonts):
    s = render_segment(SegmentSpec("Ab", (label(),) * 2), fonts, np.random.default_rng(0))
    assert [c.char for c in s.chars] == ["A", "b"]
    assert s.chars[0].x0 < s.chars[1].x0
    assert all(c.label == s.segment_label for c in s.chars)
    assert s.image.dtype == np.uint8 and s.image.ndim == 3 and s.image.shape[2] == 3


def test_mixed_fonts(fonts):
    labels = (label(font=0),) + (label(font=1),) * 3
    s = render_segment(SegmentSpec("TaCo", labels), fonts, np.random.default_rng(0))
    assert s.segment_label == MIXED
    assert len(s.chars) == 4
    assert len({c.label.font_id for c in s.chars}) == 2


def test_render_deterministic(fonts):
    spec = SegmentSpec("hello world", (label(2, 4, bold=True, underline=True),) * 10, 22)
    a = render_segment(spec, fonts, np.random.default_rng(11))
    b = render_segment(spec, fonts, np.random.default_rng(11))
    assert np.array_equal(a.image, b.image)
    assert a.chars == b.chars


def test_invalid_specs(fonts):
    rng = np.random.default_rng(0)
    with pytest.raises(InvalidSpecError):
        render_segment(SegmentSpec("   ", ()), fonts, rng)
    with pytest.raises(InvalidSpecError):
        render_segment(SegmentSpec("abc", (label(),)), fonts, rng)
    with pytest.raises(ConfigError, match="font_id 9"):
        render_segment(SegmentSpec("a", (label(font=9),)), fonts, rng)


def test_rule_thickness():
    assert [rule_thickness(s) for s in (10, 15, 23, 30, 45)] == [1, 1, 2, 2, 3]


def test_underline_adds_ink_below_baseline(fonts):
    rng = lambda: np.random.default_rng(3)
    plain = render_segment(SegmentSpec("ace", (label(color=0),) * 3, 24), fonts, rng())
    under = render_segment(SegmentSpec("ace", (label(color=0, underline=True),) * 3, 24),
                           fonts, rng())
    assert all(u.y1 > p.y1 for p, u in zip(plain.chars, under.chars))


def test_strike_marks_middle_of_short_glyphs(fonts):
    rng = lambda: np.random.default_rng(3)
    plain = render_segment(SegmentSpec("o", (label(),), 24), fonts, rng())
    strike = render_segment(SegmentSpec("o", (label(strike=True),), 24), fonts, rng())
    assert not np.array_equal(plain.image, strike.image)
    # strike sits inside the glyph's vertical extent, so the box height is unchanged
    assert (strike.chars[0].y0, strike.chars[0].y1) == (plain.chars[0].y0, plain.chars[0].y1)


labels_st = st.builds(AttributeLabel, st.integers(0, 3), st.integers(0, 13),
                      st.booleans(), st.booleans(), st.booleans(), st.booleans())
text_st = st.text(alphabet="abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789.,;!? ",
                  min_size=1, max_size=24).filter(lambda t: t.strip())


@settings(max_examples=1000, deadline=None)
@given(text_st, st.data(), st.integers(8, 40), st.integers(0, 2**32 - 1))
def test_boxes_in_bounds(fonts, text, data, size, seed):
    n = sum(not c.isspace() for c in text)
    labels = tuple(data.draw(st.lists(labels_st, min_size=n, max_size=n)))
    s = render_segment(SegmentSpec(text, labels, size), fonts, np.random.default_rng(seed))
    H, W = s.image.shape[:2]
    for c in s.chars:
        assert 0 <= c.x0 < c.x1 <= W and 0 <= c.y0 < c.y1 <= H
    assert [c.x0 for c in s.chars] == sorted(c.x0 for c in s.chars)
    if s.segment_label != MIXED:
        assert len({c.label for c in s.chars}) == 1
    else:
        assert len({c.label for c in s.chars}) >= 2


def test_generate_counts(tmp_path):
    m = generate_dataset(DatagenConfig(count=100), tmp_path / "a", seed=1)
    assert len(m.entries) == 100
    assert 8 <= sum(e.is_mixed for e in m.entries) <= 12
    m1 = generate_dataset(DatagenConfig(count=1, mixed_fraction=0.0), tmp_path / "b", seed=1)
    assert len(m1.entries) == 1 and m1.mixed_fraction == 0.0


def test_generate_deterministic(tmp_path):
    cfg = DatagenConfig(count=12)
    generate_dataset(cfg, tmp_path / "a", seed=5)
    generate_dataset(cfg, tmp_path / "b", seed=5)
    for rel in ["manifest.jsonl"] + [f"images/{i:06d}.png" for i in range(12)]:
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()


def test_workers_do_not_change_output(tmp_path):
    generate_dataset(DatagenConfig(count=8), tmp_path / "a", seed=2)
    generate_dataset(DatagenConfig(count=8, workers=2), tmp_path / "b", seed=2)
    assert (tmp_path / "a/manifest.jsonl").read_text() == (tmp_path / "b/manifest.jsonl").read_text()


def test_manifest_roundtrip_and_header(small_manifest):
    path = small_manifest.root / "manifest.jsonl"
    head = json.loads(path.read_text().splitlines()[0])
    assert {"version", "font_table", "color_table"} <= set(head)
    loaded = DatasetManifest.load(path)
    assert loaded.dumps() == small_manifest.dumps()
    assert loaded.mixed_fraction == sum(e.is_mixed for e in loaded.entries) / len(loaded.entries)


def test_fresh_manifest_is_valid(small_manifest):
    assert validate_manifest(small_manifest) == []


def _reload(m):
    return DatasetManifest.load(m.root / "manifest.jsonl")


def test_injected_bounds_fault(small_manifest):
    m = _reload(small_manifest)
    e = next(e for e in m.entries if not e.is_mixed)
    c = e.chars[0]
    e.chars[0] = type(c)(c.x0, c.y0, e.width + 3, c.y1, c.char, c.label)
    report = validate_manifest(m)
    assert [v.kind for v in report] == ["bounds"]


def test_injected_color_fault(small_manifest):
    m = _reload(small_manifest)
    i, e = next((i, e) for i, e in enumerate(m.entries) if not e.is_mixed)
    bad = AttributeLabel(e.segment_label.font_id, 14)
    e.segment_label = bad
    e.chars = [type(c)(c.x0, c.y0, c.x1, c.y1, c.char, bad) for c in e.chars]
    report = validate_manifest(m)
    assert [(v.kind, v.index) for v in report] == [("table", i)]


def test_missing_image_reported(small_manifest, tmp_path):
    m = _reload(small_manifest)
    m.root = tmp_path
    report = validate_manifest(m)
    assert {v.kind for v in report} == {"file"}
    assert len(report) == len(m.entries)


def test_empty_corpus(tmp_path):
    p = tmp_path / "c.txt"
    p.write_text("  \n")
    with pytest.raises(DataError, match="corpus is empty"):
        load_corpus(p)


def test_malformed_manifest(tmp_path):
    p = tmp_path / "m.jsonl"
    p.write_text('{"version": 1}\n')
    with pytest.raises(DataError):
        DatasetManifest.load(p)


def test_label_requires_all_fields():
    with pytest.raises(DataError, match="strike"):
        AttributeLabel.from_dict({"font_id": 0, "color_id": 0, "bold": 0, "italic": 0,
                                  "underline": 0})
