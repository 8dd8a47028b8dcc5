import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dimenet.datasynth import (
    BACKLIT_GAIN_HI,
    BACKLIT_GAIN_LO,
    LOWLIGHT_GAMMA,
    LOWLIGHT_NOISE,
    LOWLIGHT_SCALE,
    MANIFEST_COLUMNS,
    DegradationSpec,
    backlit_mask,
    build_dataset,
    degrade_backlit,
    degrade_lowlight,
    load_manifest_dataset,
    load_paired_dir,
    make_pair,
    read_manifest,
    synth_scenes,
)
from dimenet.errors import DatasetError
from dimenet.imaging import IlluminationLabel, save_image

LOW, BACK = IlluminationLabel.LowLight, IlluminationLabel.Backlit


def rand_img(seed=0, shape=(16, 16, 3)):
    return np.random.default_rng(seed).random(shape)


def test_lowlight_neutral_is_identity():
    img = rand_img()
    out = degrade_lowlight(img, DegradationSpec(LOW, gamma=1.0, scale=1.0, noise=0.0), np.random.default_rng(0))
    np.testing.assert_array_equal(out, img)


def test_lowlight_constant_formula():
    out = degrade_lowlight(np.ones((8, 8, 3)), DegradationSpec(LOW, gamma=2.0, scale=0.2, noise=0.0),
                           np.random.default_rng(0))
    np.testing.assert_allclose(out, 0.2, atol=1e-15)


def test_backlit_mask_extremes():
    img = rand_img(1)
    spec = DegradationSpec(BACK, g_hi=1.0, g_lo=0.3)
    np.testing.assert_array_equal(degrade_backlit(img, spec, None, mask=np.ones((16, 16))), img)
    np.testing.assert_allclose(degrade_backlit(img, spec, None, mask=np.zeros((16, 16))), 0.3 * img)


@pytest.mark.parametrize("kind", ["halfplane", "radial"])
def test_masks_are_smooth_and_two_sided(kind):
    m = backlit_mask((64, 64), kind, np.random.default_rng(4))
    assert m.min() >= 0 and m.max() <= 1
    assert m.min() < 0.2 and m.max() > 0.8
    assert np.abs(np.diff(m, axis=0)).max() < 0.2  # blurred, no hard edge


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), back=st.booleans())
def test_sampled_specs_in_range_and_outputs_in_unit_interval(seed, back):
    rng = np.random.default_rng(seed)
    s = make_pair(rand_img(seed % 1000), BACK if back else LOW, rng)
    assert s.degraded.min() >= 0 and s.degraded.max() <= 1
    assert s.degraded.shape == s.clean.shape
    assert s.label is s.spec.kind
    sp = s.spec
    if back:
        assert BACKLIT_GAIN_HI[0] <= sp.g_hi <= BACKLIT_GAIN_HI[1]
        assert BACKLIT_GAIN_LO[0] <= sp.g_lo <= BACKLIT_GAIN_LO[1]
        assert sp.mask in ("halfplane", "radial")
    else:
        assert LOWLIGHT_GAMMA[0] <= sp.gamma <= LOWLIGHT_GAMMA[1]
        assert LOWLIGHT_SCALE[0] <= sp.scale <= LOWLIGHT_SCALE[1]
        assert LOWLIGHT_NOISE[0] <= sp.noise <= LOWLIGHT_NOISE[1]


@pytest.fixture()
def clean_dir(tmp_path):
    d = tmp_path / "clean_src"
    d.mkdir()
    for i, img in enumerate(synth_scenes(8, 32, 3)):
        save_image(img, d / f"scene{i}.png")
    return d


def test_empty_request_writes_header_only(tmp_path, clean_dir):
    out = tmp_path / "out"
    assert build_dataset(clean_dir, 0, 0, 1, out) == []
    assert read_manifest(out / "manifest.tsv") == []
    assert (out / "manifest.tsv").read_text().split("\n")[0].split("\t") == MANIFEST_COLUMNS
    assert not (out / "degraded").exists()


def test_same_seed_byte_identical(tmp_path, clean_dir):
    build_dataset(clean_dir, 3, 3, 11, tmp_path / "a")
    build_dataset(clean_dir, 3, 3, 11, tmp_path / "b")
    assert (tmp_path / "a/manifest.tsv").read_bytes() == (tmp_path / "b/manifest.tsv").read_bytes()
    for name in sorted((tmp_path / "a/degraded").iterdir()):
        assert name.read_bytes() == (tmp_path / "b/degraded" / name.name).read_bytes()
    build_dataset(clean_dir, 3, 3, 12, tmp_path / "c")
    assert (tmp_path / "a/manifest.tsv").read_bytes() != (tmp_path / "c/manifest.tsv").read_bytes()


def test_128_pairs_from_8_images(tmp_path, clean_dir):
    rows = build_dataset(clean_dir, 64, 64, 0, tmp_path / "big")
    assert len(rows) == 128
    kinds = [r["kind"] for r in read_manifest(tmp_path / "big/manifest.tsv")]
    assert kinds.count("LowLight") == 64 and kinds.count("Backlit") == 64
    assert len(list((tmp_path / "big/degraded").iterdir())) == 128


def test_manifest_dataset_loads(tmp_path, clean_dir):
    build_dataset(clean_dir, 1, 1, 0, tmp_path / "m")
    samples = load_manifest_dataset(tmp_path / "m")
    assert [s.label for s in samples] == [LOW, BACK]
    row = read_manifest(tmp_path / "m/manifest.tsv")[0]
    assert row["g_hi"] == "-" and float(row["gamma"]) >= 1.5


def test_build_errors(tmp_path):
    (tmp_path / "empty").mkdir()
    with pytest.raises(DatasetError):
        build_dataset(tmp_path / "empty", 1, 1, 0, tmp_path / "o")
    with pytest.raises(DatasetError):
        build_dataset(tmp_path / "missing", 1, 1, 0, tmp_path / "o")


def write_pairs(root, names, shape=(8, 8, 3), seed=0):
    root.mkdir(parents=True, exist_ok=True)
    for i, n in enumerate(names):
        save_image(rand_img(seed + i, shape), root / n)


def test_identical_dirs_self_pair(tmp_path):
    write_pairs(tmp_path / "x", ["a.png", "b.png"])
    rep = load_paired_dir(tmp_path / "x", tmp_path / "x")
    assert len(rep.samples) == 2
    assert all(np.array_equal(s.degraded, s.clean) for s in rep.samples)
    assert all(s.spec == "real" for s in rep.samples)


def test_orphan_reported_others_loaded(tmp_path):
    write_pairs(tmp_path / "d", ["a.png", "b.png", "orphan.png"])
    write_pairs(tmp_path / "c", ["a.png", "b.png"])
    rep = load_paired_dir(tmp_path / "d", tmp_path / "c")
    assert len(rep.samples) == 2
    assert len(rep.orphans) == 1 and rep.orphans[0].endswith("orphan.png")


def test_size_mismatch_rejected_per_file(tmp_path):
    write_pairs(tmp_path / "d", ["a.png", "b.png"])
    write_pairs(tmp_path / "c", ["a.png"])
    write_pairs(tmp_path / "c", ["b.png"], shape=(4, 8, 3))
    rep = load_paired_dir(tmp_path / "d", tmp_path / "c")
    assert [s.name for s in rep.samples] == ["a"]
    assert len(rep.size_mismatch) == 1 and rep.size_mismatch[0].startswith("b.png")


def test_no_matches_and_duplicates_are_errors(tmp_path):
    write_pairs(tmp_path / "d", ["a.png"])
    write_pairs(tmp_path / "c", ["z.png"])
    with pytest.raises(DatasetError):
        load_paired_dir(tmp_path / "d", tmp_path / "c")
    write_pairs(tmp_path / "c", ["a.png", "a.PNG"])
    with pytest.raises(DatasetError, match="ambiguous"):
        load_paired_dir(tmp_path / "d", tmp_path / "c")


def test_lol_style_layout_fifteen_pairs(tmp_path):
    names = [f"{i}.png" for i in (1, 22, 23, 55, 79, 111, 146, 179, 493, 547, 665, 669, 748, 778, 780)]
    write_pairs(tmp_path / "eval15/low", names)
    write_pairs(tmp_path / "eval15/high", names, seed=100)
    rep = load_paired_dir(tmp_path / "eval15/low", tmp_path / "eval15/high")
    assert len(rep.samples) == 15 and not rep.orphans
