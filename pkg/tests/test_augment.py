import numpy as np
import pytest
from hypothesis import given, strategies as st

from lensinspect.augment import (
    AugmentRanges,
    AugmentSpec,
    apply_spec,
    augment_dataset,
    flip,
    gaussian_blur,
    gaussian_kernel,
    rotate,
    shift,
)
from lensinspect.data import Annotation, load_dataset, parse_label_file

from fixtures import make_synthetic_dataset
from oracles import gaussian_blur_dense, rotate_box_corners


def _image(seed=0, h=48, w=64):
    rng = np.random.default_rng(seed)
    return rng.integers(0, 255, (h, w, 3), dtype=np.uint8)


def _interior_annotations(seed=0, count=4):
    rng = np.random.default_rng(seed)
    anns = []
    for _ in range(count):
        w = float(rng.uniform(0.05, 0.2))
        h = float(rng.uniform(0.05, 0.2))
        cx = float(rng.uniform(0.3, 0.7))
        cy = float(rng.uniform(0.3, 0.7))
        anns.append(Annotation(int(rng.integers(2)), cx, cy, w, h))
    return anns


# ------------------------------------------------------------------ rotate

def test_rotate_zero_is_identity():
    img = _image()
    anns = _interior_annotations()
    out, moved = rotate(img, anns, 0.0)
    np.testing.assert_array_equal(out, img)
    for a, b in zip(moved, anns):
        assert abs(a.cx - b.cx) < 1e-9 and abs(a.w - b.w) < 1e-9


def test_rotate_180_point_symmetry():
    anns = _interior_annotations(1)
    _, moved = rotate(_image(), anns, 180.0)
    for a, b in zip(moved, anns):
        assert abs(a.cx - (1 - b.cx)) < 1e-6
        assert abs(a.cy - (1 - b.cy)) < 1e-6
        assert abs(a.w - b.w) < 1e-6 and abs(a.h - b.h) < 1e-6


def test_rotate_hulls_match_corner_oracle():
    img = _image(2, h=100, w=160)
    anns = _interior_annotations(2, count=6)
    _, moved = rotate(img, anns, 37.0)
    assert len(moved) == len(anns)
    for got, src in zip(moved, anns):
        x1, y1, x2, y2 = rotate_box_corners(src.cx, src.cy, src.w, src.h,
                                            37.0, 160, 100)
        want = Annotation(src.class_id, (x1 + x2) / 2, (y1 + y2) / 2,
                          x2 - x1, y2 - y1)
        for a, b in zip((got.cx, got.cy, got.w, got.h),
                        (want.cx, want.cy, want.w, want.h)):
            assert abs(a - b) < 1e-4


@given(st.integers(0, 2**32 - 1), st.floats(-60, 60))
def test_rotate_back_restores_interior_centers(seed, angle):
    anns = _interior_annotations(seed, count=3)
    img = _image(seed)
    _, once = rotate(img, anns, angle, survival=0.0)
    _, back = rotate(img, once, -angle, survival=0.0)
    # hulls grow, centers of interior boxes come back
    for a, b in zip(back, anns):
        assert abs(a.cx - b.cx) < 1e-3
        assert abs(a.cy - b.cy) < 1e-3


def test_rotate_drops_boxes_leaving_frame():
    anns = [Annotation(0, 0.03, 0.03, 0.05, 0.05)]
    _, moved = rotate(_image(h=100, w=100), anns, 45.0)
    assert moved == []  # corner box swings outside and is clipped away


def test_rotate_rejects_out_of_range_angle():
    with pytest.raises(ValueError):
        rotate(_image(), [], 200.0)


# -------------------------------------------------------------------- flip

def test_flip_twice_is_identity_bit_exact():
    img = _image(3)
    anns = _interior_annotations(3)
    for axis in ("horizontal", "vertical"):
        once_img, once = flip(img, anns, axis)
        twice_img, twice = flip(once_img, once, axis)
        assert twice_img.tobytes() == img.tobytes()
        assert twice == anns


def test_flip_horizontal_quarter_to_three_quarters():
    _, moved = flip(_image(), [Annotation(0, 0.25, 0.4, 0.1, 0.1)], "horizontal")
    assert abs(moved[0].cx - 0.75) < 1e-12 and moved[0].cy == 0.4


def test_flip_matches_index_mirror_oracle():
    img = _image(4)
    h_img, _ = flip(img, [], "horizontal")
    v_img, _ = flip(img, [], "vertical")
    for y in range(img.shape[0]):
        for x in range(img.shape[1]):
            assert (h_img[y, x] == img[y, img.shape[1] - 1 - x]).all()
            assert (v_img[y, x] == img[img.shape[0] - 1 - y, x]).all()


def test_flip_rejects_unknown_axis():
    with pytest.raises(ValueError):
        flip(_image(), [], "diagonal")


# ------------------------------------------------------------------- shift

def test_shift_zero_is_identity():
    img = _image(5)
    anns = _interior_annotations(5)
    out, moved = shift(img, anns, 0.0, 0.0)
    np.testing.assert_array_equal(out, img)
    assert moved == anns


def test_shift_translates_center():
    _, moved = shift(_image(), [Annotation(1, 0.5, 0.5, 0.2, 0.2)], 0.25, 0.0)
    assert abs(moved[0].cx - 0.75) < 1e-12
    assert abs(moved[0].w - 0.2) < 1e-12


def test_shift_clip_and_drop_matches_rectangle_oracle():
    anns = [
        Annotation(0, 0.9, 0.9, 0.15, 0.15),   # hugs the corner; shifted out
        Annotation(1, 0.5, 0.5, 0.2, 0.2),     # stays inside
        Annotation(0, 0.75, 0.5, 0.3, 0.2),    # partially clipped
    ]
    _, moved = shift(_image(), anns, 0.4, 0.4)
    survivors = []
    for a in anns:
        x1, y1, x2, y2 = a.corners()
        x1, y1, x2, y2 = x1 + 0.4, y1 + 0.4, x2 + 0.4, y2 + 0.4
        cx1, cy1 = max(0.0, x1), max(0.0, y1)
        cx2, cy2 = min(1.0, x2), min(1.0, y2)
        if cx2 > cx1 and cy2 > cy1 and (cx2 - cx1) * (cy2 - cy1) >= 0.25 * a.w * a.h:
            survivors.append((a.class_id, (cx1 + cx2) / 2, (cy1 + cy2) / 2))
    assert len(moved) == len(survivors)
    for got, (cls, cx, cy) in zip(moved, survivors):
        assert got.class_id == cls
        assert abs(got.cx - cx) < 1e-12 and abs(got.cy - cy) < 1e-12


@given(st.integers(0, 2**32 - 1))
def test_shift_round_trip_restores_interior_boxes(seed):
    rng = np.random.default_rng(seed)
    sx, sy = float(rng.uniform(-0.2, 0.2)), float(rng.uniform(-0.2, 0.2))
    anns = _interior_annotations(seed, count=3)
    img = _image(seed)
    _, once = shift(img, anns, sx, sy)
    _, back = shift(img, once, -sx, -sy)
    for a, b in zip(back, anns):
        for u, v in zip((a.cx, a.cy, a.w, a.h), (b.cx, b.cy, b.w, b.h)):
            assert abs(u - v) < 1e-6


def test_shift_rejects_large_offsets():
    with pytest.raises(ValueError):
        shift(_image(), [], 0.6, 0.0)


# -------------------------------------------------------------------- blur

def test_blur_kernel_normalized():
    for sigma in (0.3, 1.0, 1.5, 4.2):
        k = gaussian_kernel(sigma)
        assert len(k) == 2 * int(np.ceil(3 * sigma)) + 1
        assert abs(k.sum() - 1.0) < 1e-6


def test_blur_constant_image_unchanged():
    img = np.full((32, 40, 3), 137, dtype=np.uint8)
    out = gaussian_blur(img, 2.0)
    assert np.abs(out.astype(int) - 137).max() <= 1


def test_blur_sigma_zero_identity():
    img = _image(6)
    np.testing.assert_array_equal(gaussian_blur(img, 0.0), img)


def test_blur_matches_dense_2d_oracle():
    img = _image(7, h=24, w=30)
    out = gaussian_blur(img, 1.5)
    want = gaussian_blur_dense(img, 1.5)
    assert np.abs(out.astype(np.float64) - want).max() <= 1.0


def test_blur_preserves_mean_within_one_level():
    img = _image(8)
    out = gaussian_blur(img, 1.5)
    assert abs(float(out.mean()) - float(img.mean())) <= 1.0


# ---------------------------------------------------------- augment_dataset

def test_augment_dataset_output_counts(tmp_path):
    manifest = load_dataset(make_synthetic_dataset(tmp_path / "src", 10, seed=0))
    out, stats = augment_dataset(manifest, "val", tmp_path / "aug", multiplier=3, seed=5)
    assert stats.images_in == 10 and stats.images_out == 30
    assert len(out.splits["val"]) == 30
    assert (tmp_path / "aug" / "dataset.yaml").exists()
    reloaded = load_dataset(tmp_path / "aug" / "dataset.yaml")
    assert len(reloaded.splits["val"]) == 30
    assert reloaded.diagnostics == []


def test_augment_dataset_deterministic_bytes(tmp_path):
    manifest = load_dataset(make_synthetic_dataset(tmp_path / "src", 4, seed=1))
    augment_dataset(manifest, "val", tmp_path / "a", multiplier=2, seed=9)
    augment_dataset(manifest, "val", tmp_path / "b", multiplier=2, seed=9)
    files_a = sorted((tmp_path / "a").rglob("*.*"))
    files_b = sorted((tmp_path / "b").rglob("*.*"))
    assert [f.name for f in files_a] == [f.name for f in files_b]
    for fa, fb in zip(files_a, files_b):
        assert fa.read_bytes() == fb.read_bytes(), fa.name


def test_augment_dataset_different_seeds_differ(tmp_path):
    manifest = load_dataset(make_synthetic_dataset(tmp_path / "src", 2, seed=2))
    augment_dataset(manifest, "val", tmp_path / "a", multiplier=1, seed=1)
    augment_dataset(manifest, "val", tmp_path / "b", multiplier=1, seed=2)
    images_a = sorted((tmp_path / "a" / "images").iterdir())
    images_b = sorted((tmp_path / "b" / "images").iterdir())
    assert any(fa.read_bytes() != fb.read_bytes()
               for fa, fb in zip(images_a, images_b))


def test_augment_outputs_satisfy_annotation_invariants(tmp_path):
    manifest = load_dataset(make_synthetic_dataset(tmp_path / "src", 6, seed=3))
    out, stats = augment_dataset(manifest, "val", tmp_path / "aug", multiplier=4,
                                 seed=11)
    checked = 0
    for record in out.splits["val"]:
        parsed, diags = parse_label_file(record.label, num_classes=2)
        assert diags == []
        for ann in parsed:
            assert ann.is_valid()
            checked += 1
    assert checked == stats.boxes_out


def test_augment_dataset_explicit_specs_pin_parameters(tmp_path):
    manifest = load_dataset(make_synthetic_dataset(tmp_path / "src", 2, seed=4))
    specs = [AugmentSpec(flip="horizontal")]
    out, _ = augment_dataset(manifest, "val", tmp_path / "aug", multiplier=1,
                             specs=specs)
    for src, dst in zip(manifest.splits["val"], out.splits["val"]):
        for a, b in zip(src.annotations, dst.annotations):
            assert abs(b.cx - (1 - a.cx)) < 1e-6
            assert abs(b.cy - a.cy) < 1e-6


def test_apply_spec_full_chain_runs():
    img = _image(9, h=96, w=128)
    anns = _interior_annotations(9)
    spec = AugmentSpec(rotation_degrees=12.0, flip="vertical", shift=(0.1, -0.05),
                       blur_sigma=1.0)
    out, moved = apply_spec(img, anns, spec)
    assert out.shape == img.shape
    for a in moved:
        assert a.is_valid()


def test_augment_spec_validation():
    with pytest.raises(ValueError):
        AugmentSpec(flip="sideways")
    with pytest.raises(ValueError):
        AugmentSpec(shift=(0.7, 0.0))
    with pytest.raises(ValueError):
        AugmentSpec(blur_sigma=-1.0)


def test_augment_ranges_sampling_respects_bounds():
    rng = np.random.default_rng(0)
    ranges = AugmentRanges(max_rotation=10.0, max_shift=0.15)
    from lensinspect.augment import sample_spec
    for _ in range(50):
        spec = sample_spec(rng, ranges)
        assert -10.0 <= spec.rotation_degrees <= 10.0
        assert abs(spec.shift[0]) <= 0.15 and abs(spec.shift[1]) <= 0.15
        assert spec.flip in ("none", "horizontal", "vertical")
