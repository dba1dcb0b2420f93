import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from PIL import Image

from conftest import images
from philox_ref import stream
from randaug.errors import DimensionMismatch, FormatError, ImageIOError, InvalidRange
from randaug.imgcore import (
    DeterministicRng,
    apply_lut,
    blend,
    encode_ppm,
    load_image,
    round_half_away,
    save_image,
)

SEED0_FIRST4 = [213000021201967259, 4455796210202625458, 2055444239878205049, 10411612076246414556]


def test_round_half_away_ties():
    assert list(round_half_away([0.5, 1.5, 2.5, -0.5, -1.5, 0.49999])) == [1, 2, 3, -1, -2, 0]


# ---------------------------------------------------------------- io


def test_load_ppm_pixels_row_major(tmp_path):
    payload = bytes([255, 0, 0, 0, 255, 0, 0, 0, 255, 255, 255, 255])
    path = tmp_path / "a.ppm"
    path.write_bytes(b"P6\n2 2\n255\n" + payload)
    img = load_image(path)
    assert img.shape == (2, 2, 3)
    assert img.tolist() == [[[255, 0, 0], [0, 255, 0]], [[0, 0, 255], [255, 255, 255]]]


def test_ppm_header_with_comment(tmp_path):
    path = tmp_path / "c.ppm"
    path.write_bytes(b"P6\n# made by hand\n1 1\n255\n\x01\x02\x03")
    assert load_image(path).tolist() == [[[1, 2, 3]]]


def test_one_black_pixel_is_14_bytes(tmp_path):
    path = tmp_path / "k.ppm"
    save_image(np.zeros((1, 1, 3), np.uint8), path)
    assert path.read_bytes() == b"P6\n1 1\n255\n\0\0\0"
    assert len(path.read_bytes()) == 14


def test_truncated_ppm(tmp_path):
    path = tmp_path / "t.ppm"
    path.write_bytes(b"P6\n2 2\n255\n" + bytes(11))
    with pytest.raises(FormatError):
        load_image(path)


def test_16bit_ppm_rejected(tmp_path):
    path = tmp_path / "w.ppm"
    path.write_bytes(b"P6\n1 1\n65535\n" + bytes(6))
    with pytest.raises(FormatError):
        load_image(path)


def test_16bit_png_rejected(tmp_path):
    path = tmp_path / "w.png"
    Image.fromarray(np.full((2, 2), 40000, dtype=np.uint16)).save(path)
    with pytest.raises(FormatError):
        load_image(path)


def test_not_an_image(tmp_path):
    path = tmp_path / "x.ppm"
    path.write_bytes(b"hello world")
    with pytest.raises(FormatError):
        load_image(path)


def test_missing_file(tmp_path):
    with pytest.raises(ImageIOError):
        load_image(tmp_path / "nope.ppm")


def test_unwritable_path(tmp_path):
    with pytest.raises(ImageIOError):
        save_image(np.zeros((1, 1, 3), np.uint8), tmp_path / "no" / "such" / "dir.ppm")


def test_gray_inputs_replicated(tmp_path):
    gray = np.array([[0, 100], [200, 255]], dtype=np.uint8)
    p5 = tmp_path / "g.pgm"
    p5.write_bytes(b"P5\n2 2\n255\n" + gray.tobytes())
    png = tmp_path / "g.png"
    Image.fromarray(gray, mode="L").save(png)
    for path in (p5, png):
        img = load_image(path)
        assert img.shape == (2, 2, 3)
        assert np.array_equal(img[..., 0], gray) and np.array_equal(img[..., 2], gray)


@given(images(), st.sampled_from([".ppm", ".png"]))
def test_save_load_round_trip(tmp_path_factory, img, suffix):
    path = tmp_path_factory.mktemp("rt") / f"img{suffix}"
    save_image(img, path)
    assert np.array_equal(load_image(path), img)


def test_save_leaves_no_temp_files(tmp_path):
    save_image(np.zeros((2, 2, 3), np.uint8), tmp_path / "a.ppm")
    assert [p.name for p in tmp_path.iterdir()] == ["a.ppm"]


def test_encode_ppm_header():
    assert encode_ppm(np.zeros((3, 2, 3), np.uint8)).startswith(b"P6\n2 3\n255\n")


# ---------------------------------------------------------------- blend / lut


def test_blend_examples():
    a = np.full((1, 1, 3), 200, np.uint8)
    b = np.full((1, 1, 3), 100, np.uint8)
    assert np.array_equal(blend(a, b, 1.0), a)
    assert np.array_equal(blend(a, b, 0.0), b)
    assert blend(a, b, 0.5)[0, 0, 0] == 150
    assert blend(a, b, 3.0)[0, 0, 0] == 255
    assert blend(a, b, -2.0)[0, 0, 0] == 0


def test_blend_rounds_half_away():
    a = np.full((1, 1, 3), 101, np.uint8)
    b = np.full((1, 1, 3), 100, np.uint8)
    assert blend(a, b, 0.5)[0, 0, 0] == 101  # 100.5 -> 101


def test_blend_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        blend(np.zeros((2, 2, 3), np.uint8), np.zeros((2, 3, 3), np.uint8), 0.5)


@given(st.integers(0, 255), st.integers(0, 255), st.floats(-3, 3), st.floats(-3, 3))
def test_blend_monotone_in_factor(pa, pb, f1, f2):
    a = np.full((1, 1, 3), pa, np.uint8)
    b = np.full((1, 1, 3), pb, np.uint8)
    lo, hi = sorted((f1, f2))
    v_lo, v_hi = int(blend(a, b, lo)[0, 0, 0]), int(blend(a, b, hi)[0, 0, 0])
    assert (v_lo <= v_hi) if pa >= pb else (v_lo >= v_hi)


def test_lut_examples(small_image):
    ident = np.arange(256)
    assert np.array_equal(apply_lut(small_image, ident), small_image)
    assert not apply_lut(small_image, np.zeros(256)).any()
    inv = 255 - ident
    assert np.array_equal(apply_lut(apply_lut(small_image, inv), inv), small_image)


@given(images(), st.lists(st.integers(0, 255), min_size=256, max_size=256),
       st.lists(st.integers(0, 255), min_size=256, max_size=256))
def test_lut_composition(img, f, g):
    f, g = np.array(f), np.array(g)
    assert np.array_equal(apply_lut(apply_lut(img, f), g), apply_lut(img, g[f]))


def test_per_channel_lut():
    img = np.array([[[10, 20, 30]]], np.uint8)
    luts = np.stack([np.full(256, 1), np.full(256, 2), np.full(256, 3)])
    assert apply_lut(img, luts).tolist() == [[[1, 2, 3]]]


# ---------------------------------------------------------------- rng


def test_seed0_golden_words():
    rng = DeterministicRng(0)
    assert [rng.next_u64() for _ in range(4)] == SEED0_FIRST4


@pytest.mark.parametrize("key", [0, 1, 7, 0x5EED, 2**64 - 1])
def test_stream_matches_pure_python_philox(key):
    rng = DeterministicRng(key)
    assert [rng.next_u64() for _ in range(64)] == stream(key, 64)


def test_counter_positions_are_random_access():
    full = DeterministicRng(9)
    words = [full.next_u64() for _ in range(11)]
    assert DeterministicRng(9, counter=7).next_u64() == words[7]


def test_each_draw_consumes_one_word():
    rng = DeterministicRng(3)
    rng.uniform(0, 1)
    rng.choice(14)
    rng.sign()
    rng.next_u64()
    assert rng.counter == 4


def test_same_seed_same_value():
    assert DeterministicRng(7).uniform(0, 1) == DeterministicRng(7).uniform(0, 1)


def test_choice_k1_is_zero():
    rng = DeterministicRng(5)
    assert all(rng.choice(1) == 0 for _ in range(100))


def test_uniform_bounds():
    rng = DeterministicRng(11)
    values = [rng.uniform(2.0, 3.0) for _ in range(2000)]
    assert min(values) >= 2.0 and max(values) < 3.0
    assert rng.uniform(4.0, 4.0) == 4.0


def test_invalid_ranges():
    rng = DeterministicRng(1)
    with pytest.raises(InvalidRange):
        rng.uniform(1.0, 0.0)
    with pytest.raises(InvalidRange):
        rng.choice(0)
    with pytest.raises(InvalidRange):
        DeterministicRng(-1)
    with pytest.raises(InvalidRange):
        DeterministicRng(2**64)


def test_choice_frequencies_within_4_sigma():
    rng = DeterministicRng(2024)
    n, k = 100_000, 14
    counts = np.bincount([rng.choice(k) for _ in range(n)], minlength=k)
    p = 1 / k
    sigma = np.sqrt(n * p * (1 - p))
    assert np.all(np.abs(counts - n * p) <= 4 * sigma)


def test_split_streams_are_distinct_and_stable():
    root = DeterministicRng(42)
    a, b = root.split(0), root.split(1)
    assert a.key != b.key
    assert root.split(0).key == a.key
    assert root.counter == 0  # splitting does not consume parent draws
    assert root.split("shuffle").key != root.split(0).key


def test_split_children_do_not_collide():
    root = DeterministicRng(0)
    keys = {root.split(i).key for i in range(5000)}
    assert len(keys) == 5000
    first = {root.split(i).next_u64() for i in range(5000)}
    assert len(first) == 5000


def test_spawn_chains_split():
    root = DeterministicRng(8)
    assert root.spawn(1, 2).key == root.split(1).split(2).key
