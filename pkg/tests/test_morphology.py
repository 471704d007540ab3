import numpy as np
import pytest
from scipy import ndimage

from morphrefine.core import BinaryMask
from morphrefine.morphology import (
    ELEMENT_FILE,
    ENDPOINT_ELEMENTS,
    THINNING_ELEMENTS,
    StructuringElement3x3,
    endpoints,
    hit_or_miss,
    prune,
    read_element_file,
    thin,
)

EIGHT = np.ones((3, 3), dtype=bool)


def _mask(data) -> BinaryMask:
    return BinaryMask.from_array(np.asarray(data, dtype=bool))


def _scan_hit_or_miss(data: np.ndarray, se: StructuringElement3x3) -> np.ndarray:
    padded = np.pad(data, 1, constant_values=False)
    out = np.zeros_like(data)
    for r in range(data.shape[0]):
        for c in range(data.shape[1]):
            window = padded[r:r + 3, c:c + 3]
            out[r, c] = np.all(window[se.foreground]) and not np.any(window[se.background])
    return out


def _reference_thin(data: np.ndarray, n_iter: int) -> np.ndarray:
    """Full-frame sequential thinning built on the window scan."""
    for _ in range(n_iter):
        before = data.copy()
        for se in THINNING_ELEMENTS:
            data = data & ~_scan_hit_or_miss(data, se)
        if np.array_equal(before, data):
            break
    return data


def _topology(data: np.ndarray):
    """Foreground 8-components and background 4-components (outside included)."""
    _, fg = ndimage.label(data, structure=EIGHT)
    _, bg = ndimage.label(~np.pad(data, 1, constant_values=False))
    return fg, bg


class TestElements:
    def test_first_thinning_element(self):
        assert THINNING_ELEMENTS[0].rows() == ["000", "x1x", "111"]
        assert THINNING_ELEMENTS[1].pattern == "x0011011x"

    def test_eight_rotations_return_to_start(self):
        for se in THINNING_ELEMENTS + ENDPOINT_ELEMENTS:
            assert se.rotated(8) == se

    def test_families_are_distinct(self):
        assert len(set(THINNING_ELEMENTS)) == 8
        assert len(set(ENDPOINT_ELEMENTS)) == 8

    def test_element_file_matches_built_in_families(self):
        sections = read_element_file(ELEMENT_FILE)
        assert sections["thinning"] == THINNING_ELEMENTS
        assert sections["endpoint"] == ENDPOINT_ELEMENTS

    def test_element_file_parsing(self, tmp_path):
        path = tmp_path / "se.txt"
        path.write_text("# comment\n[a]\n000x1x111  # B1\n\n[b]\n1x0x1x0x1\n")
        sections = read_element_file(path)
        assert [se.pattern for se in sections["a"]] == ["000x1x111"]
        assert [se.pattern for se in sections["b"]] == ["1x0x1x0x1"]

    def test_pattern_outside_section(self, tmp_path):
        path = tmp_path / "se.txt"
        path.write_text("000x1x111\n")
        with pytest.raises(ValueError):
            read_element_file(path)

    def test_invalid_pattern(self):
        with pytest.raises(ValueError):
            StructuringElement3x3("0001x111")


class TestHitOrMiss:
    @pytest.mark.parametrize("index", range(16))
    def test_matches_window_scan(self, rng, index):
        se = (THINNING_ELEMENTS + ENDPOINT_ELEMENTS)[index]
        for _ in range(5):
            data = rng.random((12, 12)) < 0.55
            np.testing.assert_array_equal(hit_or_miss(_mask(data), se).data, _scan_hit_or_miss(data, se))

    def test_outside_counts_as_background(self):
        data = np.ones((2, 3), dtype=bool)
        matched = hit_or_miss(_mask(data), THINNING_ELEMENTS[0]).data
        assert matched[0].tolist() == [False, True, False]
        assert not matched[1].any()


class TestThin:
    def test_zero_iterations_is_identity(self, rng):
        data = rng.random((10, 10)) < 0.5
        np.testing.assert_array_equal(thin(_mask(data), 0).data, data)

    def test_negative_iterations(self):
        with pytest.raises(ValueError):
            thin(_mask(np.ones((3, 3))), -1)

    def test_isolated_pixel_survives(self):
        data = np.zeros((7, 7), dtype=bool)
        data[3, 3] = True
        np.testing.assert_array_equal(thin(_mask(data), 35).data, data)

    def test_anti_extensive_and_decreasing(self, rng):
        data = ndimage.binary_dilation(rng.random((24, 24)) < 0.08, iterations=2)
        previous = data
        for n in range(1, 6):
            current = thin(_mask(data), n).data
            assert not np.any(current & ~previous)
            previous = current

    def test_preserves_topology(self, rng):
        for _ in range(500):
            data = rng.random((16, 16)) < rng.uniform(0.3, 0.8)
            thinned = thin(_mask(data), 10).data
            assert _topology(thinned) == _topology(data)

    def test_square_becomes_small_core(self):
        data = np.zeros((13, 13), dtype=bool)
        data[2:11, 2:11] = True
        thinned = thin(_mask(data), 20).data
        assert 1 <= thinned.sum() <= 20
        assert _topology(thinned) == _topology(data)

    def test_single_pass_on_square_matches_reference(self):
        data = np.zeros((9, 9), dtype=bool)
        data[1:8, 1:8] = True
        thinned = thin(_mask(data), 1).data
        np.testing.assert_array_equal(thinned, _reference_thin(data, 1))
        assert 0 < thinned.sum() < 49

    @pytest.mark.parametrize("n_iter", [1, 3, 35])
    def test_matches_full_frame_reference(self, rng, n_iter):
        for _ in range(20):
            data = rng.random((14, 14)) < rng.uniform(0.4, 0.9)
            np.testing.assert_array_equal(thin(_mask(data), n_iter).data, _reference_thin(data, n_iter))

    def test_idempotent_at_fixpoint(self, rng):
        for _ in range(10):
            data = rng.random((16, 16)) < 0.6
            fixed = thin(_mask(data), 256).data
            np.testing.assert_array_equal(thin(_mask(fixed), 1).data, fixed)
            np.testing.assert_array_equal(thin(_mask(fixed), 5).data, fixed)


class TestPrune:
    def test_endpoints_of_a_segment(self):
        data = np.zeros((3, 7), dtype=bool)
        data[1, 1:6] = True
        ends = endpoints(_mask(data)).data
        assert np.flatnonzero(ends[1]).tolist() == [1, 5]
        assert ends.sum() == 2

    def test_segment_shrinks_from_both_ends(self):
        data = np.zeros((3, 9), dtype=bool)
        data[1, 1:8] = True
        pruned = prune(_mask(data), 2).data
        assert np.flatnonzero(pruned[1]).tolist() == [3, 4, 5]

    def test_closed_loop_has_no_endpoints(self):
        data = np.zeros((6, 6), dtype=bool)
        data[1, 1:5] = data[4, 1:5] = data[1:5, 1] = data[1:5, 4] = True
        np.testing.assert_array_equal(prune(_mask(data), 5).data, data)

    def test_domino_vanishes(self):
        data = np.zeros((3, 4), dtype=bool)
        data[1, 1:3] = True
        assert not prune(_mask(data), 1).data.any()

    def test_solid_square_is_untouched(self):
        data = np.zeros((7, 7), dtype=bool)
        data[1:6, 1:6] = True
        np.testing.assert_array_equal(prune(_mask(data), 10).data, data)

    def test_anti_extensive_and_decreasing(self, rng):
        for _ in range(20):
            data = thin(_mask(rng.random((16, 16)) < 0.6), 10).data
            previous = data
            for n in range(1, 6):
                current = prune(_mask(data), n).data
                assert not np.any(current & ~previous)
                previous = current
