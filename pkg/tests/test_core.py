import numpy as np
import pytest

from morphrefine.core import (
    UNLABELED,
    WEIGHT_FLOOR,
    EdgeWeightGrid,
    ImageRgb,
    LabelMap,
    PipelineConfig,
    ProbMap,
    SeedSet,
    same_grid,
    validate,
)
from morphrefine.errors import ValidationFailed


class TestImageRgb:
    def test_grayscale_gets_one_channel(self):
        image = ImageRgb.from_array(np.zeros((4, 5)))
        assert (image.width, image.height, image.channels) == (5, 4, 1)

    def test_rejects_out_of_range(self):
        with pytest.raises(ValidationFailed) as exc:
            ImageRgb.from_array(np.full((2, 2, 3), 1.5))
        assert exc.value.kind == "out-of-range"

    def test_rejects_non_finite(self):
        data = np.zeros((2, 2, 3))
        data[0, 0, 0] = np.nan
        with pytest.raises(ValidationFailed) as exc:
            ImageRgb.from_array(data)
        assert exc.value.kind == "non-finite"

    def test_rejects_two_channels(self):
        with pytest.raises(ValidationFailed) as exc:
            ImageRgb.from_array(np.zeros((2, 2, 2)))
        assert exc.value.field == "channels"

    def test_luminance_of_gray_rgb_is_the_value(self):
        image = ImageRgb.from_array(np.full((3, 3, 3), 0.5))
        np.testing.assert_allclose(image.luminance(), 0.5, atol=1e-7)

    def test_data_is_read_only(self):
        image = ImageRgb.from_array(np.zeros((2, 2)))
        with pytest.raises(ValueError):
            image.data[0, 0, 0] = 1.0


class TestLabelMap:
    def test_unlabeled_is_allowed(self):
        labels = LabelMap.from_array(np.array([[0, 1], [UNLABELED, 1]]), 2)
        assert labels.present_labels().tolist() == [0, 1]
        assert labels.labeled.sum() == 3

    def test_label_beyond_num_labels(self):
        with pytest.raises(ValidationFailed) as exc:
            LabelMap.from_array(np.array([[0, 2]]), 2)
        assert exc.value.field == "data"

    def test_num_labels_range(self):
        with pytest.raises(ValidationFailed):
            LabelMap.from_array(np.zeros((2, 2), dtype=np.uint8), 0)


class TestProbMap:
    def test_two_dimensional_input_is_one_plane(self):
        probs = ProbMap.from_array(np.zeros((3, 4)))
        assert (probs.channels, probs.height, probs.width) == (1, 3, 4)

    def test_negative_rejected(self):
        with pytest.raises(ValidationFailed):
            ProbMap.from_array(-np.ones((1, 2, 2)))

    def test_normalized_checks_sums(self):
        ProbMap.from_array(np.full((2, 2, 2), 0.5), normalized=True)
        with pytest.raises(ValidationFailed):
            ProbMap.from_array(np.full((2, 2, 2), 0.6), normalized=True)


class TestEdgeWeightGrid:
    def test_uniform_degree(self):
        degree = EdgeWeightGrid.uniform(3, 3).degree()
        np.testing.assert_array_equal(degree, [[2, 3, 2], [3, 4, 3], [2, 3, 2]])

    def test_floor_applied(self):
        grid = EdgeWeightGrid.from_arrays(np.zeros((2, 1)), np.zeros((1, 2)))
        assert grid.horizontal.min() == WEIGHT_FLOOR

    def test_below_floor_rejected_without_flooring(self):
        with pytest.raises(ValidationFailed) as exc:
            EdgeWeightGrid.from_arrays(np.zeros((2, 1)), np.ones((1, 2)), floor=False)
        assert exc.value.field == "horizontal"

    def test_shape_mismatch(self):
        with pytest.raises(ValidationFailed) as exc:
            EdgeWeightGrid.from_arrays(np.ones((2, 1)), np.ones((2, 2)))
        assert exc.value.kind == "dimension-mismatch"

    def test_scaled(self):
        grid = EdgeWeightGrid.uniform(3, 2, 0.5).scaled(4.0)
        assert np.all(grid.horizontal == 2.0) and np.all(grid.vertical == 2.0)


class TestSeedSet:
    def test_entries_are_sorted(self):
        seeds = SeedSet.from_entries(3, 3, 2, [8, 0, 4], [1, 0, 1])
        assert seeds.pixels.tolist() == [0, 4, 8]
        assert seeds.labels.tolist() == [0, 1, 1]

    def test_duplicate_pixel(self):
        with pytest.raises(ValidationFailed):
            SeedSet.from_entries(3, 3, 2, [1, 1], [0, 1])

    def test_pixel_outside_grid(self):
        with pytest.raises(ValidationFailed) as exc:
            SeedSet.from_entries(3, 3, 2, [9], [0])
        assert exc.value.field == "pixels"

    def test_label_beyond_num_labels(self):
        with pytest.raises(ValidationFailed) as exc:
            SeedSet.from_entries(3, 3, 2, [0], [2])
        assert exc.value.field == "labels"

    def test_label_map_round_trip(self):
        labels = LabelMap.from_array(np.array([[0, UNLABELED], [UNLABELED, 1]]), 2)
        seeds = SeedSet.from_label_map(labels)
        assert len(seeds) == 2
        np.testing.assert_array_equal(seeds.to_label_map().data, labels.data)
        np.testing.assert_array_equal(seeds.mask(), labels.labeled)


class TestPipelineConfig:
    def test_defaults(self):
        config = PipelineConfig()
        assert (config.t, config.n_thin, config.n_prun, config.beta) == (0.03, 35, 20, 11.3)
        assert config.workers is None

    def test_preset_with_override(self):
        config = PipelineConfig.from_preset("big-fcn8", beta=9.0, n_thin=None)
        assert (config.t, config.n_thin, config.beta) == (0.4, 85, 9.0)

    def test_unknown_preset(self):
        with pytest.raises(ValidationFailed) as exc:
            PipelineConfig.from_preset("nope")
        assert exc.value.field == "preset"

    @pytest.mark.parametrize("field,value", [("t", 1.5), ("n_thin", -1), ("beta", 0.0), ("workers", 0)])
    def test_out_of_range_names_the_field(self, field, value):
        with pytest.raises(ValidationFailed) as exc:
            PipelineConfig.create(**{field: value})
        assert exc.value.field == field


def test_validate_rejects_foreign_types():
    with pytest.raises(TypeError):
        validate(np.zeros(3))


def test_same_grid():
    a = LabelMap.from_array(np.zeros((2, 3), dtype=np.uint8), 1)
    b = ProbMap.from_array(np.zeros((1, 3, 2)))
    with pytest.raises(ValidationFailed) as exc:
        same_grid(a, b, "lowres")
    assert exc.value.field == "lowres"
