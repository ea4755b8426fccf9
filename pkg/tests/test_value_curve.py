import numpy as np
import pytest

from models.storage import StorageParams
from models.value_curve import MarginalValueCurve, ValueFunctionSeries, downsample_matrix
from utils.exceptions import DomainError, ModelFormatError, PreconditionError


@pytest.fixture
def two_step() -> MarginalValueCurve:
    return MarginalValueCurve(np.array([10.0, 4.0]), 1.0)


class TestMarginalValueCurve:
    @pytest.mark.parametrize("soc, expected", [(0.25, 10.0), (0.75, 4.0), (0.0, 10.0), (1.0, 4.0)])
    def test_eval_marginal(self, two_step, soc, expected):
        assert two_step.eval_marginal(soc) == expected

    def test_boundary_belongs_to_lower_segment(self, two_step):
        assert two_step.eval_marginal(0.5) == 10.0

    def test_constant_curve(self):
        curve = MarginalValueCurve.constant(7.0, 1.0, 1001)
        assert curve.eval_marginal(0.3141) == 7.0
        assert curve.num_segments == 1001

    def test_integrate(self, two_step):
        assert two_step.integrate(0.0, 1.0) == pytest.approx(7.0)
        assert two_step.integrate(0.3, 0.3) == 0.0
        assert two_step.integrate(0.25, 0.75) == pytest.approx(3.5)
        assert two_step.integrate(0.75, 0.25) == pytest.approx(-3.5)

    @pytest.mark.parametrize("soc", [-0.1, 1.1])
    def test_out_of_range_soc(self, two_step, soc):
        with pytest.raises(DomainError):
            two_step.eval_marginal(soc)
        with pytest.raises(DomainError):
            two_step.integrate(0.0, soc)

    def test_downsample_block_means(self):
        assert MarginalValueCurve(np.array([8.0, 8.0, 2.0, 2.0]), 1.0).downsample(2).segment_values.tolist() \
            == [8.0, 2.0]
        np.testing.assert_allclose(
            MarginalValueCurve(np.array([8.0, 6.0, 4.0, 2.0]), 1.0).downsample(2).segment_values, [7.0, 3.0])

    def test_downsample_uneven_preserves_integral(self, rng):
        curve = MarginalValueCurve(np.sort(rng.normal(20.0, 10.0, 1001))[::-1], 2.0)
        small = curve.downsample(50)
        assert small.num_segments == 50
        assert small.integrate(0.0, 2.0) == pytest.approx(curve.integrate(0.0, 2.0))
        assert small.is_non_increasing(1e-12)

    def test_downsample_constant(self):
        np.testing.assert_allclose(MarginalValueCurve.constant(7.0, 1.0, 1001).downsample(50).segment_values, 7.0)

    @pytest.mark.parametrize("target", [0, -3, 5])
    def test_downsample_invalid_target(self, target):
        with pytest.raises(DomainError):
            downsample_matrix(4, target)

    def test_rejects_bad_curves(self):
        with pytest.raises(DomainError):
            MarginalValueCurve(np.array([]), 1.0)
        with pytest.raises(DomainError):
            MarginalValueCurve(np.array([1.0, np.nan]), 1.0)
        with pytest.raises(DomainError):
            MarginalValueCurve(np.array([1.0]), 0.0)

    def test_values_are_read_only(self, two_step):
        with pytest.raises(ValueError):
            two_step.segment_values[0] = 1.0

    def test_check_soc_accepts_tolerance_only(self, two_step):
        two_step.check_soc(two_step.capacity + 1e-12)
        two_step.check_soc(-1e-12)
        with pytest.raises(DomainError) as info:
            two_step.check_soc(two_step.capacity + 1e-6)
        assert info.value.data["soc"] == pytest.approx(two_step.capacity + 1e-6)

    def test_source_array_stays_writeable(self):
        values = np.array([3.0, 1.0])
        MarginalValueCurve(values, 1.0)
        values[0] = 2.0
        assert values.flags.writeable


class TestValueFunctionSeries:
    def _series(self) -> ValueFunctionSeries:
        values = np.array([[10.0, 10.0, 10.0, 10.0], [50.0, 50.0, 0.0, 0.0], [0.0, 0.0, 0.0, 0.0]])
        return ValueFunctionSeries(values, StorageParams(), origin_value=20.0)

    def test_shape_properties(self):
        series = self._series()
        assert series.horizon == 2
        assert series.num_segments == 4
        assert len(series) == 3
        assert series.curve(1).eval_marginal(0.2) == 50.0

    def test_optimal_value(self):
        series = self._series()
        assert series.optimal_value(0.0) == 20.0
        assert series.optimal_value(0.5) == pytest.approx(25.0)

    def test_check_concave(self):
        self._series().check_concave()
        bad = ValueFunctionSeries(np.array([[1.0, 2.0], [0.0, 0.0]]), StorageParams())
        with pytest.raises(PreconditionError):
            bad.check_concave()

    def test_save_load(self, tmp_path):
        series = self._series()
        path = tmp_path / "values.npz"
        series.save(path)
        loaded = ValueFunctionSeries.load(path)
        np.testing.assert_array_equal(loaded.values, series.values)
        assert loaded.params == series.params
        assert loaded.origin_value == series.origin_value

    def test_load_corrupt_file(self, tmp_path):
        path = tmp_path / "values.npz"
        path.write_bytes(b"not an archive")
        with pytest.raises(ModelFormatError) as info:
            ValueFunctionSeries.load(path)
        assert info.value.data["section"] == "archive"

    def test_load_missing_section(self, tmp_path):
        path = tmp_path / "values.npz"
        np.savez(path, values=np.zeros((2, 3)))
        with pytest.raises(ModelFormatError) as info:
            ValueFunctionSeries.load(path)
        assert info.value.data["section"] == "header"

    def test_load_header_mismatch(self, tmp_path):
        path = tmp_path / "values.npz"
        np.savez(path, values=np.zeros((2, 3)), header=np.array([1.0, 4.0, 1.0, 1 / 12]),
                 origin_value=np.float64(0.0), params=np.array('{"power_rating": 0.5}'))
        with pytest.raises(ModelFormatError) as info:
            ValueFunctionSeries.load(path)
        assert info.value.data["section"] == "header"

    def test_series_does_not_freeze_the_source_matrix(self):
        values = np.zeros((3, 4))
        series = ValueFunctionSeries(values, StorageParams())
        values[0, 0] = 1.0
        assert not series.values.flags.writeable

    def test_downsample(self):
        small = self._series().downsample(2)
        np.testing.assert_allclose(small.values, [[10.0, 10.0], [50.0, 0.0], [0.0, 0.0]])
        assert small.origin_value == 20.0
