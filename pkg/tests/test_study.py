import numpy as np
import pytest

from nestq.errors import InvalidArgument
from nestq.quantizer import QuantSchedule
from nestq.study import compare_orderings, format_table, span_curve


def test_span_curve_runs_between_levels(camera):
    sc = span_curve(camera, "random", "element", QuantSchedule(2, 8.0, True), points=6)
    assert len(sc.curve) == 6
    assert sc.ordering_bytes > 0
    assert sc.curve.psnr[-1] > sc.curve.psnr[0]
    with pytest.raises(InvalidArgument):
        span_curve(camera, "sigma", "element", QuantSchedule(2, 8.0, True), level=2)


def test_compare_orderings_table(camera, small_rgb):
    imgs = [camera]
    table, curves = compare_orderings(imgs, [("sigma", "element")], ("random", "element"),
                                      QuantSchedule(2, 8.0, True), points=8)
    assert set(table) == {("sigma", "element"), ("random", "element")}
    assert table[("random", "element")]["mean"] == 0.0
    assert table[("sigma", "element")]["mean"] < 0
    text = format_table(table)
    assert text.splitlines()[1] == "criterion,unit,mean,averaged_curve,per_image"
    assert np.isfinite(table[("sigma", "element")]["averaged_curve"])
