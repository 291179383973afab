import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hrcount.heatmap import ActivationMap
from hrcount.metrics import CountPair, EvalResult, cam_mass_ratio, evaluate


def exact_oracle(actual, target):
    """MAE, MSE and under/over percentages in exact rational arithmetic."""
    a = [Fraction(float(v)) for v in actual]
    t = [Fraction(float(v)) for v in target]
    n = len(a)
    d = [x - y for x, y in zip(a, t)]
    total = sum(t)
    return {
        "mae": sum(abs(v) for v in d) / n,
        "mse": sum(v * v for v in d) / n,
        "under": sum(-v for v in d if v < 0) / total * 100,
        "over": sum(v for v in d if v > 0) / total * 100,
    }


def rel(x, ref):
    ref = float(ref)
    return abs(x - ref) / max(abs(ref), 1e-300) if ref else abs(x)


def oracle_gap(seed) -> float:
    r = np.random.default_rng(seed)
    n = int(r.integers(1, 60))
    target = r.integers(1, 40, n).astype(float)
    actual = target + r.normal(0, 3, n)
    got = evaluate(actual=actual, target=target)
    ref = exact_oracle(actual, target)
    return max(rel(got.mae, ref["mae"]), rel(got.rmse, math.sqrt(ref["mse"])),
               rel(got.pct_under, ref["under"]), rel(got.pct_over, ref["over"]),
               rel(got.pct_diff, ref["under"] + ref["over"]))


@pytest.mark.parametrize("seed", range(20))
def test_matches_exact_oracle(seed):
    assert oracle_gap(seed) <= 1e-12


def test_worked_example():
    res = evaluate([CountPair(8, 10), CountPair(12, 10)])
    assert res.mae == 2.0 and res.rmse == 2.0
    assert res.pct_under == 10.0 and res.pct_over == 10.0 and res.pct_diff == 20.0
    assert res.n == 2


def test_exact_hits_are_neither_under_nor_over():
    res = evaluate(actual=[5, 7, 3], target=[5, 7, 3])
    assert res.mae == res.rmse == res.pct_under == res.pct_over == res.pct_diff == 0.0


def test_rounding_option():
    assert evaluate(actual=[9.6, 10.4], target=[10, 10], rounded=True).mae == 0.0
    assert evaluate(actual=[9.5], target=[10], rounded=True).mae == 0.0


@pytest.mark.parametrize("kwargs", [dict(actual=[], target=[]),
                                    dict(actual=[1, 2], target=[1]),
                                    dict(actual=[np.nan], target=[1]),
                                    dict(actual=[1.0], target=[0.0])])
def test_evaluate_errors(kwargs):
    with pytest.raises(ValueError):
        evaluate(**kwargs)


def test_zero_total_allowed_without_percentages():
    assert evaluate(actual=[1.0], target=[0.0], percentages=False).mae == 1.0


def test_csv_field_order_and_dict_round_trip():
    res = evaluate(actual=[8, 12, 11], target=[10, 10, 10])
    assert EvalResult.CSV_HEADER == "method,MAE,RMSE,%O,%U,%D"
    assert res.csv_fields() == [res.mae, res.rmse, res.pct_over, res.pct_under, res.pct_diff]
    assert EvalResult.from_dict(res.to_dict()) == res


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 500), st.integers(1, 500)), min_size=1, max_size=30))
def test_difference_is_under_plus_over(pairs):
    res = evaluate(pairs)
    assert res.pct_diff == res.pct_under + res.pct_over
    assert res.mae <= res.rmse * (1 + 1e-12)
    assert res.pct_diff == pytest.approx(100 * res.mae * res.n / sum(t for _, t in pairs),
                                         rel=1e-9, abs=1e-12)


# --- CAM mass ratio -------------------------------------------------------------

def test_mass_ratio_counts_cells_near_dots():
    cam = np.zeros((4, 4))
    cam[1, 1] = 3.0   # center (12, 12)
    cam[3, 3] = 1.0   # center (28, 28)
    cam[0, 3] = -5.0  # negative mass is ignored
    assert cam_mass_ratio(cam, [(12.0, 13.0)], radius=4.0, stride=8) == 0.75
    assert cam_mass_ratio(cam, [(12.0, 13.0), (30, 30)], radius=4.0, stride=8) == 1.0


def test_mass_ratio_zero_when_no_positive_mass():
    assert cam_mass_ratio(-np.ones((2, 2)), [(4, 4)], radius=8, stride=8) == 0.0


def test_mass_ratio_accepts_activation_maps():
    amap = ActivationMap(np.ones((2, 2)), 8, (16, 16))
    assert cam_mass_ratio(amap, [(4, 4)], radius=1.0) == 0.25
    with pytest.raises(ValueError):
        cam_mass_ratio(amap, [(4, 4)], radius=1.0, stride=4)


@pytest.mark.parametrize("kwargs", [dict(stride=None), dict(stride=8, radius=0.0),
                                    dict(stride=8, image_extents=(32, 16))])
def test_mass_ratio_errors(kwargs):
    args = {"radius": 4.0, **kwargs}
    with pytest.raises(ValueError):
        cam_mass_ratio(np.ones((2, 2)), [(1, 1)], **args)
