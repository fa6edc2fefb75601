import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from regvi import bounding as bd
from regvi.bounding import BoundingFn, bound_eval, delta_bar, validate_bounding

VALID = [bd.identity(), bd.zero(), bd.clip(), bd.clip(10.0, -1.0, 1.0), bd.tanh(), bd.tanh(5.0),
         bd.munchausen_clip(-1.0), bd.tdclip()]


@pytest.mark.parametrize("fn", VALID, ids=lambda f: f.label())
def test_valid_functions_pass_validation(fn):
    report = validate_bounding(fn)
    assert report.valid, report.first_violation


@pytest.mark.parametrize("fn", VALID, ids=lambda f: f.label())
@settings(max_examples=100, deadline=None)
@given(x=st.floats(-1e6, 1e6), y=st.floats(-1e6, 1e6), step=st.integers(0, 10**7))
def test_conditions_pointwise(fn, x, y, step):
    hx, hy = fn(x, step), fn(y, step)
    if x <= y:
        assert hx <= hy
    assert hx * x >= 0
    assert abs(hx) <= abs(x)
    assert abs(hx) <= fn.bound_at(step)


def test_sign_flagged_invalid():
    fn = bd.sign()
    assert fn.flagged_invalid
    report = validate_bounding(fn)
    assert not report.magnitude
    assert not report.valid
    assert 0 < abs(report.first_violation["magnitude"]) < 1


def test_custom_grid_reports_first_violation():
    report = validate_bounding(bd.sign(), grid=[-3.0, -0.5, 0.25, 2.0])
    assert report.first_violation["magnitude"] == -0.5


def test_c_h_values():
    assert bd.identity().c_h == math.inf
    assert bd.zero().c_h == 0.0
    assert bd.clip(1.0, -2.0, 0.5).c_h == 2.0
    assert bd.tanh().c_h == 1.0


def test_tdclip_schedule_at_start():
    fn = bd.tdclip(1e6, 10.0)
    level, slope = bd.tdclip_schedule(1e6, 10.0, 0)
    assert level == 1.0 and slope == pytest.approx(1 / 11)
    assert fn(-5.0, 0) == pytest.approx(-5.0 / 11, abs=1e-12)
    assert fn(-5.0, 0) == pytest.approx(-0.454545, abs=1e-6)
    assert fn(-50.0, 0) == -1.0


def test_tdclip_grows_with_step():
    fn = bd.tdclip(10.0, 1.0)
    assert fn.bound_at(10) == 2.0
    assert fn(100.0, 10) == 2.0
    assert fn(1.0, 10) == pytest.approx(2.0 / 3.0)


def test_vectorized_matches_scalar(rng):
    x = rng.normal(scale=3, size=50)
    for fn in VALID:
        vec = bound_eval(fn, x, 3)
        assert np.array_equal(vec, [fn(v, 3) for v in x])
    assert isinstance(bd.tanh()(0.3), float)


def test_config_round_trip():
    for fn in VALID + [bd.sign()]:
        assert BoundingFn.from_config(fn.to_config()) == fn
    assert BoundingFn.from_config({"type": "tdclip", "T1": 5, "T2": 2}) == bd.tdclip(5.0, 2.0)
    assert BoundingFn.from_config("tanh") == bd.tanh()


@pytest.mark.parametrize("spec", [{"type": "relu"}, {"type": "tanh", "lo": 1}, {"scale": 1}, 3])
def test_config_rejects(spec):
    with pytest.raises(ValueError):
        BoundingFn.from_config(spec)


@pytest.mark.parametrize("kwargs", [dict(kind="clip", scale=0.0), dict(kind="clip", lo=1.0, hi=0.0),
                                    dict(kind="tanh", scale=-1.0), dict(kind="tdclip", t1=0.0)])
def test_constructor_rejects(kwargs):
    with pytest.raises(ValueError):
        BoundingFn(**kwargs)


class TestDeltaBar:
    def test_identity_and_zero(self):
        assert delta_bar(bd.identity(), 0.02) == 0.0
        assert delta_bar(bd.zero(), 0.02) == 1.0

    @pytest.mark.parametrize("fn", [bd.tanh(), bd.clip(), bd.clip(10.0), bd.munchausen_clip()],
                             ids=lambda f: f.label())
    @pytest.mark.parametrize("alpha", [0.02, 1.0, 10.0])
    def test_bounded_functions_reach_one(self, fn, alpha):
        assert delta_bar(fn, alpha) == pytest.approx(1.0, abs=1e-6)

    def test_tdclip_unbounded_below_one(self):
        # with a huge horizon the clip level stays at 1 near step 0, so the supremum still tends to 1
        assert delta_bar(bd.tdclip(), 0.02, 0) == pytest.approx(1.0, abs=1e-6)

    def test_requires_positive_alpha(self):
        with pytest.raises(ValueError):
            delta_bar(bd.tanh(), 0.0)
