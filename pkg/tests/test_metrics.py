from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cobbkit.cobb import CobbTriple
from cobbkit.errors import ValidationError
from cobbkit.metrics import mae_per_angle, smape


def T(mt, pt, tl):
    return CobbTriple(mt, pt, tl)


def exact_smape(gt, pred):
    """Rational-arithmetic evaluation of the per-image ratio-of-sums mean."""
    ratios = []
    for g, p in zip(gt, pred):
        g = [Fraction(v) for v in g]
        p = [Fraction(v) for v in p]
        ratios.append(sum(abs(a - b) for a, b in zip(g, p)) / sum(a + b for a, b in zip(g, p)))
    return float(100 * sum(ratios) / len(ratios))


def test_hand_example():
    rep = smape([T(10, 20, 30)], [T(20, 20, 30)])
    assert abs(rep.smape - 100 * 10 / 130) <= 1e-9
    assert rep.smape == pytest.approx(7.6923076923, abs=1e-9)
    s = rep.per_image[0]
    assert (s.numerator, s.denominator) == (10.0, 130.0)


def test_identity_is_exactly_zero():
    rng = np.random.default_rng(0)
    gt = [T(*rng.uniform(0, 60, 3)) for _ in range(20)]
    assert smape(gt, gt).smape == 0.0
    assert mae_per_angle(gt, gt) == (0.0, 0.0, 0.0)


def test_mean_of_ratios():
    # ratios 0.1 and 0.3
    rep = smape([T(45, 0, 0), T(35, 0, 0)], [T(55, 0, 0), T(65, 0, 0)])
    assert [s.ratio for s in rep.per_image] == pytest.approx([0.1, 0.3])
    assert rep.smape == pytest.approx(20.0, abs=1e-12)


def test_mae_per_angle():
    assert mae_per_angle([T(10, 20, 30)], [T(20, 20, 30)]) == (10.0, 0.0, 0.0)
    m = mae_per_angle([T(0, 0, 0), T(10, 10, 10)], [T(2, 4, 6), T(10, 20, 30)])
    assert m == pytest.approx((1.0, 7.0, 13.0))


def test_textbook_variant_differs():
    rep = smape([T(10, 20, 30)], [T(20, 20, 30)], variant="textbook")
    assert rep.smape == pytest.approx(100 * (2 * 10 / 30) / 3)
    with pytest.raises(ValidationError):
        smape([T(1, 1, 1)], [T(1, 1, 1)], variant="other")


def test_zero_denominator_scores_zero():
    rep = smape([T(0, 0, 0), T(10, 20, 30)], [T(0, 0, 0), T(20, 20, 30)], ids=["a", "b"])
    assert rep.per_image[0].ratio == 0.0
    assert rep.n_images == 2 and rep.excluded == []
    assert rep.smape == pytest.approx(50 * 10 / 130)


def test_errors():
    with pytest.raises(ValidationError, match="length mismatch"):
        smape([T(1, 2, 3)], [])
    with pytest.raises(ValidationError):
        smape([], [])
    with pytest.raises(ValidationError):
        smape([T(-1, 2, 3)], [T(1, 2, 3)])
    with pytest.raises(ValidationError):
        smape([T(1, 2, 3)], [T(1, 2, 3)], ids=["a", "b"])


def test_report_dict():
    d = smape([T(10, 20, 30)], [T(20, 20, 30)], ids=["img"]).to_dict()
    assert d["mae_per_angle"] == {"mt": 10.0, "pt": 0.0, "tl": 0.0}
    assert d["per_image"][0]["image_id"] == "img"
    assert d["variant"] == "ratio-of-sums"


angle = st.floats(0.01, 90, allow_nan=False)
triple = st.tuples(angle, angle, angle)
pairs = st.lists(st.tuples(triple, triple), min_size=1, max_size=20)


@settings(max_examples=200, deadline=None)
@given(pairs)
def test_matches_rational_oracle(data):
    gt, pred = [d[0] for d in data], [d[1] for d in data]
    rep = smape([T(*g) for g in gt], [T(*p) for p in pred])
    assert rep.smape == pytest.approx(exact_smape(gt, pred), rel=1e-12, abs=1e-12)
    assert rep.n_images == len(rep.per_image) == len(data)
    assert all(0.0 <= s.ratio <= 1.0 for s in rep.per_image)
    assert rep.smape >= 0


@settings(max_examples=200, deadline=None)
@given(pairs, st.floats(0.01, 100))
def test_symmetric_and_scale_invariant(data, lam):
    gt = [T(*d[0]) for d in data]
    pred = [T(*d[1]) for d in data]
    base = smape(gt, pred).smape
    assert smape(pred, gt).smape == pytest.approx(base, rel=1e-12, abs=1e-12)
    scaled_g = [T(*(lam * v for v in t.angles)) for t in gt]
    scaled_p = [T(*(lam * v for v in t.angles)) for t in pred]
    assert smape(scaled_g, scaled_p).smape == pytest.approx(base, rel=1e-9, abs=1e-9)
