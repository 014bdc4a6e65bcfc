import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oransim import models, nn


def _count(m):
    return sum(w.size + b.size for p in m.params if p is not None for w, b in [p])


def test_spec_param_count_oracle():
    m = models.build_spec_model(0)
    # independent recount of every weight and bias tensor
    assert _count(m) == m.param_count() == models.SPEC_PARAM_COUNT == 163_922


@settings(max_examples=50)
@given(st.integers(1, 8), st.integers(1, 20), st.lists(st.integers(1, 100), min_size=1, max_size=3))
def test_kpm_param_count_closed_form(m, t, hidden):
    model = models.build_kpm_model(m, t, hidden, seed=0)
    widths = [m * t] + list(hidden) + [2]
    expected = sum((a + 1) * b for a, b in zip(widths, widths[1:]))
    assert model.param_count() == expected
    assert model.input_shape == (m * t,)


def test_kpm_default_count():
    assert models.build_kpm_model().param_count() == 6542


def test_round_trip_predictions(tmp_path, rng):
    for m, shape in ((models.build_kpm_model(seed=1), (60,)),
                     (nn.init_model((nn.Conv2D(2), nn.MaxPool2D(), nn.Flatten(), nn.Dense(2)), (6, 6, 1), 2),
                      (6, 6, 1))):
        back = models.load(models.save(m, tmp_path / "m.orml"))
        X = rng.uniform(0, 1, (100,) + shape)
        p0 = nn.softmax_t(m.forward(X))
        p1 = nn.softmax_t(back.forward(X))
        assert np.max(np.abs(p0 - p1)) < 1e-5
        assert back.same_architecture(m)


def test_round_trip_is_exact_at_float32(rng):
    m = models.build_kpm_model(seed=5)
    once = models.loads(models.dumps(m))
    assert models.dumps(once) == models.dumps(m)


def test_loads_rejects_garbage():
    with pytest.raises(ValueError):
        models.loads(b"NOPE" + bytes(20))
    data = bytearray(models.dumps(models.build_kpm_model(seed=0)))
    data[4] = 99
    with pytest.raises(ValueError):
        models.loads(bytes(data))


def test_predict_and_accuracy(rng):
    m = models.build_kpm_model(seed=0)
    X = rng.uniform(0, 1, (10, 60))
    cls, probs = models.predict(m, X[0])
    assert cls in (0, 1) and probs.sum() == pytest.approx(1.0)
    labels = models.predict_batch(m, X)
    assert models.accuracy(m, X, labels) == 1.0
