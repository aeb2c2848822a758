import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from selcal.core import (
    PredictionFileError,
    argmax_predict,
    as_labels,
    as_logits,
    as_probs,
    empirical_error,
    load_prediction_probs,
    load_predictions,
    softmax,
    softmax_backward,
)

from conftest import fd_grad

logit_rows = arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(2, 6)),
                    elements=st.floats(-50, 50))


def test_softmax_examples():
    np.testing.assert_allclose(softmax([0.0, 0.0, 0.0]), [1 / 3] * 3, atol=1e-15)
    np.testing.assert_allclose(softmax([math.log(2), 0.0]), [2 / 3, 1 / 3], atol=1e-15)
    p = softmax([1000.0, 0.0])
    assert np.all(np.isfinite(p))
    np.testing.assert_allclose(p, [1.0, 0.0], atol=1e-300)


def test_softmax_rejects_nonfinite():
    with pytest.raises(ValueError):
        softmax([np.inf, 0.0])
    with pytest.raises(ValueError):
        softmax([np.nan, 0.0])


@given(logit_rows)
def test_softmax_rows_on_simplex(z):
    p = softmax(z)
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-9)
    assert p.min() >= 0


@given(logit_rows, st.floats(-20, 20))
def test_softmax_shift_invariant(z, c):
    np.testing.assert_allclose(softmax(z), softmax(z + c), atol=1e-12)


@settings(max_examples=50)
@given(logit_rows)
def test_argmax_matches_logits_when_unique(z):
    top = np.sort(z, axis=1)
    keep = top[:, -1] - top[:, -2] > 1e-6  # gaps below float resolution collapse in p
    np.testing.assert_array_equal(argmax_predict(softmax(z))[keep], np.argmax(z, axis=1)[keep])


def test_argmax_examples():
    assert argmax_predict([0.7, 0.3])[0] == 0
    assert argmax_predict([0.5, 0.5])[0] == 0
    assert argmax_predict([0.2, 0.3, 0.5])[0] == 2


def test_empirical_error_counts():
    p = np.array([[0.9, 0.1], [0.2, 0.8], [0.6, 0.4], [0.3, 0.7]])
    assert empirical_error(p, [0, 1, 0, 1]) == 0.0
    assert empirical_error(p, [1, 0, 1, 0]) == 1.0
    assert empirical_error(p, [0, 1, 1, 1]) == 0.25
    with pytest.raises(ValueError):
        empirical_error(p, [0, 1])


def test_softmax_backward_matches_fd(rng):
    z = rng.normal(size=(4, 3))
    g = rng.normal(size=(4, 3))
    analytic = softmax_backward(softmax(z), g)
    numeric = fd_grad(lambda zz: float(np.sum(g * softmax(zz))), z)
    np.testing.assert_allclose(analytic, numeric, atol=1e-9)


def test_validators():
    with pytest.raises(ValueError):
        as_logits([[1.0]])
    with pytest.raises(ValueError):
        as_probs([[0.5, 0.6]])
    with pytest.raises(ValueError):
        as_labels([0, 3], 3)
    assert not as_probs([[0.5, 0.5]]).flags.writeable


def _write(path, lines):
    path.write_text("".join(lines), encoding="utf-8")
    return path


def test_load_predictions_roundtrip(tmp_path):
    f = _write(tmp_path / "p.jsonl", [
        json.dumps({"logits": [1.0, 0.0], "label": 0}) + "\n",
        json.dumps({"logits": [0.0, 2.0], "label": 1}) + "\n",
    ])
    z, y = load_predictions(f)
    assert z.shape == (2, 2)
    np.testing.assert_array_equal(y, [0, 1])
    p, _ = load_prediction_probs(f)
    np.testing.assert_allclose(p, softmax(z))


def test_load_prefers_probs_field(tmp_path):
    f = _write(tmp_path / "p.jsonl", [json.dumps({"logits": [0.0, -27.0], "label": 0, "probs": [1.0, 0.0]}) + "\n"])
    p, _ = load_prediction_probs(f)
    np.testing.assert_array_equal(p, [[1.0, 0.0]])


@pytest.mark.parametrize("lines, match", [
    ([], "no records"),
    (['{"logits": [0, 1], "label": 2}\n'], "outside"),
    (['{"logits": [0, 1], "label": 0}\n', '{"logits": [0, 1, 2], "label": 0}\n'], ":2: expected 2"),
    (['{"logits": [0, 1], "label": 0}\n', "not json\n"], ":2: malformed"),
    (['{"logits": [0, 1]}\n'], "needs"),
])
def test_load_predictions_errors(tmp_path, lines, match):
    f = _write(tmp_path / "bad.jsonl", lines)
    with pytest.raises(PredictionFileError, match=match):
        load_predictions(f)
