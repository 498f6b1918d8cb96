import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from crypto_aegis.dataset import LabeledDataset
from crypto_aegis.forest import TrainConfig, train
from crypto_aegis.metrics import (
    ConfusionMatrix,
    EvalReport,
    RocCurve,
    auc,
    confusion,
    latency_estimate,
    match_published,
    one_vs_rest,
    rates,
    roc,
)

from .oracles import naive_auc, recount


def test_confusion_all_correct_and_all_wrong():
    labels = ["C", "C", "S", "C"]
    cm = confusion(labels, labels, "C")
    assert cm.fp == cm.fn == 0
    flipped = ["S" if x == "C" else "C" for x in labels]
    cm = confusion(flipped, labels, "C")
    assert cm.tp == cm.tn == 0


def test_confusion_from_raw_labels_bitcoin_vs_office():
    actual = ["Bitcoin"] * 4575 + ["Office"] * 4575
    predicted = (["Bitcoin"] * 4314 + ["Office"] * 261
                 + ["Bitcoin"] * 254 + ["Office"] * 4321)
    cm = confusion(predicted, actual, "Bitcoin")
    assert (cm.tn, cm.fp, cm.fn, cm.tp) == (4321, 254, 261, 4314)


def test_confusion_length_mismatch():
    with pytest.raises(ValueError):
        confusion([1, 2], [1], 1)


def test_multiclass_collapse_is_consistent():
    gen = np.random.default_rng(0)
    actual = gen.choice(list("abc"), 300).tolist()
    predicted = gen.choice(list("abc"), 300).tolist()
    cm = confusion(predicted, actual, "a")
    for c in "abc":
        assert (cm.for_class(c).tp, cm.for_class(c).tn, cm.for_class(c).fp,
                cm.for_class(c).fn) == recount(predicted, actual, c)
    assert set(one_vs_rest(cm)) == {"a", "b", "c"}


def test_rates_baseline_counts():
    r = rates(ConfusionMatrix.from_counts(tp=4314, tn=4321, fp=254, fn=261))
    assert r.tpr == pytest.approx(4314 / 4575)
    assert r.tpr == pytest.approx(0.9430, abs=5e-4)
    assert r.fpr == pytest.approx(0.0555, abs=5e-4)


def test_rates_ingoing_counts():
    r = rates(ConfusionMatrix.from_counts(tp=290728, tn=288452, fp=10255, fn=7979))
    assert r.precision == pytest.approx(0.9659, abs=5e-4)
    assert r.recall == pytest.approx(0.9733, abs=5e-4)
    assert r.f1 == pytest.approx(0.9696, abs=5e-4)
    assert r.degenerate == ()


def test_rates_degenerate():
    r = rates(ConfusionMatrix.from_counts(tp=0, tn=5, fp=2, fn=0))
    assert r.tpr == 0.0
    assert "tpr" in r.degenerate and "f1" in r.degenerate


@given(st.integers(0, 500), st.integers(0, 500), st.integers(0, 500), st.integers(0, 500))
def test_f1_is_harmonic_mean(tp, tn, fp, fn):
    r = rates(ConfusionMatrix.from_counts(tp=tp, tn=tn, fp=fp, fn=fn))
    p = tp / (tp + fp) if tp + fp else 0.0
    rc = tp / (tp + fn) if tp + fn else 0.0
    if p + rc > 0:
        assert r.f1 == pytest.approx(2 * p * rc / (p + rc), rel=1e-12)
    assert 0.0 <= r.f1 <= 1.0


def test_match_published():
    name, stated = match_published(ConfusionMatrix.from_counts(tp=4314, tn=4321, fp=254, fn=261))
    assert name == "baseline-bitcoin-vs-office"
    assert stated == {"tpr": 0.941, "fpr": 0.059}
    assert match_published(ConfusionMatrix.from_counts(1, 1, 1, 1)) is None


def test_roc_perfect_scores():
    curve = roc([1.0, 1.0, 0.0, 0.0], [1, 1, 0, 0], positive=1)
    assert (0.0, 1.0) in curve.points
    assert auc(curve) == 1.0


def test_roc_constant_scores():
    curve = roc([0.5] * 6, [1, 0, 1, 0, 0, 1], positive=1)
    assert curve.points == [(0.0, 0.0), (1.0, 1.0)]


def test_roc_requires_both_classes():
    with pytest.raises(ValueError):
        roc([0.1, 0.2], [1, 1], positive=1)


def test_roc_uniform_random_auc():
    gen = np.random.default_rng(123)
    area = auc(roc(gen.random(10000), gen.integers(0, 2, 10000), positive=1))
    assert abs(area - 0.5) <= 0.03


@pytest.mark.parametrize("fpr, tpr, expected", [
    ([0, 0, 1], [0, 1, 1], 1.0),
    ([0, 1], [0, 1], 0.5),
    ([0, 0.5, 1], [0, 0.5, 1], 0.5),
])
def test_auc_examples(fpr, tpr, expected):
    curve = RocCurve(np.array(fpr, float), np.array(tpr, float), np.zeros(len(fpr)))
    assert auc(curve) == expected


score_sets = st.lists(st.tuples(st.integers(0, 20), st.booleans()), min_size=2, max_size=80).filter(
    lambda xs: any(p for _, p in xs) and not all(p for _, p in xs))


@given(score_sets)
def test_roc_properties_and_auc_oracle(pairs):
    scores = [s / 20 for s, _ in pairs]
    mask = [p for _, p in pairs]
    curve = roc(scores, mask, positive=True)
    assert curve.points[0] == (0.0, 0.0) and curve.points[-1] == (1.0, 1.0)
    assert (np.diff(curve.fpr) >= 0).all() and (np.diff(curve.tpr) >= 0).all()
    assert (np.diff(curve.thresholds) < 0).all()
    area = auc(curve)
    assert 0.0 <= area <= 1.0
    assert area == pytest.approx(naive_auc(scores, mask), abs=1e-12)
    # any strictly increasing transform leaves the area unchanged
    squashed = np.tanh(np.asarray(scores) * 3.0) + 7.0
    assert auc(roc(squashed, mask, positive=True)) == pytest.approx(area, abs=1e-12)


def test_roc_threshold_meaning():
    scores = np.array([0.9, 0.8, 0.8, 0.3, 0.1])
    actual = np.array([1, 0, 1, 1, 0])
    curve = roc(scores, actual, positive=1)
    for f, t, thr in zip(curve.fpr, curve.tpr, curve.thresholds):
        pred = scores >= thr
        assert t == np.mean(pred[actual == 1])
        assert f == np.mean(pred[actual == 0])


def test_roc_csv():
    text = roc([0.9, 0.1], [1, 0], positive=1).to_csv()
    assert text.splitlines()[0] == "fpr,tpr"
    assert text.splitlines()[-1] == "1.0,1.0"


def test_rates_on_forest_predictions_match_recount():
    gen = np.random.default_rng(8)
    X = gen.normal(size=(1000, 6))
    y = (X[:, 0] + 0.5 * gen.normal(size=1000) > 0).astype(int)
    model = train(LabeledDataset(X[:500], y[:500], ("Crypto", "Standard")), TrainConfig(seed=8))
    predicted = model.classify(X[500:])
    actual = ["Crypto" if v == 0 else "Standard" for v in y[500:]]
    cm = confusion(predicted, actual, "Crypto")
    tp, tn, fp, fn = recount(predicted, actual, "Crypto")
    assert (cm.tp, cm.tn, cm.fp, cm.fn) == (tp, tn, fp, fn)
    r = rates(cm)
    assert r.tpr == tp / (tp + fn)
    assert r.fpr == fp / (fp + tn)


def test_eval_report_dict():
    cm = ConfusionMatrix.from_counts(tp=3, tn=2, fp=1, fn=0, positive="Crypto", negative="Standard")
    rep = EvalReport.build(cm, [0.9, 0.8, 0.7, 0.6, 0.2, 0.1], [1, 1, 1, 0, 0, 0], 1)
    d = rep.as_dict()
    assert d["auc"] == 1.0
    assert d["confusion"]["tp"] == 3
    assert d["roc"]["fpr"][0] == 0.0


def test_latency_examples():
    assert latency_estimate(2.41, 5) == 12.05
    assert latency_estimate(13.97, 5) == 69.85
    assert latency_estimate(0.37, 1) == 0.37
    with pytest.raises(ValueError):
        latency_estimate(0.0, 5)
