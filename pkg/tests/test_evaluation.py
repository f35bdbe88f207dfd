import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dgst.corpus import Vocab
from dgst.editops import NoiseSpec, neighbourhood_sample, new_rng
from dgst.evaluation import (
    MetricsReport,
    NgramClassifier,
    bleu,
    evaluate_system,
    format_reports,
    ngram_precisions,
    train_classifier,
    write_reports,
)
from dgst.training import make_synthetic_corpus

BUCKETS = 1 << 14  # plenty for test corpora, keeps memory small


class IdentityTransferrer:
    def transfer_batch(self, batch, **kwargs):
        return [list(s) for s in batch]


class FixedTransferrer:
    def __init__(self, sentence):
        self.sentence = sentence

    def transfer_batch(self, batch, **kwargs):
        return [list(self.sentence) for _ in batch]


def two_class_corpus(rng, n=60):
    # disjoint id ranges => perfectly separable
    neg = [list(rng.integers(4, 14, size=rng.integers(3, 8))) for _ in range(n)]
    pos = [list(rng.integers(14, 24, size=rng.integers(3, 8))) for _ in range(n)]
    return neg, pos


def test_untrained_classifier_predicts_half(rng):
    model = NgramClassifier(("neg", "pos"), buckets=BUCKETS)
    p = model.predict_proba(list(rng.integers(4, 24, size=6)))
    np.testing.assert_allclose(p, [0.5, 0.5], atol=1e-7)


def test_classifier_needs_two_classes():
    with pytest.raises(ValueError):
        train_classifier({"neg": [[4, 5]]})
    with pytest.raises(ValueError):
        train_classifier({"neg": [[4, 5]], "pos": []})


def test_classifier_disjoint_vocabularies_separate_perfectly(rng):
    neg, pos = two_class_corpus(rng)
    model = train_classifier({"neg": neg, "pos": pos}, buckets=BUCKETS, seed=3)
    hits = 0
    for s in neg:
        hits += model.classify(s)[0] == "neg"
    for s in pos:
        hits += model.classify(s)[0] == "pos"
    assert hits == len(neg) + len(pos)


def test_classifier_on_marker_corpus(rng):
    x, y, vocab = make_synthetic_corpus(300, seed=11, n_dev=100, n_test=0)
    model = train_classifier({"neg": x.train, "pos": y.train}, buckets=BUCKETS, seed=0)
    dev_hits = sum(model.classify(s)[0] == "neg" for s in x.dev)
    dev_hits += sum(model.classify(s)[0] == "pos" for s in y.dev)
    assert dev_hits / 200 >= 0.99
    train_hits = sum(model.classify(s)[0] == "neg" for s in x.train)
    train_hits += sum(model.classify(s)[0] == "pos" for s in y.train)
    assert train_hits / 600 >= dev_hits / 200 - 0.01  # no pathological underfit


def test_classifier_probabilities_sum_to_one(rng):
    neg, pos = two_class_corpus(rng, n=20)
    model = train_classifier({"neg": neg, "pos": pos}, buckets=BUCKETS)
    for s in neg[:10]:
        assert abs(model.predict_proba(s).sum() - 1.0) < 1e-6


def test_classifier_deterministic(rng):
    neg, pos = two_class_corpus(rng, n=20)
    m1 = train_classifier({"neg": neg, "pos": pos}, buckets=BUCKETS, seed=5)
    m2 = train_classifier({"neg": neg, "pos": pos}, buckets=BUCKETS, seed=5)
    s = neg[0]
    assert m1.classify(s) == m2.classify(s)
    assert m1.classify(s) == m1.classify(s)


def test_classifier_empty_sentence_gets_prior(rng):
    neg, pos = two_class_corpus(rng, n=30)
    model = train_classifier({"neg": neg * 3, "pos": pos}, buckets=BUCKETS)
    label, p = model.classify([])
    assert label == "neg" and abs(p - 0.75) < 1e-6


def test_marker_probe_is_confident(rng):
    x, y, vocab = make_synthetic_corpus(300, seed=11, n_dev=0, n_test=0)
    model = train_classifier({"neg": x.train, "pos": y.train}, buckets=BUCKETS, seed=0)
    markers = [vocab.id(t) for t in ("bad", "awful", "poor")]
    label, p = model.classify(markers)
    assert label == "neg" and p > 0.9


def test_bleu_identity_is_one(rng):
    cands = [list(rng.integers(4, 24, size=rng.integers(1, 10))) for _ in range(20)]
    assert bleu(cands, cands) == 1.0


def test_bleu_disjoint_is_zero():
    assert bleu([[4, 5, 6]], [[7, 8, 9]]) == 0.0


def test_bleu_hand_computed_clipping():
    # candidate: the the the the the the the; reference: the cat is on the mat
    cand = [[10] * 7]
    ref = [[10, 11, 12, 13, 10, 14]]
    (m1, t1), *_ = ngram_precisions(cand, ref)
    assert t1 == 7
    assert abs(m1 / t1 - 2.0 / 7.0) < 1e-9


def test_bleu_rejects_mismatched_lengths():
    with pytest.raises(ValueError):
        bleu([[4]], [[4], [5]])
    with pytest.raises(ValueError):
        bleu([], [])


def test_bleu_skips_orders_without_candidate_ngrams():
    # single 2-token candidate: orders 3 and 4 have no n-grams, must not zero out
    score = bleu([[4, 5]], [[4, 5]])
    assert score == 1.0


def test_bleu_brevity_penalty():
    # perfect 2/2 unigram+bigram match but half reference length
    score = bleu([[4, 5]], [[4, 5, 6, 7]])
    assert abs(score - np.exp(1 - 4 / 2)) < 1e-12


def test_bleu_monotone_under_increasing_noise(vocab):
    rng = new_rng(3)
    refs = [list(rng.integers(4, 24, size=12)) for _ in range(60)]
    scores = []
    for gamma in (0.0, 0.1, 0.3, 0.6):
        noise_rng = new_rng(77)
        if gamma == 0.0:
            cands = [list(r) for r in refs]
        else:
            cands = [neighbourhood_sample(r, NoiseSpec(gamma), vocab, noise_rng) for r in refs]
        scores.append(bleu(cands, refs))
    assert scores[0] == 1.0
    assert all(a >= b for a, b in zip(scores, scores[1:]))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.lists(st.integers(4, 30), min_size=1, max_size=10), min_size=1, max_size=6))
def test_bleu_self_identity_property(cands):
    assert bleu(cands, cands) == 1.0


def _fake_corpora(rng):
    x, y, vocab = make_synthetic_corpus(200, seed=21, n_dev=0, n_test=80)
    clf = train_classifier({"neg": x.train, "pos": y.train}, buckets=BUCKETS, seed=0)
    return x, y, vocab, clf


def test_evaluate_identity_transferrer(rng):
    x, y, vocab, clf = _fake_corpora(rng)
    reports = evaluate_system(IdentityTransferrer(), IdentityTransferrer(), x, y, clf)
    assert reports["x2y"].self_bleu == 1.0
    assert reports["y2x"].self_bleu == 1.0
    # outputs == inputs, so "accuracy" is the rate of source-style errors
    assert reports["x2y"].accuracy <= 0.05
    assert reports["avg"].n == 160


def test_evaluate_fixed_output_transferrer(rng):
    x, y, vocab, clf = _fake_corpora(rng)
    fixed = FixedTransferrer([vocab.id("good"), vocab.id("great")])
    reports = evaluate_system(fixed, fixed, x, y, clf)
    assert reports["x2y"].self_bleu < 0.05
    assert reports["x2y"].accuracy > 0.95  # pure positive markers


def test_evaluate_reports_ref_bleu_only_with_references(rng):
    x, y, vocab, clf = _fake_corpora(rng)
    assert x.references is not None
    with_refs = evaluate_system(IdentityTransferrer(), IdentityTransferrer(), x, y, clf)
    assert with_refs["x2y"].ref_bleu is not None
    x.references = None
    y.references = None
    without = evaluate_system(IdentityTransferrer(), IdentityTransferrer(), x, y, clf)
    assert without["x2y"].ref_bleu is None and without["avg"].ref_bleu is None


def test_evaluate_requires_classifier(rng):
    x, y, vocab, _ = _fake_corpora(rng)
    with pytest.raises(ValueError):
        evaluate_system(IdentityTransferrer(), IdentityTransferrer(), x, y, None)


def test_evaluate_aggregate_averages_directions(rng):
    x, y, vocab, clf = _fake_corpora(rng)
    reports = evaluate_system(IdentityTransferrer(), IdentityTransferrer(), x, y, clf)
    avg = reports["avg"]
    assert abs(avg.accuracy - (reports["x2y"].accuracy + reports["y2x"].accuracy) / 2) < 1e-12
    assert abs(avg.self_bleu - (reports["x2y"].self_bleu + reports["y2x"].self_bleu) / 2) < 1e-12


def test_report_files_and_formatting(tmp_path):
    reports = {
        "x2y": MetricsReport(accuracy=0.5, self_bleu=0.25, ref_bleu=0.125, n=10),
        "avg": MetricsReport(accuracy=0.5, self_bleu=0.25, ref_bleu=None, n=20),
    }
    text = format_reports(reports)
    assert "x2y" in text and "0.5000" in text
    out = tmp_path / "report.tsv"
    write_reports(reports, out)
    lines = dict(l.split("\t") for l in out.read_text().splitlines())
    assert lines["x2y.acc"] == "0.500000"
    assert lines["x2y.ref_bleu"] == "0.125000"
    assert lines["avg.n"] == "20"
    assert "avg.ref_bleu" not in lines
