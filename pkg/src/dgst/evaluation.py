"""Evaluation protocol: linear bag-of-ngrams style classifier and BLEU.

Transfer intensity is the fraction of outputs an independently trained
classifier assigns to the target style; preservation is corpus BLEU of
outputs against inputs (self-BLEU) and, when available, against human
references (ref-BLEU).
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass

import numpy as np

from .corpus import Sentence, StyleCorpus  # noqa: F401  (re-exported types)

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1


def _fnv1a(data):
    h = _FNV_OFFSET
    for byte in data:
        h = ((h ^ byte) * _FNV_PRIME) & _MASK64
    return h


def ngram_buckets(sentence, buckets):
    """Hashed unigram+bigram feature ids of a sentence of token ids."""
    raw = [int(t).to_bytes(8, "little") for t in sentence]
    feats = []
    for i, tok in enumerate(raw):
        feats.append(_fnv1a(b"u" + tok) % buckets)
        if i + 1 < len(raw):
            feats.append(_fnv1a(b"b" + tok + raw[i + 1]) % buckets)
    return np.asarray(feats, dtype=np.int64)


class NgramClassifier:
    """Averaged hashed-ngram embeddings into a linear softmax over 2 styles."""

    def __init__(self, labels, buckets=1 << 20, dim=16, seed=0):
        if len(labels) != 2:
            raise ValueError(f"binary classifier needs exactly 2 labels, got {labels!r}")
        self.labels = tuple(labels)
        self.buckets = buckets
        rng = np.random.default_rng(seed)
        self.emb = rng.uniform(-1.0 / dim, 1.0 / dim, size=(buckets, dim)).astype(np.float32)
        self.w = np.zeros((dim, 2), dtype=np.float32)
        self.b = np.zeros(2, dtype=np.float32)
        self.priors = np.array([0.5, 0.5], dtype=np.float32)

    def _pooled(self, sentence):
        feats = ngram_buckets(sentence, self.buckets)
        return self.emb[feats], feats

    def predict_proba(self, sentence):
        if not sentence:
            return self.priors.copy()
        vecs, _ = self._pooled(sentence)
        logits = vecs.mean(axis=0) @ self.w + self.b
        logits -= logits.max()
        p = np.exp(logits)
        return p / p.sum()

    def classify(self, sentence):
        """(label, probability) of the argmax style; deterministic."""
        p = self.predict_proba(sentence)
        i = int(p.argmax())
        return self.labels[i], float(p[i])

    def _sgd_example(self, sentence, label_idx, lr):
        vecs, feats = self._pooled(sentence)
        pooled = vecs.mean(axis=0)
        logits = pooled @ self.w + self.b
        logits -= logits.max()
        p = np.exp(logits)
        p /= p.sum()
        d_logits = p.copy()
        d_logits[label_idx] -= 1.0
        d_pooled = self.w @ d_logits
        self.w -= lr * np.outer(pooled, d_logits)
        self.b -= lr * d_logits
        np.add.at(self.emb, feats, -lr / len(feats) * d_pooled[None, :])
        return -math.log(max(float(p[label_idx]), 1e-30))


def train_classifier(corpora, buckets=1 << 20, dim=16, epochs=5, lr=0.5, seed=0):
    """Fit the style classifier on a {label: sentences} mapping by SGD."""
    labels = [lab for lab, sents in corpora.items() if sents]
    if len(labels) < 2:
        raise ValueError("classifier training needs two non-empty classes")
    model = NgramClassifier(labels, buckets=buckets, dim=dim, seed=seed)
    examples = []
    for idx, lab in enumerate(model.labels):
        examples.extend((s, idx) for s in corpora[lab] if s)
    counts = np.bincount([idx for _, idx in examples], minlength=2)
    model.priors = (counts / counts.sum()).astype(np.float32)
    rng = np.random.default_rng(seed)
    for _ in range(epochs):
        for i in rng.permutation(len(examples)):
            sentence, idx = examples[i]
            model._sgd_example(sentence, idx, lr)
    return model


def _ngram_counts(sentence, n):
    return Counter(tuple(sentence[i : i + n]) for i in range(len(sentence) - n + 1))


def ngram_precisions(candidates, references, max_n=4):
    """Corpus-level clipped n-gram (matches, totals) for orders 1..max_n."""
    if len(candidates) != len(references):
        raise ValueError(f"{len(candidates)} candidates vs {len(references)} references")
    if not candidates:
        raise ValueError("BLEU needs at least one candidate/reference pair")
    matches = [0] * max_n
    totals = [0] * max_n
    for cand, ref in zip(candidates, references):
        for n in range(1, max_n + 1):
            cand_counts = _ngram_counts(cand, n)
            if not cand_counts:
                continue
            ref_counts = _ngram_counts(ref, n)
            totals[n - 1] += sum(cand_counts.values())
            matches[n - 1] += sum((cand_counts & ref_counts).values())
    return list(zip(matches, totals))


def bleu(candidates, references, max_n=4):
    """Corpus BLEU in [0, 1]: clipped precisions, uniform geometric mean,
    brevity penalty; orders with zero candidate n-grams are skipped."""
    stats = ngram_precisions(candidates, references, max_n=max_n)
    cand_len = sum(len(c) for c in candidates)
    ref_len = sum(len(r) for r in references)
    if cand_len == 0:
        return 0.0
    log_sum = 0.0
    orders = 0
    for match, total in stats:
        if total == 0:
            continue
        if match == 0:
            return 0.0
        log_sum += math.log(match / total)
        orders += 1
    if orders == 0:
        return 0.0
    bp = math.exp(min(0.0, 1.0 - ref_len / cand_len))
    return bp * math.exp(log_sum / orders)


@dataclass
class MetricsReport:
    """Scores for one evaluated direction (fractions in [0, 1])."""

    accuracy: float
    self_bleu: float
    ref_bleu: float | None
    n: int


def _direction_report(model, inputs, target_label, classifier, references, batch_size):
    outputs = []
    for i in range(0, len(inputs), batch_size):
        outputs.extend(model.transfer_batch(inputs[i : i + batch_size]))
    hits = sum(1 for out in outputs if classifier.classify(out)[0] == target_label)
    report = MetricsReport(
        accuracy=hits / len(outputs),
        self_bleu=bleu(outputs, inputs),
        ref_bleu=bleu(outputs, references) if references is not None else None,
        n=len(outputs),
    )
    return report, outputs


def evaluate_system(f, g, x_corpus, y_corpus, classifier, split="test", batch_size=64):
    """Score both transfer directions plus their arithmetic mean.

    Returns {"x2y": ..., "y2x": ..., "avg": ...}; the aggregate averages
    the two directions (accuracy, BLEU) and sums their sample counts.
    """
    if classifier is None:
        raise ValueError("evaluate_system requires a trained style classifier")
    x_inputs = [s for s in getattr(x_corpus, split) if s]
    y_inputs = [s for s in getattr(y_corpus, split) if s]
    if not x_inputs or not y_inputs:
        raise ValueError(f"no {split} sentences to evaluate in one of the corpora")
    x2y, _ = _direction_report(
        f, x_inputs, y_corpus.style, classifier,
        x_corpus.references if split == "test" else None, batch_size,
    )
    y2x, _ = _direction_report(
        g, y_inputs, x_corpus.style, classifier,
        y_corpus.references if split == "test" else None, batch_size,
    )
    refs = [r.ref_bleu for r in (x2y, y2x) if r.ref_bleu is not None]
    avg = MetricsReport(
        accuracy=(x2y.accuracy + y2x.accuracy) / 2.0,
        self_bleu=(x2y.self_bleu + y2x.self_bleu) / 2.0,
        ref_bleu=sum(refs) / len(refs) if refs else None,
        n=x2y.n + y2x.n,
    )
    return {"x2y": x2y, "y2x": y2x, "avg": avg}


def format_reports(reports):
    """Human-readable table of per-direction and aggregate scores."""
    lines = [f"{'direction':<10} {'acc':>8} {'self_bleu':>10} {'ref_bleu':>9} {'n':>6}"]
    for name, rep in reports.items():
        ref = f"{rep.ref_bleu:9.4f}" if rep.ref_bleu is not None else f"{'-':>9}"
        lines.append(
            f"{name:<10} {rep.accuracy:8.4f} {rep.self_bleu:10.4f} {ref} {rep.n:6d}"
        )
    return "\n".join(lines)


def write_reports(reports, path):
    """Flat machine-readable report: `<direction>.<key><TAB><value>` lines."""
    rows = []
    for name, rep in reports.items():
        rows.append(f"{name}.acc\t{rep.accuracy:.6f}")
        rows.append(f"{name}.self_bleu\t{rep.self_bleu:.6f}")
        if rep.ref_bleu is not None:
            rows.append(f"{name}.ref_bleu\t{rep.ref_bleu:.6f}")
        rows.append(f"{name}.n\t{rep.n}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(rows) + "\n")
