"""Word-level edit operations, neighbourhood sampling, and edit distance.

The noisifier perturbs a sentence by k = round(m * len) edits, where the
edit fraction m is the absolute value of a zero-mean Gaussian with
sigma = gamma * sqrt(pi/2) (a half-normal whose mean is exactly gamma),
clamped to [0, 1]. Edit kinds are drawn uniformly from the enabled subset
of {replace, insert, delete} and applied sequentially.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

EDIT_KINDS = ("replace", "insert", "delete")

# Deterministic generator state; same seed, same draw sequence.
RngState = np.random.Generator


def new_rng(seed):
    return np.random.default_rng(seed)


@dataclass(frozen=True)
class NoiseSpec:
    """Noise intensity gamma (mean edit fraction) and enabled edit kinds."""

    gamma: float
    ops_enabled: tuple[str, ...] = EDIT_KINDS

    def __post_init__(self):
        if self.gamma < 0:
            raise ValueError(f"gamma must be >= 0, got {self.gamma}")
        if not self.ops_enabled:
            raise ValueError("ops_enabled must not be empty")
        unknown = set(self.ops_enabled) - set(EDIT_KINDS)
        if unknown:
            raise ValueError(f"unknown edit kinds: {sorted(unknown)}")


def fraction_sigma(gamma):
    """Gaussian sigma whose folded distribution has mean gamma."""
    return gamma * math.sqrt(math.pi / 2.0)


def folded_normal_draws(gamma, rng, n):
    """n pre-clamp draws |z|, z ~ Normal(0, sigma^2); empirical mean ~ gamma."""
    return np.abs(rng.normal(0.0, fraction_sigma(gamma), size=n))


def sample_edit_fraction(spec, rng):
    """One edit fraction m: folded-normal draw clamped into [0, 1]."""
    m = abs(rng.normal(0.0, fraction_sigma(spec.gamma)))
    return min(m, 1.0)


def _random_word(vocab, rng):
    n_real = len(vocab) - 4
    if n_real <= 0:
        raise ValueError("vocabulary has no non-special tokens to sample from")
    return 4 + int(rng.integers(n_real))


def apply_edits(sentence, k, spec, vocab, rng):
    """Apply exactly k sequential edits; returns a new sentence.

    Kinds are uniform over spec.ops_enabled; positions uniform over valid
    slots; replacement/insertion words uniform over non-special vocab ids.
    Deletion (or replacement) on an empty sentence falls back to insertion.
    """
    if k < 0:
        raise ValueError(f"edit count must be >= 0, got {k}")
    if k > 0 and len(vocab) <= 4:
        raise ValueError("vocabulary has no non-special tokens to sample from")
    out = list(sentence)
    for _ in range(k):
        kind = spec.ops_enabled[int(rng.integers(len(spec.ops_enabled)))]
        if not out and kind != "insert":
            kind = "insert"
        if kind == "replace":
            out[int(rng.integers(len(out)))] = _random_word(vocab, rng)
        elif kind == "insert":
            out.insert(int(rng.integers(len(out) + 1)), _random_word(vocab, rng))
        else:
            del out[int(rng.integers(len(out)))]
    return out


def neighbourhood_sample(sentence, spec, vocab, rng, with_count=False):
    """Draw one sentence from the noise neighbourhood of the input.

    Samples m, applies k = round(m * len) edits; k may be 0, in which case
    the input itself is returned (the neighbourhood contains the original).
    """
    if not sentence:
        raise ValueError("cannot noisify an empty sentence")
    m = sample_edit_fraction(spec, rng)
    k = int(round(m * len(sentence)))
    out = apply_edits(sentence, k, spec, vocab, rng)
    return (out, k) if with_count else out


def edit_distance(a, b):
    """Word-level Levenshtein distance with unit replace/insert/delete costs."""
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, tok_a in enumerate(a, 1):
        curr = [i] + [0] * len(b)
        for j, tok_b in enumerate(b, 1):
            curr[j] = min(
                prev[j] + 1,
                curr[j - 1] + 1,
                prev[j - 1] + (tok_a != tok_b),
            )
        prev = curr
    return prev[-1]
