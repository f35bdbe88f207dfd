"""Dual-generator training loop.

Each transferrer learns from two summed objectives per batch: reconstruct a
sentence from its noisified self, and reconstruct it from the noisified
output of the frozen opposite transferrer. The two transferrers alternate
batch by batch; the frozen side generates without gradient tracking and is
never touched by the optimizer.
"""

from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autograd as ag
from .corpus import Sentence, StyleCorpus, UNK_ID, Vocab
from .editops import NoiseSpec, neighbourhood_sample
from .evaluation import bleu, train_classifier
from .params import adam_step, save_params, save_stores
from .seq2seq import Seq2SeqConfig, Transferrer

logger = logging.getLogger(__name__)

VARIANTS = ("full", "no-rec", "rec-no-noise", "no-tran", "tran-no-noise", "pre-noise")

NEG_MARKERS = ("bad", "awful", "poor")
POS_MARKERS = ("good", "great", "fine")


class ConfigError(ValueError):
    """Invalid training configuration."""


class FreezeViolation(AssertionError):
    """The frozen transferrer changed during the other one's update."""


@dataclass
class TrainConfig:
    epochs: int = 60
    batch_size: int = 32
    gamma_initial: float = 0.3
    gamma_late: float = 0.03
    gamma_switch_epoch: int = 50
    variant: str = "full"
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    grad_clip: float = 5.0
    seed: int = 0
    emb_dim: int = 64
    hidden_dim: int = 256
    layers: int = 4
    max_gen_extra: int = 5
    min_freq: int = 2
    max_vocab: int = 10000
    checkpoint_dir: str = "checkpoints"
    log_path: str = "train.log"
    freeze_check: bool = False

    def validate(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")
        if self.gamma_initial < 0 or self.gamma_late < 0:
            raise ConfigError("gamma values must be >= 0")
        if self.gamma_switch_epoch > self.epochs:
            raise ConfigError(
                f"gamma_switch_epoch {self.gamma_switch_epoch} exceeds epochs {self.epochs}"
            )
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if min(self.emb_dim, self.hidden_dim, self.layers, self.max_gen_extra) < 1:
            raise ConfigError("architecture dimensions must be >= 1")
        return self

    def seq2seq_config(self, vocab_size):
        return Seq2SeqConfig(
            vocab_size=vocab_size,
            emb_dim=self.emb_dim,
            hidden_dim=self.hidden_dim,
            layers=self.layers,
        )


_FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(TrainConfig)}


def _coerce(name, raw):
    kind = _FIELD_TYPES[name]
    if kind == "bool":
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ConfigError(f"{name}: expected a boolean, got {raw!r}")
    if kind == "int":
        return int(raw)
    if kind == "float":
        return float(raw)
    return raw


def load_config(path):
    """Parse a flat `key = value` config file into a TrainConfig."""
    values = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}: line {lineno}: expected `key = value`")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in _FIELD_TYPES:
            raise ConfigError(f"{path}: line {lineno}: unknown key {key!r}")
        try:
            values[key] = _coerce(key, raw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{path}: line {lineno}: {exc}") from None
    return TrainConfig(**values).validate()


def save_config(cfg, path):
    lines = [f"{f.name} = {getattr(cfg, f.name)}" for f in dataclasses.fields(TrainConfig)]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def gamma_for_epoch(cfg, epoch):
    """Noise intensity for a 1-based epoch number."""
    return cfg.gamma_initial if epoch <= cfg.gamma_switch_epoch else cfg.gamma_late


@dataclass
class CycleBatch:
    """One transfer-objective batch: sources, frozen-side generations, and
    the noisified versions actually fed to the trained transferrer."""

    source: list[Sentence]
    generated: list[Sentence]
    noisy: list[Sentence]


def _nonempty(sentences):
    """Guard degenerate sentences with a single UNK so the cycle never stalls."""
    return [s if s else [UNK_ID] for s in sentences]


def _noisify(sentences, gamma, vocab, rng):
    spec = NoiseSpec(gamma)
    return _nonempty([neighbourhood_sample(s, spec, vocab, rng) for s in sentences])


def make_cycle_batch(frozen, sources, gamma, vocab, rng, variant="full", extra_len=5):
    """Generate opposite-style counterparts (no gradients) and noisify them.

    pre-noise perturbs the sources before generation and feeds the raw
    generations; tran-no-noise skips noise entirely; the default noisifies
    after generation only.
    """
    fed = _noisify(sources, gamma, vocab, rng) if variant == "pre-noise" else sources
    generated = _nonempty(frozen.transfer_batch(fed, extra_len=extra_len))
    if variant in ("tran-no-noise", "pre-noise"):
        noisy = generated
    else:
        noisy = _noisify(generated, gamma, vocab, rng)
    return CycleBatch(source=list(sources), generated=generated, noisy=noisy)


def reconstruction_loss(model, batch, gamma, vocab, rng):
    """Denoising reconstruction: noisified sentence in, original out."""
    if not batch:
        raise ValueError("empty batch")
    noisy = _noisify(batch, gamma, vocab, rng)
    return model.teacher_forced_loss(noisy, batch)


def transfer_loss(model, frozen, batch, gamma, vocab, rng, variant="full", extra_len=5):
    """Cycle objective: map the frozen generator's noisified output back."""
    if not batch:
        raise ValueError("empty batch")
    cyc = make_cycle_batch(frozen, batch, gamma, vocab, rng, variant=variant, extra_len=extra_len)
    return model.teacher_forced_loss(cyc.noisy, batch)


def _optimize(model, loss, cfg):
    ag.backward(loss)
    adam_step(
        model.store,
        lr=cfg.lr,
        beta1=cfg.beta1,
        beta2=cfg.beta2,
        eps=cfg.adam_eps,
        clip_norm=cfg.grad_clip,
    )


def reconstruction_step(model, batch, gamma, vocab, rng, cfg=None):
    """One optimizer update on the reconstruction objective alone."""
    cfg = cfg or TrainConfig()
    loss = reconstruction_loss(model, batch, gamma, vocab, rng)
    _optimize(model, loss, cfg)
    return loss.item()


def transfer_step(model, frozen, batch, gamma, vocab, rng, variant="full", cfg=None):
    """One optimizer update on the transfer objective alone; frozen side untouched."""
    cfg = cfg or TrainConfig()
    loss = transfer_loss(
        model, frozen, batch, gamma, vocab, rng,
        variant=variant, extra_len=cfg.max_gen_extra,
    )
    _optimize(model, loss, cfg)
    return loss.item()


def _transferrer_losses(model, frozen, batch, gamma, cfg, vocab, rng):
    """(reconstruction, transfer) loss tensors for one batch, per variant."""
    rec = None
    if cfg.variant != "no-rec":
        rec_gamma = 0.0 if cfg.variant == "rec-no-noise" else gamma
        rec = reconstruction_loss(model, batch, rec_gamma, vocab, rng)
    tran = None
    if cfg.variant != "no-tran":
        tran = transfer_loss(
            model, frozen, batch, gamma, vocab, rng,
            variant=cfg.variant, extra_len=cfg.max_gen_extra,
        )
    return rec, tran


def _frozen_grads_are_zero(store):
    return all(not t.grad.any() for _, t in store.items())


@dataclass
class EpochStats:
    epoch: int
    loss_f_rec: float
    loss_f_tran: float
    loss_g_rec: float
    loss_g_tran: float
    dev_accuracy: float
    dev_self_bleu: float

    @property
    def total(self):
        return self.loss_f_rec + self.loss_f_tran + self.loss_g_rec + self.loss_g_tran

    def log_line(self):
        return (
            f"{self.epoch}\t{self.loss_f_rec:.6f}\t{self.loss_f_tran:.6f}"
            f"\t{self.loss_g_rec:.6f}\t{self.loss_g_tran:.6f}"
            f"\t{self.dev_accuracy:.4f}\t{self.dev_self_bleu:.4f}"
        )


@dataclass
class TrainResult:
    f: Transferrer
    g: Transferrer
    classifier: object
    vocab: Vocab
    history: list[EpochStats] = field(default_factory=list)
    best_epoch: int = 0
    best_dev_accuracy: float = 0.0
    checkpoint_dir: Path | None = None

    @property
    def last_checkpoint(self):
        return None if self.checkpoint_dir is None else self.checkpoint_dir / "last.ckpt"

    @property
    def best_checkpoint(self):
        return None if self.checkpoint_dir is None else self.checkpoint_dir / "best.ckpt"


def save_pair_checkpoint(f, g):
    """Serialize both transferrers into one blob under `f.`/`g.` prefixes."""
    return save_stores({"f.": f.store, "g.": g.store})


def _dev_metrics(f, g, x_corpus, y_corpus, classifier, batch_size):
    """Aggregate dev accuracy and self-BLEU over both directions."""
    accs, bleus = [], []
    for model, corpus, target in ((f, x_corpus, y_corpus.style), (g, y_corpus, x_corpus.style)):
        inputs = [s for s in corpus.dev if s]
        if not inputs:
            continue
        outputs = []
        for i in range(0, len(inputs), batch_size):
            outputs.extend(model.transfer_batch(inputs[i : i + batch_size]))
        accs.append(sum(classifier.classify(o)[0] == target for o in outputs) / len(outputs))
        bleus.append(bleu(outputs, inputs))
    if not accs:
        return math.nan, math.nan
    return sum(accs) / len(accs), sum(bleus) / len(bleus)


def train_dgst(cfg, x_corpus, y_corpus, vocab, classifier=None, clf_buckets=1 << 20):
    """Train the f/g pair on two non-parallel corpora.

    Per epoch, Y batches update f (g frozen) and X batches update g
    (f frozen), alternating batch by batch; both objectives of one
    transferrer are summed into a single optimizer step. Writes a
    tab-separated metric line per epoch plus last/best checkpoints.
    """
    cfg.validate()
    x_train = [s for s in x_corpus.train if s]
    y_train = [s for s in y_corpus.train if s]
    if not x_train or not y_train:
        raise ValueError("both corpora need at least one non-empty training sentence")

    seeds = np.random.SeedSequence(cfg.seed).spawn(6)
    rng_init_f, rng_init_g, rng_noise_f, rng_noise_g, rng_shuffle = (
        np.random.default_rng(s) for s in seeds[:5]
    )
    clf_seed = int(seeds[5].generate_state(1)[0])

    arch = cfg.seq2seq_config(len(vocab))
    f = Transferrer(arch, rng_init_f)
    g = Transferrer(arch, rng_init_g)
    if classifier is None:
        classifier = train_classifier(
            {x_corpus.style: x_train, y_corpus.style: y_train},
            buckets=clf_buckets, seed=clf_seed,
        )

    ckpt_dir = None
    if cfg.checkpoint_dir:
        ckpt_dir = Path(cfg.checkpoint_dir)
        ckpt_dir.mkdir(parents=True, exist_ok=True)
    log_fh = open(cfg.log_path, "w", encoding="utf-8") if cfg.log_path else None

    result = TrainResult(f=f, g=g, classifier=classifier, vocab=vocab, checkpoint_dir=ckpt_dir)
    n_batches = max(
        (len(x_train) + cfg.batch_size - 1) // cfg.batch_size,
        (len(y_train) + cfg.batch_size - 1) // cfg.batch_size,
    )

    def batches(order, data):
        for b in range(n_batches):
            lo = (b * cfg.batch_size) % len(data)
            idx = [order[(lo + j) % len(data)] for j in range(min(cfg.batch_size, len(data)))]
            yield [data[i] for i in idx]

    try:
        for epoch in range(1, cfg.epochs + 1):
            gamma = gamma_for_epoch(cfg, epoch)
            x_order = rng_shuffle.permutation(len(x_train))
            y_order = rng_shuffle.permutation(len(y_train))
            sums = np.zeros(4)
            counts = np.zeros(4)
            for step, (y_batch, x_batch) in enumerate(
                zip(batches(y_order, y_train), batches(x_order, x_train))
            ):
                check = cfg.freeze_check and step == 0
                for slot, (model, frozen, batch, rng) in enumerate(
                    ((f, g, y_batch, rng_noise_f), (g, f, x_batch, rng_noise_g))
                ):
                    frozen_before = save_params(frozen.store) if check else None
                    rec, tran = _transferrer_losses(model, frozen, batch, gamma, cfg, vocab, rng)
                    terms = [t for t in (rec, tran) if t is not None]
                    loss = terms[0] if len(terms) == 1 else ag.add(terms[0], terms[1])
                    _optimize(model, loss, cfg)
                    if rec is not None:
                        sums[2 * slot] += rec.item()
                        counts[2 * slot] += 1
                    if tran is not None:
                        sums[2 * slot + 1] += tran.item()
                        counts[2 * slot + 1] += 1
                    if check:
                        if not _frozen_grads_are_zero(frozen.store):
                            raise FreezeViolation(
                                "gradients leaked into the frozen transferrer"
                            )
                        if save_params(frozen.store) != frozen_before:
                            raise FreezeViolation(
                                "frozen transferrer bytes changed during the update"
                            )
            means = np.divide(sums, counts, out=np.zeros(4), where=counts > 0)
            dev_acc, dev_bleu = _dev_metrics(
                f, g, x_corpus, y_corpus, classifier, batch_size=64
            )
            stats = EpochStats(epoch, *means.tolist(), dev_acc, dev_bleu)
            result.history.append(stats)
            if log_fh:
                log_fh.write(stats.log_line() + "\n")
                log_fh.flush()
            logger.info("epoch %s", stats.log_line())
            if ckpt_dir is not None:
                blob = save_pair_checkpoint(f, g)
                result.last_checkpoint.write_bytes(blob)
                if not math.isnan(dev_acc) and dev_acc >= result.best_dev_accuracy:
                    result.best_dev_accuracy = dev_acc
                    result.best_epoch = epoch
                    result.best_checkpoint.write_bytes(blob)
    finally:
        if log_fh:
            log_fh.close()
    return result


def _successor_table(rng, size, branch=2):
    """Sparse first-order chain: each content token gets `branch` followers."""
    return np.stack([rng.choice(size, size=branch, replace=False) for _ in range(size)])


def _synthetic_tokens(
    rng, content, succ, markers, other_markers, length_range=(10, 16),
    two_marker_p=0.15, cross_marker_p=0.0, anchors=12,
):
    """One marker-bearing sentence over a random content walk.

    Markers slot in after anchor-set occurrences (position 0 when the walk
    has none), so marker placement is a function of visible content: the
    transferrers can ground it, mirroring how sentiment words attach to
    syntactic positions in real reviews. With cross_marker_p > 0, a
    two-marker sentence occasionally carries one opposite-style marker as
    well (majority margin stays >= 1), the way real review corpora mix
    polarity words at unequal rates.
    """
    lo, hi = length_range
    length = int(rng.integers(lo, hi + 1))
    walk = [int(rng.integers(len(content)))]
    for _ in range(length - 1):
        walk.append(int(succ[walk[-1]][int(rng.integers(succ.shape[1]))]))
    tokens = [content[i] for i in walk]
    picks = [markers[int(rng.integers(len(markers)))]]
    if rng.random() < two_marker_p:
        picks.append(markers[int(rng.integers(len(markers)))])
        if rng.random() < cross_marker_p:
            picks.append(other_markers[int(rng.integers(len(other_markers)))])
    if anchors:
        slots = [i + 1 for i, idx in enumerate(walk) if idx < anchors]
        slots = (slots + [0] * len(picks))[: len(picks)]
    else:
        slots = [int(rng.integers(len(tokens) + 1)) for _ in picks]
    # descending order keeps earlier insertions from shifting later slots
    for slot, marker in sorted(zip(slots, picks), reverse=True):
        tokens.insert(slot, marker)
    return tokens


def _swap_markers(tokens):
    swap = dict(zip(NEG_MARKERS, POS_MARKERS)) | dict(zip(POS_MARKERS, NEG_MARKERS))
    return [swap.get(t, t) for t in tokens]


def generate_synthetic_lines(
    n_train, content_vocab_size=50, seed=0, n_dev=200, n_test=500, cross_marker_p=0.0
):
    """Token lines for a two-style marker corpus plus oracle references.

    Negative sentences carry 1-2 markers from {bad, awful, poor} spliced
    into content drawn from a sparse random chain shared across styles
    (local structure stands in for natural-text regularity); positive
    sentences mirror them with {good, great, fine}. References are the
    marker-swapped test lines.
    """
    if n_train < 1:
        raise ValueError("need at least one training sentence per style")
    rng = np.random.default_rng(seed)
    content = [f"c{i:03d}" for i in range(content_vocab_size)]
    succ = _successor_table(rng, content_vocab_size)
    data = {}
    for style, markers, other in (
        ("neg", NEG_MARKERS, POS_MARKERS),
        ("pos", POS_MARKERS, NEG_MARKERS),
    ):
        for split, n in (("train", n_train), ("dev", n_dev), ("test", n_test)):
            data[style, split] = [
                _synthetic_tokens(rng, content, succ, markers, other, cross_marker_p=cross_marker_p)
                for _ in range(n)
            ]
        data[style, "ref"] = [_swap_markers(t) for t in data[style, "test"]]
    return data, content


def make_synthetic_corpus(
    n_train, content_vocab_size=50, seed=0, n_dev=200, n_test=500, cross_marker_p=0.0
):
    """In-memory synthetic dataset: (neg corpus, pos corpus, vocab)."""
    data, content = generate_synthetic_lines(
        n_train, content_vocab_size=content_vocab_size, seed=seed,
        n_dev=n_dev, n_test=n_test, cross_marker_p=cross_marker_p,
    )
    vocab = Vocab(tuple(content) + NEG_MARKERS + POS_MARKERS)
    encode = lambda lines: [[vocab.id(t) for t in toks] for toks in lines]  # noqa: E731
    corpora = []
    for style in ("neg", "pos"):
        corpora.append(
            StyleCorpus(
                style=style,
                train=encode(data[style, "train"]),
                dev=encode(data[style, "dev"]),
                test=encode(data[style, "test"]),
                references=encode(data[style, "ref"]),
            )
        )
    return corpora[0], corpora[1], vocab


def write_synthetic_dataset(
    root, n_train, content_vocab_size=50, seed=0, n_dev=200, n_test=500, cross_marker_p=0.0
):
    """Write the synthetic dataset in the `<style>.<split>.txt` layout."""
    data, _ = generate_synthetic_lines(
        n_train, content_vocab_size=content_vocab_size, seed=seed,
        n_dev=n_dev, n_test=n_test, cross_marker_p=cross_marker_p,
    )
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    for (style, split), lines in data.items():
        path = root / f"{style}.{split}.txt"
        path.write_text("".join(" ".join(toks) + "\n" for toks in lines), encoding="utf-8")
    return root
