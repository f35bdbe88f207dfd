import dataclasses
import math

import numpy as np
import pytest

from dgst import autograd as ag
from dgst.corpus import UNK_ID
from dgst.editops import new_rng
from dgst.evaluation import train_classifier
from dgst.params import save_params
from dgst.seq2seq import Transferrer
from dgst.training import (
    ConfigError,
    NEG_MARKERS,
    POS_MARKERS,
    TrainConfig,
    VARIANTS,
    gamma_for_epoch,
    load_config,
    make_cycle_batch,
    make_synthetic_corpus,
    reconstruction_loss,
    reconstruction_step,
    save_config,
    train_dgst,
    transfer_loss,
    transfer_step,
    write_synthetic_dataset,
)

SMALL = dict(emb_dim=16, hidden_dim=24, layers=1)


def small_cfg(**kw):
    base = dict(
        epochs=2, batch_size=8, gamma_switch_epoch=1, seed=3,
        checkpoint_dir="", log_path="", **SMALL,
    )
    base.update(kw)
    return TrainConfig(**base)


@pytest.fixture(scope="module")
def tiny_data():
    return make_synthetic_corpus(40, seed=5, n_dev=10, n_test=10)


def fresh_pair(vocab, cfg, seed=0):
    f = Transferrer(cfg.seq2seq_config(len(vocab)), np.random.default_rng(seed))
    g = Transferrer(cfg.seq2seq_config(len(vocab)), np.random.default_rng(seed + 1))
    return f, g


# ---- config ----


def test_config_validation_errors():
    with pytest.raises(ConfigError):
        TrainConfig(epochs=0).validate()
    with pytest.raises(ConfigError):
        TrainConfig(gamma_initial=-0.1).validate()
    with pytest.raises(ConfigError):
        TrainConfig(gamma_switch_epoch=99, epochs=10).validate()
    with pytest.raises(ConfigError):
        TrainConfig(variant="nope").validate()
    with pytest.raises(ConfigError):
        TrainConfig(lr=0.0).validate()


def test_config_file_roundtrip(tmp_path):
    cfg = TrainConfig(
        epochs=7, gamma_switch_epoch=5, gamma_initial=0.25,
        variant="pre-noise", freeze_check=True,
    )
    save_config(cfg, tmp_path / "t.cfg")
    assert load_config(tmp_path / "t.cfg") == cfg


def test_config_file_unknown_key_rejected(tmp_path):
    (tmp_path / "t.cfg").write_text("epochs = 100\nbogus_key = 1\n")
    with pytest.raises(ConfigError, match="bogus_key"):
        load_config(tmp_path / "t.cfg")


def test_config_file_comments_and_blanks(tmp_path):
    (tmp_path / "t.cfg").write_text("# comment\n\nepochs = 64  # trailing\n")
    assert load_config(tmp_path / "t.cfg").epochs == 64


def test_gamma_schedule():
    cfg = TrainConfig(epochs=60, gamma_initial=0.3, gamma_late=0.03, gamma_switch_epoch=50)
    assert gamma_for_epoch(cfg, 1) == 0.3
    assert gamma_for_epoch(cfg, 50) == 0.3
    assert gamma_for_epoch(cfg, 51) == 0.03
    assert gamma_for_epoch(cfg, 60) == 0.03


def test_all_variants_are_valid_configs():
    for v in VARIANTS:
        small_cfg(variant=v).validate()


# ---- synthetic corpus ----


def test_synthetic_markers_partition_styles(tiny_data):
    x, y, vocab = tiny_data
    neg_ids = {vocab.id(t) for t in NEG_MARKERS}
    pos_ids = {vocab.id(t) for t in POS_MARKERS}
    for s in x.train + x.dev + x.test:
        assert neg_ids & set(s) and not pos_ids & set(s)
    for s in y.train + y.dev + y.test:
        assert pos_ids & set(s) and not neg_ids & set(s)


def test_synthetic_marker_count_one_or_two(tiny_data):
    x, _, vocab = tiny_data
    neg_ids = {vocab.id(t) for t in NEG_MARKERS}
    counts = {sum(1 for i in s if i in neg_ids) for s in x.train}
    assert counts <= {1, 2}


def test_synthetic_same_seed_identical():
    a = make_synthetic_corpus(30, seed=9, n_dev=5, n_test=5)
    b = make_synthetic_corpus(30, seed=9, n_dev=5, n_test=5)
    assert a[0] == b[0] and a[1] == b[1] and a[2].tokens == b[2].tokens


def test_synthetic_references_swap_markers(tiny_data):
    x, _, vocab = tiny_data
    swap = dict(zip(NEG_MARKERS, POS_MARKERS))
    for src, ref in zip(x.test, x.references):
        expect = [vocab.id(swap.get(vocab.token(i), vocab.token(i))) for i in src]
        assert ref == expect


def test_synthetic_classifier_separable():
    x, y, vocab = make_synthetic_corpus(200, seed=5, n_dev=100, n_test=0)
    clf = train_classifier({"neg": x.train, "pos": y.train}, buckets=1 << 14, seed=0)
    hits = sum(clf.classify(s)[0] == "neg" for s in x.dev)
    hits += sum(clf.classify(s)[0] == "pos" for s in y.dev)
    assert hits / 200 >= 0.99


def test_write_synthetic_dataset_layout(tmp_path):
    root = write_synthetic_dataset(tmp_path / "data", n_train=12, n_dev=4, n_test=6)
    for style in ("neg", "pos"):
        for split, n in (("train", 12), ("dev", 4), ("test", 6), ("ref", 6)):
            path = root / f"{style}.{split}.txt"
            assert path.exists()
            assert len(path.read_text().splitlines()) == n


# ---- objectives ----


def test_reconstruction_gamma_zero_overfits_pair(tiny_data):
    x, _, vocab = tiny_data
    cfg = small_cfg(emb_dim=32, hidden_dim=64, lr=3e-3)
    f, _ = fresh_pair(vocab, cfg)
    pair = [x.train[0]]
    rng = new_rng(0)
    loss = math.inf
    for _ in range(500):
        loss = reconstruction_step(f, pair, 0.0, vocab, rng, cfg=cfg)
        if loss < 0.01:
            break
    assert loss < 0.01


def test_rec_no_noise_bit_matches_gamma_zero(tiny_data):
    x, _, vocab = tiny_data
    cfg = small_cfg()
    batch = x.train[:6]
    f1, _ = fresh_pair(vocab, cfg, seed=11)
    f2, _ = fresh_pair(vocab, cfg, seed=11)
    # variant "rec-no-noise" forces gamma 0 in the reconstruction term
    l1 = reconstruction_loss(f1, batch, 0.0, vocab, new_rng(4))
    l2 = reconstruction_loss(f2, batch, 0.0, vocab, new_rng(4))
    assert l1.item() == l2.item()


def test_reconstruction_loss_decreases_on_toy_corpus(tiny_data):
    x, _, vocab = tiny_data
    cfg = small_cfg(emb_dim=32, hidden_dim=64, lr=3e-3)
    f, _ = fresh_pair(vocab, cfg)
    corpus = x.train[:50]
    rng = new_rng(1)
    first = None
    last = None
    for step in range(200):
        batch = corpus[(step * 8) % 40 : (step * 8) % 40 + 8]
        loss = reconstruction_step(f, batch, 0.3, vocab, rng, cfg=cfg)
        if first is None:
            first = loss
        last = loss
    assert last < 0.5 * first


def test_empty_batch_rejected(tiny_data):
    x, _, vocab = tiny_data
    cfg = small_cfg()
    f, g = fresh_pair(vocab, cfg)
    with pytest.raises(ValueError):
        reconstruction_loss(f, [], 0.3, vocab, new_rng(0))
    with pytest.raises(ValueError):
        transfer_loss(f, g, [], 0.3, vocab, new_rng(0))


def test_transfer_step_freezes_other_transferrer(tiny_data):
    x, _, vocab = tiny_data
    cfg = small_cfg()
    f, g = fresh_pair(vocab, cfg)
    frozen_before = save_params(g.store)
    transfer_step(f, g, x.train[:6], 0.3, vocab, new_rng(2), cfg=cfg)
    assert save_params(g.store) == frozen_before
    assert all(not t.grad.any() for _, t in g.store.items())


def test_cycle_batch_full_noisifies_after_generation(tiny_data):
    x, _, vocab = tiny_data
    cfg = small_cfg()
    _, g = fresh_pair(vocab, cfg)
    sources = x.train[:5]
    cyc = make_cycle_batch(g, sources, 0.5, vocab, new_rng(3), variant="full")
    assert cyc.generated == [s or [UNK_ID] for s in g.transfer_batch(sources)]
    assert any(a != b for a, b in zip(cyc.noisy, cyc.generated))
    assert cyc.source == sources


def test_cycle_batch_tran_no_noise_keeps_generation(tiny_data):
    x, _, vocab = tiny_data
    cfg = small_cfg()
    _, g = fresh_pair(vocab, cfg)
    cyc = make_cycle_batch(g, x.train[:5], 0.5, vocab, new_rng(3), variant="tran-no-noise")
    assert cyc.noisy == cyc.generated


def test_cycle_batch_pre_noise_perturbs_before_generation(tiny_data):
    x, _, vocab = tiny_data
    cfg = small_cfg()
    _, g = fresh_pair(vocab, cfg)
    sources = x.train[:5]
    clean_gen = [s or [UNK_ID] for s in g.transfer_batch(sources)]
    cyc = make_cycle_batch(g, sources, 0.5, vocab, new_rng(3), variant="pre-noise")
    assert cyc.noisy == cyc.generated  # no post-noise
    assert cyc.generated != clean_gen  # fed noisified sources instead


# ---- loop ----


def run_small(tmp_path, tiny_data, **kw):
    x, y, vocab = tiny_data
    cfg = small_cfg(
        checkpoint_dir=str(tmp_path / "ckpt"), log_path=str(tmp_path / "train.log"), **kw
    )
    clf = train_classifier({"neg": x.train, "pos": y.train}, buckets=1 << 12, seed=0)
    return cfg, train_dgst(cfg, x, y, vocab, classifier=clf)


def test_train_writes_log_and_checkpoints(tmp_path, tiny_data):
    cfg, result = run_small(tmp_path, tiny_data)
    lines = open(cfg.log_path).read().splitlines()
    assert len(lines) == cfg.epochs
    for line in lines:
        fields = line.split("\t")
        assert len(fields) == 7
        [float(v) for v in fields]
    assert result.last_checkpoint.exists()
    assert result.best_checkpoint.exists()


def test_epoch_total_is_sum_of_four_losses(tmp_path, tiny_data):
    _, result = run_small(tmp_path, tiny_data)
    for st in result.history:
        total = st.loss_f_rec + st.loss_f_tran + st.loss_g_rec + st.loss_g_tran
        assert st.total == total


def test_variant_skips_reported_as_zero(tmp_path, tiny_data):
    _, result = run_small(tmp_path, tiny_data, variant="no-rec")
    assert all(s.loss_f_rec == 0.0 and s.loss_g_rec == 0.0 for s in result.history)
    _, result = run_small(tmp_path, tiny_data, variant="no-tran")
    assert all(s.loss_f_tran == 0.0 and s.loss_g_tran == 0.0 for s in result.history)


def test_freeze_check_runs_clean(tmp_path, tiny_data):
    cfg, result = run_small(tmp_path, tiny_data, freeze_check=True)
    assert len(result.history) == cfg.epochs


def test_invalid_config_fails_before_training(tmp_path, tiny_data):
    x, y, vocab = tiny_data
    cfg = small_cfg(epochs=0, checkpoint_dir=str(tmp_path / "nope"))
    with pytest.raises(ConfigError):
        train_dgst(cfg, x, y, vocab)
    assert not (tmp_path / "nope").exists()


def test_deterministic_checkpoints(tmp_path, tiny_data):
    x, y, vocab = tiny_data
    blobs = []
    for run in range(2):
        cfg = small_cfg(
            checkpoint_dir=str(tmp_path / f"run{run}"),
            log_path=str(tmp_path / f"run{run}.log"),
        )
        result = train_dgst(cfg, x, y, vocab, clf_buckets=1 << 12)
        blobs.append(result.last_checkpoint.read_bytes())
    assert blobs[0] == blobs[1]
