"""One style transferrer: stacked BiLSTM encoder, stacked LSTM decoder.

The final forward/backward encoder states of each layer pass through a
tanh bridge to seed the matching decoder layer. Decoding is greedy and
deterministic; generated sentences never contain special tokens.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .corpus import BOS_ID, EOS_ID, PAD_ID, UNK_ID
from .params import CheckpointError, ParamStore, read_entries, restore_entries


@dataclass(frozen=True)
class Seq2SeqConfig:
    vocab_size: int
    emb_dim: int = 64
    hidden_dim: int = 256
    layers: int = 4

    def __post_init__(self):
        if self.vocab_size < 5:
            raise ValueError("vocab must hold the 4 specials plus at least one word")
        if min(self.emb_dim, self.hidden_dim, self.layers) < 1:
            raise ValueError(f"non-positive dimension in {self}")


@dataclass(frozen=True)
class GenerationConfig:
    max_len: int
    mode: str = "greedy"

    def __post_init__(self):
        if self.max_len < 1:
            raise ValueError(f"max_len must be >= 1, got {self.max_len}")
        if self.mode != "greedy":
            raise ValueError(f"unsupported generation mode {self.mode!r}")


class Transferrer:
    """Sequence-to-sequence style transferrer over a shared vocabulary."""

    def __init__(self, cfg, rng, dtype=np.float32):
        self.cfg = cfg
        self.dtype = np.dtype(dtype)
        self.store = ParamStore(dtype)
        v, e, h, layers = cfg.vocab_size, cfg.emb_dim, cfg.hidden_dim, cfg.layers

        def uniform(shape, bound):
            return rng.uniform(-bound, bound, size=shape)

        def lstm_bias():
            b = np.zeros(4 * h)
            b[h : 2 * h] = 1.0  # open forget gates at init
            return b

        bound = 1.0 / math.sqrt(h)
        self.emb = self.store.add("emb", rng.normal(0.0, 1.0, size=(v, e)))
        self._enc = []
        for l in range(layers):
            in_dim = e if l == 0 else 2 * h
            dirs = {}
            for d in ("fw", "bw"):
                dirs[d] = (
                    self.store.add(f"enc{l}.{d}.wx", uniform((in_dim, 4 * h), bound)),
                    self.store.add(f"enc{l}.{d}.wh", uniform((h, 4 * h), bound)),
                    self.store.add(f"enc{l}.{d}.b", lstm_bias()),
                )
            self._enc.append(dirs)
        self._bridge = []
        for l in range(layers):
            self._bridge.append(
                tuple(
                    (
                        self.store.add(f"bridge{l}.{s}.w", uniform((2 * h, h), 1.0 / math.sqrt(2 * h))),
                        self.store.add(f"bridge{l}.{s}.b", np.zeros(h)),
                    )
                    for s in ("h", "c")
                )
            )
        self._dec = []
        for l in range(layers):
            # layer 0 sees the embedded token plus the per-sentence context
            # vector (top bridged encoder state), re-fed at every step
            in_dim = e + h if l == 0 else h
            self._dec.append(
                (
                    self.store.add(f"dec{l}.wx", uniform((in_dim, 4 * h), bound)),
                    self.store.add(f"dec{l}.wh", uniform((h, 4 * h), bound)),
                    self.store.add(f"dec{l}.b", lstm_bias()),
                )
            )
        self.out_w = self.store.add("out.w", uniform((h, v), bound))
        self.out_b = self.store.add("out.b", np.zeros(v))

    def _pad_batch(self, batch):
        lens = [len(s) for s in batch]
        ids = np.full((len(batch), max(lens)), PAD_ID, dtype=np.int64)
        keep = np.zeros(ids.shape, dtype=self.dtype)
        for i, s in enumerate(batch):
            ids[i, : lens[i]] = s
            keep[i, : lens[i]] = 1.0
        return ids, keep

    def encode(self, batch):
        """Initial decoder states (h, c), one [B, H] tensor per layer.

        Padded positions freeze the running states, so each sentence's
        final state is taken at its true length.
        """
        if not batch:
            raise ValueError("cannot encode an empty batch")
        if any(len(s) == 0 for s in batch):
            raise ValueError("cannot encode an empty sentence")
        ids, keep = self._pad_batch(batch)
        n, t_max = ids.shape
        h_dim = self.cfg.hidden_dim
        keep_cols = [ag.constant(keep[:, t : t + 1]) for t in range(t_max)]

        def mix(new, old, t):
            return ag.mask_mix(new, old, keep_cols[t])

        seq = [ag.embedding(self.emb, ids[:, t]) for t in range(t_max)]
        finals = []
        for layer in self._enc:
            states = {}
            outs = {}
            for d, order in (("fw", range(t_max)), ("bw", reversed(range(t_max)))):
                wx, wh, b = layer[d]
                h = ag.zeros((n, h_dim), self.dtype)
                c = ag.zeros((n, h_dim), self.dtype)
                outs[d] = [None] * t_max
                for t in order:
                    h_new, c_new = ag.lstm_step(seq[t], h, c, wx, wh, b)
                    h = mix(h_new, h, t)
                    c = mix(c_new, c, t)
                    outs[d][t] = h
                states[d] = (h, c)
            finals.append(states)
            seq = [ag.concat([outs["fw"][t], outs["bw"][t]], axis=1) for t in range(t_max)]

        h0s, c0s = [], []
        for states, ((hw, hb), (cw, cb)) in zip(finals, self._bridge):
            (hf, cf), (hb_state, cb_state) = states["fw"], states["bw"]
            h0s.append(ag.tanh(ag.linear(ag.concat([hf, hb_state], axis=1), hw, hb)))
            c0s.append(ag.tanh(ag.linear(ag.concat([cf, cb_state], axis=1), cw, cb)))
        return h0s, c0s

    def _decoder_step(self, prev_ids, hs, cs, ctx):
        """Advance every decoder layer one step; returns top-layer output."""
        x = ag.concat([ag.embedding(self.emb, prev_ids), ctx], axis=1)
        for l, (wx, wh, b) in enumerate(self._dec):
            hs[l], cs[l] = ag.lstm_step(x, hs[l], cs[l], wx, wh, b)
            x = hs[l]
        return x

    def teacher_forced_loss(self, inputs, targets):
        """Masked mean cross-entropy of target+EOS under teacher forcing."""
        if len(inputs) != len(targets):
            raise ValueError(f"{len(inputs)} inputs vs {len(targets)} targets")
        if any(len(s) == 0 for s in targets):
            raise ValueError("cannot score an empty target sentence")
        hs, cs = self.encode(inputs)
        ctx = hs[-1]
        n = len(targets)
        t_max = max(len(s) for s in targets) + 1  # +1 for the EOS slot
        dec_in = np.full((n, t_max), PAD_ID, dtype=np.int64)
        dec_tgt = np.full((n, t_max), PAD_ID, dtype=np.int64)
        mask = np.zeros((n, t_max), dtype=bool)
        for i, tgt in enumerate(targets):
            dec_in[i, 0] = BOS_ID
            dec_in[i, 1 : len(tgt) + 1] = tgt
            dec_tgt[i, : len(tgt)] = tgt
            dec_tgt[i, len(tgt)] = EOS_ID
            mask[i, : len(tgt) + 1] = True
        step_logits = []
        for t in range(t_max):
            top = self._decoder_step(dec_in[:, t], hs, cs, ctx)
            step_logits.append(ag.linear(top, self.out_w, self.out_b))
        logits = ag.concat(step_logits, axis=0)  # step-major rows
        return ag.softmax_cross_entropy(logits, dec_tgt.T.reshape(-1), mask.T.reshape(-1))

    def transfer_batch(self, batch, extra_len=5, max_len=None):
        """Greedy-decode every sentence; no gradients are recorded.

        Each sentence stops at EOS or at min(len + extra_len, max_len)
        tokens, whichever comes first.
        """
        if not batch:
            return []
        caps = []
        for s in batch:
            cap = len(s) + extra_len if extra_len is not None else max_len
            if max_len is not None:
                cap = min(cap, max_len)
            caps.append(cap)
        with ag.no_grad():
            hs, cs = self.encode(batch)
            ctx = hs[-1]
            n = len(batch)
            prev = np.full(n, BOS_ID, dtype=np.int64)
            done = np.zeros(n, dtype=bool)
            outs = [[] for _ in batch]
            for _ in range(max(caps)):
                top = self._decoder_step(prev, hs, cs, ctx)
                logits = ag.linear(top, self.out_w, self.out_b).data.copy()
                logits[:, [PAD_ID, BOS_ID, UNK_ID]] = -np.inf
                nxt = logits.argmax(axis=1)
                for i in range(n):
                    if done[i]:
                        continue
                    if nxt[i] == EOS_ID:
                        done[i] = True
                    else:
                        outs[i].append(int(nxt[i]))
                        if len(outs[i]) >= caps[i]:
                            done[i] = True
                if done.all():
                    break
                prev = np.where(done, EOS_ID, nxt)
        return outs

    def transfer(self, sentence, gen_cfg=None):
        """Greedily transfer one sentence (defaults to a len+5 cap)."""
        if gen_cfg is None:
            gen_cfg = GenerationConfig(max_len=len(sentence) + 5)
        return self.transfer_batch([sentence], extra_len=None, max_len=gen_cfg.max_len)[0]


def config_from_params(params):
    """Recover architecture dims from a checkpoint's tensor shapes."""
    try:
        v, e = params["emb"].shape
        h = params["dec0.wh"].shape[0]
    except KeyError as exc:
        raise CheckpointError(f"checkpoint is missing tensor {exc.args[0]!r}") from None
    layers = sum(1 for name in params if name.startswith("dec") and name.endswith(".wx"))
    return Seq2SeqConfig(vocab_size=v, emb_dim=e, hidden_dim=h, layers=layers)


def load_transferrer(data, prefix):
    """Rebuild a transferrer from one prefix of a combined checkpoint."""
    entries = [(n, a) for n, a in read_entries(data) if n.startswith(prefix)]
    if not entries:
        raise CheckpointError(f"checkpoint has no tensors under prefix {prefix!r}")
    params = {
        n[len(prefix) :]: a
        for n, a in entries
        if not n.endswith((".adam1", ".adam2")) and n[len(prefix) :] != "step"
    }
    cfg = config_from_params(params)
    model = Transferrer(cfg, rng=np.random.default_rng(0))
    restore_entries(model.store, entries, prefix=prefix)
    return model
