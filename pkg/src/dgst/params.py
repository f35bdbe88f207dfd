"""Named parameter storage, Adam updates, and the binary checkpoint codec.

Checkpoint layout (little-endian): magic ``DGST``, u16 version, u32 tensor
count; then per tensor u16 name length, UTF-8 name, u8 dtype code (0 = f32),
u8 rank, u32 dims[rank], raw f32 payload. Adam state rides along as
``<name>.adam1`` / ``<name>.adam2`` tensors plus a ``step`` scalar.
"""

from __future__ import annotations

import struct

import numpy as np

from .autograd import Tensor

MAGIC = b"DGST"
VERSION = 1
_DTYPE_F32 = 0


class CheckpointError(ValueError):
    """Malformed or mismatched checkpoint payload."""


class BadMagicError(CheckpointError):
    pass


class VersionError(CheckpointError):
    pass


class TruncatedError(CheckpointError):
    pass


class ParamStore:
    """Insertion-ordered map of trainable tensors with grad + Adam buffers."""

    def __init__(self, dtype=np.float32):
        self.dtype = np.dtype(dtype)
        self._params: dict[str, Tensor] = {}
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}
        self.step = 0

    def add(self, name, array):
        if name in self._params:
            raise ValueError(f"parameter {name!r} already registered")
        t = Tensor(np.array(array, dtype=self.dtype), requires_grad=True)
        t.grad = np.zeros_like(t.data)
        self._params[name] = t
        self._m[name] = np.zeros_like(t.data)
        self._v[name] = np.zeros_like(t.data)
        return t

    def __getitem__(self, name):
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def __len__(self):
        return len(self._params)

    def names(self):
        return list(self._params)

    def items(self):
        return self._params.items()

    def moments(self, name):
        return self._m[name], self._v[name]

    def zero_grad(self):
        for t in self._params.values():
            t.grad[...] = 0.0

    def grad_norm(self):
        total = 0.0
        for t in self._params.values():
            total += float(np.square(t.grad, dtype=np.float64).sum())
        return float(np.sqrt(total))

    def clip_grad_norm(self, max_norm):
        """Scale all gradients so their global L2 norm is at most max_norm."""
        norm = self.grad_norm()
        if norm > max_norm > 0.0:
            factor = np.asarray(max_norm / norm, dtype=self.dtype)
            for t in self._params.values():
                t.grad *= factor
        return norm


def adam_step(store, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8, clip_norm=None):
    """Bias-corrected Adam update over every parameter; grads zeroed after."""
    if clip_norm is not None:
        store.clip_grad_norm(clip_norm)
    store.step += 1
    t = store.step
    bc1 = 1.0 - beta1**t
    bc2 = 1.0 - beta2**t
    for name, p in store.items():
        g = p.grad
        m, v = store.moments(name)
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * np.square(g)
        p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
        g[...] = 0.0


def _pack_entry(name, arr):
    encoded = name.encode("utf-8")
    arr = np.asarray(arr)
    header = struct.pack("<H", len(encoded)) + encoded
    header += struct.pack("<BB", _DTYPE_F32, arr.ndim)
    header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return header + arr.astype("<f4", copy=False).tobytes()


class _Reader:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def take(self, n, what):
        if self.pos + n > len(self.data):
            raise TruncatedError(f"checkpoint truncated while reading {what}")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt, what):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def write_entries(entries):
    """Serialize ``(name, float32 array)`` pairs to checkpoint bytes."""
    blob = [MAGIC, struct.pack("<HI", VERSION, len(entries))]
    for name, arr in entries:
        blob.append(_pack_entry(name, arr))
    return b"".join(blob)


def read_entries(data):
    """Parse checkpoint bytes back into an ordered list of (name, array)."""
    r = _Reader(data)
    if r.take(4, "magic") != MAGIC:
        raise BadMagicError("not a DGST checkpoint (bad magic)")
    (version,) = r.unpack("<H", "version")
    if version != VERSION:
        raise VersionError(f"unsupported checkpoint version {version}")
    (count,) = r.unpack("<I", "tensor count")
    entries = []
    for _ in range(count):
        (name_len,) = r.unpack("<H", "name length")
        name = r.take(name_len, "name").decode("utf-8")
        dtype_code, rank = r.unpack("<BB", f"{name} header")
        if dtype_code != _DTYPE_F32:
            raise CheckpointError(f"unknown dtype code {dtype_code} for {name!r}")
        dims = r.unpack(f"<{rank}I", f"{name} dims") if rank else ()
        n_items = int(np.prod(dims, dtype=np.int64)) if rank else 1
        raw = r.take(4 * n_items, f"{name} data")
        arr = np.frombuffer(raw, dtype="<f4").reshape(dims).astype(np.float32)
        entries.append((name, arr))
    if r.pos != len(data):
        raise CheckpointError(f"{len(data) - r.pos} trailing bytes after last tensor")
    return entries


def save_params(store, prefix=""):
    """Serialize a store (params, Adam moments, step) under a name prefix."""
    if store.dtype != np.float32:
        raise ValueError(f"only float32 stores are serializable, got {store.dtype}")
    entries = []
    for name, t in store.items():
        m, v = store.moments(name)
        entries.append((prefix + name, t.data))
        entries.append((prefix + name + ".adam1", m))
        entries.append((prefix + name + ".adam2", v))
    entries.append((prefix + "step", np.asarray(float(store.step), dtype=np.float32)))
    return write_entries(entries)


def save_stores(stores):
    """Serialize several stores into one checkpoint, keyed by name prefix."""
    blobs = []
    total = 0
    for prefix, store in stores.items():
        body = save_params(store, prefix=prefix)
        entries_start = 4 + struct.calcsize("<HI")
        (_, n) = struct.unpack("<HI", body[4:entries_start])
        blobs.append(body[entries_start:])
        total += n
    return MAGIC + struct.pack("<HI", VERSION, total) + b"".join(blobs)


def _group_entries(entries, prefix):
    params = {}
    moments = {}
    step = None
    for name, arr in entries:
        if not name.startswith(prefix):
            raise CheckpointError(f"unexpected tensor {name!r} (outside prefix {prefix!r})")
        base = name[len(prefix) :]
        if base == "step":
            step = int(arr)
        elif base.endswith(".adam1") or base.endswith(".adam2"):
            moments[base] = arr
        else:
            params[base] = arr
    for mname in moments:
        if mname.rsplit(".", 1)[0] not in params:
            raise CheckpointError(f"unexpected tensor {prefix + mname!r}: no matching parameter")
    return params, moments, step


def load_params(data, prefix=""):
    """Rebuild a ParamStore from checkpoint bytes (see also load_into)."""
    entries = read_entries(data)
    if prefix:
        entries = [(n, a) for n, a in entries if n.startswith(prefix)]
    params, moments, step = _group_entries(entries, prefix)
    store = ParamStore()
    for name, arr in params.items():
        store.add(name, arr)
        m = moments.get(name + ".adam1")
        v = moments.get(name + ".adam2")
        if m is not None:
            _assign_moment(store, name, 0, m)
        if v is not None:
            _assign_moment(store, name, 1, v)
    if step is not None:
        store.step = step
    return store


def _assign_moment(store, name, which, arr):
    m, v = store.moments(name)
    target = m if which == 0 else v
    if target.shape != arr.shape:
        raise CheckpointError(f"moment shape {arr.shape} does not match {name!r} {target.shape}")
    target[...] = arr


def load_into(store, data, prefix=""):
    """Restore checkpoint bytes into an already-built store, strictly.

    Every tensor in the payload must match a registered parameter (by name
    and shape) and every registered parameter must be present.
    """
    entries = read_entries(data)
    if prefix:
        entries = [(n, a) for n, a in entries if n.startswith(prefix)]
    restore_entries(store, entries, prefix=prefix)


def restore_entries(store, entries, prefix=""):
    """Strict restore from already-parsed (name, array) checkpoint entries."""
    params, moments, step = _group_entries(entries, prefix)
    for name in params:
        if name not in store:
            raise CheckpointError(f"unexpected tensor {prefix + name!r} in checkpoint")
    for name, t in store.items():
        if name not in params:
            raise CheckpointError(f"checkpoint is missing tensor {prefix + name!r}")
        arr = params[name]
        if arr.shape != t.data.shape:
            raise CheckpointError(
                f"shape mismatch for {prefix + name!r}: checkpoint {arr.shape}, store {t.data.shape}"
            )
        t.data[...] = arr
        m = moments.get(name + ".adam1")
        v = moments.get(name + ".adam2")
        if m is not None:
            _assign_moment(store, name, 0, m)
        if v is not None:
            _assign_moment(store, name, 1, v)
    if step is not None:
        store.step = step
