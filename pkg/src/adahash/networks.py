"""The five dense networks of the model.

A shared encoder maps raw features into the common embedding space, a
classifier head predicts class probabilities from embeddings, two generators
reconstruct domain features from embeddings, and two discriminators score
features as one of N real classes or "fake". Generators (and discriminators)
share an architecture but never share parameter storage.

Activation schedule: the encoder trunk uses tanh throughout (its output must
live strictly inside (-1, 1) so it can relax binary codes); generator and
discriminator hidden layers use a leaky rectifier with slope 0.2; generator
outputs are linear, classifier/discriminator outputs are row-softmax.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .fileio import FormatError, atomic_write_bytes

PARAMS_MAGIC = b"ADAH"
PARAMS_VERSION = 1

LEAKY_SLOPE = 0.2


@dataclass
class NetConfig:
    """Dense multilayer architecture: input -> hidden... -> output."""

    input_dim: int
    hidden_dims: tuple[int, ...]
    output_dim: int

    def __post_init__(self):
        dims = (self.input_dim, *self.hidden_dims, self.output_dim)
        if any(d < 1 for d in dims):
            raise ValueError(f"all layer dimensions must be >= 1, got {dims}")

    @property
    def layer_dims(self) -> list[tuple[int, int]]:
        dims = (self.input_dim, *self.hidden_dims, self.output_dim)
        return list(zip(dims[:-1], dims[1:]))


@dataclass
class ParameterSet:
    """Named, ordered trainable arrays for one network.

    Each entry is (layer name, weight leaf, bias leaf); weights are
    (fan_in, fan_out), biases (1, fan_out). The leaves persist across steps,
    op graphs are rebuilt on top of them.
    """

    name: str
    entries: list[tuple[str, ad.Node, ad.Node]] = field(default_factory=list)

    def __post_init__(self):
        for i in range(len(self.entries) - 1):
            out_dim = self.entries[i][1].value.shape[1]
            next_in = self.entries[i + 1][1].value.shape[0]
            if out_dim != next_in:
                raise ValueError(
                    f"{self.name}: layer {i} output {out_dim} does not feed layer "
                    f"{i + 1} input {next_in}")

    @property
    def input_dim(self) -> int:
        return self.entries[0][1].value.shape[0]

    @property
    def output_dim(self) -> int:
        return self.entries[-1][1].value.shape[1]

    def leaves(self) -> list[ad.Node]:
        nodes = []
        for _, w, b in self.entries:
            nodes.append(w)
            nodes.append(b)
        return nodes

    def arrays(self) -> list[np.ndarray]:
        return [n.value for n in self.leaves()]

    def clone(self, name: str | None = None) -> "ParameterSet":
        """Deep copy; safe to read concurrently with training of the original."""
        copied = [(ln, ad.leaf(w.value.copy()), ad.leaf(b.value.copy()))
                  for ln, w, b in self.entries]
        return ParameterSet(name or self.name, copied)

    def sgd_step(self, learning_rate: float) -> None:
        for node in self.leaves():
            node.value -= learning_rate * node.grad


def init_net(cfg: NetConfig, seed: int, name: str) -> ParameterSet:
    """Glorot-uniform weights, zero biases, deterministic for a given seed."""
    rng = np.random.default_rng(seed)
    entries = []
    for i, (fan_in, fan_out) in enumerate(cfg.layer_dims):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        b = np.zeros((1, fan_out))
        entries.append((f"layer{i}", ad.leaf(w), ad.leaf(b)))
    return ParameterSet(name, entries)


def _forward(pset: ParameterSet, x: ad.Node, hidden: str, output: str) -> ad.Node:
    if x.value.shape[1] != pset.input_dim:
        raise ValueError(
            f"{pset.name}: input width {x.value.shape[1]} does not match "
            f"network input {pset.input_dim}")
    h = x
    last = len(pset.entries) - 1
    for i, (_, w, b) in enumerate(pset.entries):
        h = ad.add_bias(ad.matmul(h, w), b)
        act = output if i == last else hidden
        if act == "tanh":
            h = ad.tanh(h)
        elif act == "leaky":
            h = ad.leaky_relu(h, LEAKY_SLOPE)
        elif act == "softmax":
            h = ad.softmax_rows(h)
        elif act != "linear":
            raise ValueError(f"unknown activation {act!r}")
    return h


def encode(encoder: ParameterSet, x: ad.Node) -> ad.Node:
    """Features -> common-space embedding in (-1, 1)^d (tanh everywhere)."""
    return _forward(encoder, x, hidden="tanh", output="tanh")


def classify(classifier: ParameterSet, u: ad.Node) -> ad.Node:
    """Embedding -> class probabilities (softmax rows over N classes)."""
    return _forward(classifier, u, hidden="tanh", output="softmax")


def reconstruct(generator: ParameterSet, u: ad.Node) -> ad.Node:
    """Embedding -> synthetic features.

    The same generator serves same-domain and cross-domain paths; the caller
    chooses which embeddings it receives.
    """
    return _forward(generator, u, hidden="leaky", output="linear")


def discriminate(discriminator: ParameterSet, x: ad.Node) -> ad.Node:
    """Features -> probabilities over N real classes plus a final fake slot."""
    return _forward(discriminator, x, hidden="leaky", output="softmax")


def encode_array(encoder: ParameterSet, features: np.ndarray) -> np.ndarray:
    """Convenience no-grad embedding of a raw feature matrix."""
    return encode(encoder, ad.leaf(features)).value


def save_params(path: str, pset: ParameterSet) -> None:
    """Versioned binary dump; round-trips bit-exactly.

    Layout: magic "ADAH", u32 version, then one record per array:
    u32 name length, utf-8 name, u32 rank, rank u32 dims, little-endian f64 data.
    """
    out = bytearray()
    out += PARAMS_MAGIC
    out += struct.pack("<I", PARAMS_VERSION)
    for layer_name, w, b in pset.entries:
        for suffix, node in (("weight", w), ("bias", b)):
            name = f"{layer_name}.{suffix}".encode("utf-8")
            arr = node.value
            out += struct.pack("<I", len(name))
            out += name
            out += struct.pack("<I", arr.ndim)
            out += struct.pack(f"<{arr.ndim}I", *arr.shape)
            out += arr.astype("<f8").tobytes(order="C")
    atomic_write_bytes(path, bytes(out))


def _read_exact(fh, n: int, what: str) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise FormatError(f"truncated parameter file while reading {what}")
    return data


def load_params(path: str, name: str | None = None) -> ParameterSet:
    records: list[tuple[str, np.ndarray]] = []
    with open(path, "rb") as fh:
        magic = _read_exact(fh, 4, "magic")
        if magic != PARAMS_MAGIC:
            raise FormatError(
                f"bad parameter-file magic: expected {PARAMS_MAGIC!r}, got {magic!r}")
        (version,) = struct.unpack("<I", _read_exact(fh, 4, "version"))
        if version != PARAMS_VERSION:
            raise FormatError(f"unsupported parameter-file version {version}")
        while True:
            head = fh.read(4)
            if not head:
                break
            if len(head) != 4:
                raise FormatError("truncated parameter file while reading record header")
            (name_len,) = struct.unpack("<I", head)
            rec_name = _read_exact(fh, name_len, "record name").decode("utf-8")
            (rank,) = struct.unpack("<I", _read_exact(fh, 4, "rank"))
            dims = struct.unpack(f"<{rank}I", _read_exact(fh, 4 * rank, "dims"))
            count = int(np.prod(dims)) if dims else 1
            raw = _read_exact(fh, 8 * count, f"data of {rec_name}")
            arr = np.frombuffer(raw, dtype="<f8").reshape(dims).astype(np.float64)
            records.append((rec_name, arr))

    if len(records) % 2 != 0:
        raise FormatError("parameter file holds an odd number of records")
    entries = []
    for i in range(0, len(records), 2):
        w_name, w_arr = records[i]
        b_name, b_arr = records[i + 1]
        if not w_name.endswith(".weight") or not b_name.endswith(".bias"):
            raise FormatError(f"unexpected record order: {w_name!r}, {b_name!r}")
        layer = w_name[: -len(".weight")]
        if b_name[: -len(".bias")] != layer:
            raise FormatError(f"weight/bias name mismatch: {w_name!r} vs {b_name!r}")
        entries.append((layer, ad.leaf(w_arr), ad.leaf(b_arr)))
    if name is None:
        import os
        name = os.path.splitext(os.path.basename(path))[0]
    return ParameterSet(name, entries)
