"""Layer-wise classifier with per-depth exit heads.

The global model is a stack of dense blocks; after every block hangs an exit
head (bottleneck + classifier), so the depth-m prefix plus head m is a
complete sub-model a weak device can train. Aggregation is layer-aligned:
each tensor is averaged over exactly the updates that contain it, weighted by
local sample count, and tensors nobody trained keep their previous values.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tape, Tensor

_MAGIC = b"FBLW"
_VERSION = 1

BYTES_PER_VALUE = 8  # float64 on the wire


@dataclass
class DenseBlock:
    w: Tensor
    b: Tensor

    def tensors(self) -> list[Tensor]:
        return [self.w, self.b]


@dataclass
class ExitHead:
    w_bottleneck: Tensor
    b_bottleneck: Tensor
    w_classifier: Tensor
    b_classifier: Tensor

    def tensors(self) -> list[Tensor]:
        return [self.w_bottleneck, self.b_bottleneck, self.w_classifier, self.b_classifier]


class LayerwiseModel:
    """Global backbone of ``depth`` dense blocks with one exit head per block."""

    def __init__(self, depth: int, input_dim: int, width: int, bottleneck: int,
                 num_classes: int, rng: np.random.Generator):
        if depth < 1:
            raise ValueError(f"depth must be >= 1, got {depth}")
        self.depth = depth
        self.input_dim = input_dim
        self.width = width
        self.bottleneck = bottleneck
        self.num_classes = num_classes
        self.blocks: list[DenseBlock] = []
        for i in range(depth):
            fan_in = input_dim if i == 0 else width
            self.blocks.append(DenseBlock(
                w=Tensor(ad.glorot(rng, fan_in, width)),
                b=Tensor(np.zeros(width)),
            ))
        self.heads: list[ExitHead] = []
        for _ in range(depth):
            self.heads.append(ExitHead(
                w_bottleneck=Tensor(ad.glorot(rng, width, bottleneck)),
                b_bottleneck=Tensor(np.zeros(bottleneck)),
                w_classifier=Tensor(ad.glorot(rng, bottleneck, num_classes)),
                b_classifier=Tensor(np.zeros(num_classes)),
            ))

    def tensors(self) -> list[Tensor]:
        """All parameters in declaration order: blocks 1..M, then heads 1..M."""
        out: list[Tensor] = []
        for blk in self.blocks:
            out.extend(blk.tensors())
        for head in self.heads:
            out.extend(head.tensors())
        return out

    def view(self, depth: int) -> "SubModelView":
        return extract_submodel(self, depth)

    def full_view(self) -> "SubModelView":
        return extract_submodel(self, self.depth)

    def view_bytes(self) -> list[int]:
        """Serialized sub-model size in bytes for each depth 1..M."""
        return [self.view(m).byte_size() for m in range(1, self.depth + 1)]

    def snapshot(self) -> list[np.ndarray]:
        return [t.data.copy() for t in self.tensors()]


@dataclass
class SubModelView:
    """Depth-limited window onto the global model; tensors are shared, not copied."""

    depth: int
    blocks: list[DenseBlock]
    head: ExitHead

    def tensors(self) -> list[Tensor]:
        out: list[Tensor] = []
        for blk in self.blocks:
            out.extend(blk.tensors())
        out.extend(self.head.tensors())
        return out

    def param_count(self) -> int:
        return sum(t.size for t in self.tensors())

    def byte_size(self) -> int:
        return BYTES_PER_VALUE * self.param_count()

    def clone(self) -> "SubModelView":
        """Detached copy for local training; shares nothing with the global model."""
        return SubModelView(
            depth=self.depth,
            blocks=[DenseBlock(blk.w.copy(), blk.b.copy()) for blk in self.blocks],
            head=ExitHead(*(t.copy() for t in self.head.tensors())),
        )


@dataclass
class GradientUpdate:
    """Weight delta (initial minus final) from one device's local training."""

    device_id: int
    depth: int
    deltas: list[np.ndarray]  # aligned with SubModelView.tensors() order
    sample_count: int


def extract_submodel(model: LayerwiseModel, depth: int) -> SubModelView:
    if not 1 <= depth <= model.depth:
        raise ValueError(f"depth {depth} out of range [1, {model.depth}]")
    return SubModelView(depth=depth, blocks=model.blocks[:depth], head=model.heads[depth - 1])


def forward(view: SubModelView, features: np.ndarray) -> Tensor:
    h = Tensor(features)
    for blk in view.blocks:
        h = ad.relu(ad.dense(h, blk.w, blk.b))
    z = ad.relu(ad.dense(h, view.head.w_bottleneck, view.head.b_bottleneck))
    return ad.dense(z, view.head.w_classifier, view.head.b_classifier)


def local_train(view: SubModelView, features: np.ndarray, labels: np.ndarray,
                epochs: int, batch_size: int, lr: float,
                rng: np.random.Generator, device_id: int = -1) -> GradientUpdate:
    """Run local SGD on a private copy and return the cumulative weight delta.

    The returned deltas are ``initial - final``, so the server applies them by
    subtraction. The shared global tensors are never touched.
    """
    n = len(labels)
    if n == 0:
        raise ValueError("empty shard")
    if epochs < 1:
        raise ValueError(f"epochs must be >= 1, got {epochs}")
    local = view.clone()
    params = local.tensors()
    initial = [t.data.copy() for t in params]
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            with Tape() as tape:
                logits = forward(local, features[idx])
                loss = ad.softmax_cross_entropy(logits, labels[idx])
            ad.sgd_step(params, tape.gradients(loss), lr)
    deltas = [before - t.data for before, t in zip(initial, params)]
    return GradientUpdate(device_id=device_id, depth=view.depth,
                          deltas=deltas, sample_count=n)


def aggregate_layerwise(model: LayerwiseModel, updates: list[GradientUpdate]) -> LayerwiseModel:
    """Layer-aligned weighted averaging of update deltas into the global model.

    For every tensor, contributors are the updates that actually contain it:
    block b is in every update of depth >= b+1, head m only in depth-m
    updates. Deltas are weighted by sample count over the contributors of
    that tensor; uncovered tensors keep their current values.
    """
    updates = sorted(updates, key=lambda u: u.device_id)
    for u in updates:
        expected = model.view(u.depth).tensors()
        if len(u.deltas) != len(expected):
            raise ShapeError(f"update from device {u.device_id} has {len(u.deltas)} "
                             f"tensors, expected {len(expected)}")
        for d, t in zip(u.deltas, expected):
            if d.shape != t.data.shape:
                raise ShapeError(f"update from device {u.device_id}: delta shape "
                                 f"{d.shape} != parameter shape {t.data.shape}")
        if u.sample_count <= 0:
            raise ValueError(f"update from device {u.device_id} has sample_count "
                             f"{u.sample_count}")

    def apply(tensors: list[Tensor], contribs: list[tuple[GradientUpdate, int]]) -> None:
        # contribs: (update, offset of this tensor group in update.deltas)
        if not contribs:
            return
        total = float(sum(u.sample_count for u, _ in contribs))
        for k, t in enumerate(tensors):
            acc = np.zeros_like(t.data)
            for u, off in contribs:
                acc += (u.sample_count / total) * u.deltas[off + k]
            t.data -= acc

    for b in range(model.depth):
        apply(model.blocks[b].tensors(),
              [(u, 2 * b) for u in updates if u.depth >= b + 1])
    for m in range(1, model.depth + 1):
        apply(model.heads[m - 1].tensors(),
              [(u, 2 * u.depth) for u in updates if u.depth == m])
    return model


def evaluate(view: SubModelView, features: np.ndarray, labels: np.ndarray) -> float:
    """Argmax accuracy; logit ties resolve to the lowest class index."""
    if len(labels) == 0:
        raise ValueError("empty dataset")
    logits = forward(view, features).data
    return float(np.mean(np.argmax(logits, axis=1) == labels))


# ---------------------------------------------------------------------------
# checkpoint IO
# ---------------------------------------------------------------------------

def save_model(model: LayerwiseModel, path: str) -> None:
    """Versioned binary checkpoint: fixed header, then raw little-endian float64."""
    header = struct.pack("<4sIIIIII", _MAGIC, _VERSION, model.depth, model.input_dim,
                         model.width, model.bottleneck, model.num_classes)
    with open(path, "wb") as f:
        f.write(header)
        for t in model.tensors():
            f.write(t.data.astype("<f8").tobytes())


def load_model(path: str) -> LayerwiseModel:
    with open(path, "rb") as f:
        header = f.read(struct.calcsize("<4sIIIIII"))
        magic, version, depth, input_dim, width, bottleneck, classes = struct.unpack(
            "<4sIIIIII", header)
        if magic != _MAGIC:
            raise ValueError(f"not a model checkpoint: bad magic {magic!r}")
        if version != _VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        model = LayerwiseModel(depth, input_dim, width, bottleneck, classes,
                               np.random.default_rng(0))
        for t in model.tensors():
            raw = f.read(t.size * BYTES_PER_VALUE)
            if len(raw) != t.size * BYTES_PER_VALUE:
                raise ValueError("truncated checkpoint")
            t.data = np.frombuffer(raw, dtype="<f8").reshape(t.data.shape).astype(np.float64)
    return model
