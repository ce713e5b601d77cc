"""Target classifier architectures, training, and checkpoint serialization.

Four univariate time-series classifiers are provided, configured after the
reference implementations commonly used as benchmarks in this domain:

* mlp    -- three 500-wide hidden layers with dropout 0.1/0.2/0.2/0.3
* fcn    -- conv blocks 128/256/128 (kernels 8/5/3, length-preserving
            padding), batch norm + relu, global average pooling
* cnn    -- two conv+average-pool blocks (filters 6/12, kernel 7, pool 3)
            with sigmoid activations, then a dense head
* resnet -- three residual blocks of fcn-style convs (64/128/128 channels)
            with shortcut projections where channel counts change

All parameters are float64. Normalization layers keep running statistics
that are frozen in evaluation mode, so attack gradients are deterministic.
"""

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad

__all__ = [
    "ARCHITECTURE_KINDS",
    "Architecture",
    "Checkpoint",
    "Classifier",
    "TrainingDivergedError",
    "build",
    "load_checkpoint",
    "predict",
    "save_checkpoint",
    "train",
]

ARCHITECTURE_KINDS = ("mlp", "fcn", "cnn", "resnet")

_MAGIC = b"WPGDCKP1"


class TrainingDivergedError(RuntimeError):
    """Raised when the training loss stops being finite."""


@dataclass(frozen=True)
class Architecture:
    kind: str
    input_length: int
    num_classes: int

    def __post_init__(self):
        if self.kind not in ARCHITECTURE_KINDS:
            raise ValueError(
                f"unknown architecture kind {self.kind!r}; "
                f"expected one of {ARCHITECTURE_KINDS}"
            )
        if self.input_length < 8:
            raise ValueError(f"input length must be >= 8, got {self.input_length}")
        if self.num_classes < 2:
            raise ValueError(f"need >= 2 classes, got {self.num_classes}")

    def to_dict(self):
        return {
            "kind": self.kind,
            "input_length": self.input_length,
            "num_classes": self.num_classes,
        }


@dataclass
class Checkpoint:
    classifier: "Classifier"
    metadata: dict = field(default_factory=dict)


def _glorot(rng, shape, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def _same_padding(kernel):
    # length-preserving padding for stride 1; asymmetric for even kernels
    return ((kernel - 1) // 2, kernel // 2)


class Classifier:
    """A built architecture: named parameter tensors plus norm buffers.

    Training mutates parameters in place; once trained, instances are
    treated as immutable and may be shared freely across attack workers.
    """

    def __init__(self, architecture, params, buffers):
        self.architecture = architecture
        self.params = params  # name -> ad.Tensor, insertion order fixed
        self.buffers = buffers  # name -> ndarray (running statistics)

    @property
    def input_length(self):
        return self.architecture.input_length

    @property
    def num_classes(self):
        return self.architecture.num_classes

    # -- graph construction ------------------------------------------------

    def forward(self, x, training=False, rng=None):
        """Logits graph for a (batch, input_length) input tensor."""
        if not isinstance(x, ad.Tensor):
            x = ad.Tensor(x)
        if x.data.ndim != 2 or x.data.shape[1] != self.input_length:
            raise ad.ShapeMismatchError(
                f"expected input shape (batch, {self.input_length}), "
                f"got {x.data.shape}"
            )
        kind = self.architecture.kind
        if kind == "mlp":
            return self._forward_mlp(x, training, rng)
        if kind == "fcn":
            return self._forward_fcn(x, training)
        if kind == "cnn":
            return self._forward_cnn(x)
        return self._forward_resnet(x, training)

    def _forward_mlp(self, x, training, rng):
        p = self.params
        h = ad.dropout(x, 0.1, rng, training)
        for i in (1, 2, 3):
            h = ad.relu(ad.dense(h, p[f"dense{i}.weight"], p[f"dense{i}.bias"]))
            h = ad.dropout(h, 0.2 if i < 3 else 0.3, rng, training)
        return ad.dense(h, p["head.weight"], p["head.bias"])

    def _conv_bn_relu(self, h, name, kernel, training, final_relu=True):
        p, b = self.params, self.buffers
        h = ad.conv1d(h, p[f"{name}.weight"], padding=_same_padding(kernel))
        h = ad.batch_norm(
            h, p[f"{name}.gamma"], p[f"{name}.beta"],
            b[f"{name}.running_mean"], b[f"{name}.running_var"], training,
        )
        return ad.relu(h) if final_relu else h

    def _forward_fcn(self, x, training):
        h = ad.reshape(x, (x.data.shape[0], 1, self.input_length))
        h = self._conv_bn_relu(h, "block1", 8, training)
        h = self._conv_bn_relu(h, "block2", 5, training)
        h = self._conv_bn_relu(h, "block3", 3, training)
        h = ad.global_average_pool(h)
        return ad.dense(h, self.params["head.weight"], self.params["head.bias"])

    def _forward_cnn(self, x):
        p = self.params
        h = ad.reshape(x, (x.data.shape[0], 1, self.input_length))
        h = ad.sigmoid(ad.conv1d(h, p["conv1.weight"], p["conv1.bias"]))
        h = ad.avg_pool1d(h, 3)
        h = ad.sigmoid(ad.conv1d(h, p["conv2.weight"], p["conv2.bias"]))
        h = ad.avg_pool1d(h, 3)
        h = ad.reshape(h, (h.data.shape[0], h.data.shape[1] * h.data.shape[2]))
        return ad.dense(h, p["head.weight"], p["head.bias"])

    def _forward_resnet(self, x, training):
        p = self.params
        h = ad.reshape(x, (x.data.shape[0], 1, self.input_length))
        for i, channels_change in ((1, True), (2, True), (3, False)):
            name = f"res{i}"
            trunk = self._conv_bn_relu(h, f"{name}.conv1", 8, training)
            trunk = self._conv_bn_relu(trunk, f"{name}.conv2", 5, training)
            trunk = self._conv_bn_relu(trunk, f"{name}.conv3", 3, training,
                                       final_relu=False)
            if channels_change:
                shortcut = self._conv_bn_relu(h, f"{name}.shortcut", 1, training,
                                              final_relu=False)
            else:
                shortcut = h
            h = ad.relu(ad.add(trunk, shortcut))
        h = ad.global_average_pool(h)
        return ad.dense(h, p["head.weight"], p["head.bias"])

    # -- evaluation-mode helpers --------------------------------------------

    def logits_values(self, batch_values):
        """Eval-mode logits for a (batch, input_length) value array."""
        return self.forward(ad.Tensor(batch_values)).data

    def predict_labels(self, batch_values):
        return np.argmax(self.logits_values(batch_values), axis=1)

    def loss_input_gradient(self, batch_values, labels):
        """Mean cross-entropy and its gradient with respect to the input batch."""
        leaf = ad.Tensor(np.asarray(batch_values, dtype=np.float64))
        loss = ad.cross_entropy(self.forward(leaf), labels)
        grads = ad.backward(loss, [leaf])
        return float(loss.data), grads[leaf]


def _min_cnn_length():
    # two (conv k7, pool 3) stages: innermost output must be nonempty
    length = 1
    for _ in range(2):
        length = length * 3 + 2 + 6  # undo pool (worst case) and conv k7
    return length


def build(architecture, seed):
    """Initialize a classifier: Glorot-uniform weights, zero biases, unit norms.

    Deterministic for a given (architecture, seed).
    """
    arch = architecture
    n, k = arch.input_length, arch.num_classes
    rng = np.random.default_rng(seed)
    params = {}
    buffers = {}

    def conv_param(name, c_out, c_in, kernel, bias=False):
        fan_in, fan_out = c_in * kernel, c_out * kernel
        params[f"{name}.weight"] = ad.Tensor(
            _glorot(rng, (c_out, c_in, kernel), fan_in, fan_out)
        )
        if bias:
            params[f"{name}.bias"] = ad.Tensor(np.zeros(c_out))

    def bn_param(name, channels):
        params[f"{name}.gamma"] = ad.Tensor(np.ones(channels))
        params[f"{name}.beta"] = ad.Tensor(np.zeros(channels))
        buffers[f"{name}.running_mean"] = np.zeros(channels)
        buffers[f"{name}.running_var"] = np.ones(channels)

    def dense_param(name, fan_in, fan_out):
        params[f"{name}.weight"] = ad.Tensor(
            _glorot(rng, (fan_in, fan_out), fan_in, fan_out)
        )
        params[f"{name}.bias"] = ad.Tensor(np.zeros(fan_out))

    if arch.kind == "mlp":
        widths = [n, 500, 500, 500]
        for i in (1, 2, 3):
            dense_param(f"dense{i}", widths[i - 1], widths[i])
        dense_param("head", 500, k)
    elif arch.kind == "fcn":
        for i, (c_in, c_out, kernel) in enumerate(
            [(1, 128, 8), (128, 256, 5), (256, 128, 3)], start=1
        ):
            conv_param(f"block{i}", c_out, c_in, kernel)
            bn_param(f"block{i}", c_out)
        dense_param("head", 128, k)
    elif arch.kind == "cnn":
        min_len = _min_cnn_length()
        if n < min_len:
            raise ValueError(
                f"cnn needs input length >= {min_len} for its receptive field, "
                f"got {n}"
            )
        conv_param("conv1", 6, 1, 7, bias=True)
        conv_param("conv2", 12, 6, 7, bias=True)
        flat = ((((n - 6) // 3) - 6) // 3) * 12
        dense_param("head", flat, k)
    else:  # resnet
        channel_plan = [(1, 64), (64, 128), (128, 128)]
        for i, (c_in, c_out) in enumerate(channel_plan, start=1):
            name = f"res{i}"
            for j, kernel in enumerate((8, 5, 3), start=1):
                conv_param(f"{name}.conv{j}", c_out, c_out if j > 1 else c_in, kernel)
                bn_param(f"{name}.conv{j}", c_out)
            if c_in != c_out:
                conv_param(f"{name}.shortcut", c_out, c_in, 1)
                bn_param(f"{name}.shortcut", c_out)
        dense_param("head", 128, k)

    return Classifier(arch, params, buffers)


def _accuracy(classifier, series_list, chunk=256):
    if not series_list:
        return 0.0
    hits = 0
    for lo in range(0, len(series_list), chunk):
        part = series_list[lo : lo + chunk]
        xb = np.stack([s.values for s in part])
        labels = classifier.predict_labels(xb)
        hits += int((labels == np.array([s.label for s in part])).sum())
    return hits / len(series_list)


def train(classifier, dataset, epochs=200, batch_size=16, learning_rate=1e-3,
          seed=0):
    """Mini-batch Adam training; returns a Checkpoint with recorded accuracies.

    Adam uses beta1=0.9, beta2=0.999, eps=1e-8. A non-finite loss aborts with
    the offending epoch and batch index.
    """
    k = classifier.num_classes
    xs = np.stack([s.values for s in dataset.train])
    ys = np.array([s.label for s in dataset.train], dtype=np.intp)
    if ys.min() < 0 or ys.max() >= k:
        raise ValueError(
            f"dataset labels must lie in [0, {k}), got [{ys.min()}, {ys.max()}]"
        )

    shuffle_rng = np.random.default_rng([seed, 1])
    dropout_rng = np.random.default_rng([seed, 2])
    names = list(classifier.params)
    moment1 = {name: np.zeros_like(classifier.params[name].data) for name in names}
    moment2 = {name: np.zeros_like(classifier.params[name].data) for name in names}
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    step = 0

    for epoch in range(epochs):
        perm = shuffle_rng.permutation(len(xs))
        for batch_index, lo in enumerate(range(0, len(xs), batch_size)):
            idx = perm[lo : lo + batch_size]
            leaf = ad.Tensor(xs[idx])
            logits = classifier.forward(leaf, training=True, rng=dropout_rng)
            loss = ad.cross_entropy(logits, ys[idx])
            if not np.isfinite(loss.data):
                raise TrainingDivergedError(
                    f"loss became non-finite at epoch {epoch}, batch {batch_index}"
                )
            grads = ad.backward(loss, [classifier.params[n] for n in names])
            step += 1
            correction1 = 1.0 - beta1 ** step
            correction2 = 1.0 - beta2 ** step
            for name in names:
                g = grads[classifier.params[name]]
                m, v = moment1[name], moment2[name]
                m *= beta1
                m += (1.0 - beta1) * g
                v *= beta2
                v += (1.0 - beta2) * g * g
                update = (m / correction1) / (np.sqrt(v / correction2) + eps)
                classifier.params[name].data -= learning_rate * update

    metadata = {
        "dataset": dataset.name,
        "epochs": epochs,
        "batch_size": batch_size,
        "learning_rate": learning_rate,
        "seed": seed,
        "train_accuracy": _accuracy(classifier, dataset.train),
        "test_accuracy": _accuracy(classifier, dataset.test),
    }
    return Checkpoint(classifier, metadata)


def predict(classifier, x):
    """Logits and predicted label for one series (ties -> smaller class index)."""
    values = x.values if hasattr(x, "values") else np.asarray(x, dtype=np.float64)
    if values.shape != (classifier.input_length,):
        raise ad.ShapeMismatchError(
            f"expected input of length {classifier.input_length}, "
            f"got shape {values.shape}"
        )
    logits = classifier.logits_values(values[None, :])[0]
    return logits, int(np.argmax(logits))


# ---------------------------------------------------------------------------
# checkpoint container: JSON header + little-endian float64 payload


def save_checkpoint(checkpoint, path):
    clf = checkpoint.classifier
    entries = []
    blobs = []
    offset = 0
    named = [("param", n, clf.params[n].data) for n in clf.params]
    named += [("buffer", n, clf.buffers[n]) for n in clf.buffers]
    for kind, name, array in named:
        blob = np.ascontiguousarray(array, dtype="<f8").tobytes()
        entries.append(
            {"kind": kind, "name": name, "shape": list(array.shape),
             "offset": offset}
        )
        offset += len(blob)
        blobs.append(blob)
    header = {
        "architecture": clf.architecture.to_dict(),
        "metadata": checkpoint.metadata,
        "tensors": entries,
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<Q", len(header_bytes)))
        fh.write(header_bytes)
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path):
    with open(path, "rb") as fh:
        magic = fh.read(len(_MAGIC))
        if magic != _MAGIC:
            raise ValueError(f"{path}: not a checkpoint file (bad magic {magic!r})")
        (header_len,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(header_len).decode())
        payload = fh.read()
    arch = Architecture(**header["architecture"])
    clf = build(arch, seed=0)
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        array = np.frombuffer(
            payload, dtype="<f8", count=count, offset=start
        ).reshape(shape).astype(np.float64)
        if entry["kind"] == "param":
            target = clf.params[entry["name"]]
            if target.data.shape != shape:
                raise ValueError(
                    f"{path}: tensor {entry['name']} has shape {shape}, "
                    f"architecture implies {target.data.shape}"
                )
            target.data = array
        else:
            clf.buffers[entry["name"]] = array
    return Checkpoint(clf, header["metadata"])
