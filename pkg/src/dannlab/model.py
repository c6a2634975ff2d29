"""Network assembly: a plain regression backbone (shared feature stack plus
task head) and the adversarial model that adds a domain-classifier head
behind a gradient reversal gate.

Layer counts include each head's readout layer. A "hidden block" is
Dense -> BatchNorm -> ReLU -> Dropout; readouts are bare Dense layers
(1 unit for the task head, 2 logits for the domain head). Input dropout
is applied to the features before the first shared block.

Parameter initialization draws from two named streams so that the
adversarial model and a standalone backbone built from the same seed get
bitwise-identical shared/task parameters: the backbone consumes only the
main stream, the domain head only the domain stream.
"""

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import BatchError, DataError, SpecError
from .grl import ReversalGate
from .nn import BatchNorm, Dense, Dropout, Relu, Stack, crossentropy_loss, mse_loss, softmax
from .seeding import INIT_DOMAIN, INIT_MAIN, stream_rng

VARIANTS = ("deep", "shallow")
FORMAT_TAG = "dannlab-v1"


@dataclass
class NetworkSpec:
    input_dim: int
    shared_layers: int = 1
    variant: str = "deep"
    task_layers: int | None = None
    domain_layers: int = 2
    hidden_width: int = 256
    input_dropout: float = 0.2
    hidden_dropout: float = 0.5

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise SpecError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.task_layers is None:
            self.task_layers = 2 if self.variant == "deep" else 1
        if self.input_dim < 1 or self.hidden_width < 1:
            raise SpecError("input_dim and hidden_width must be positive")
        if self.shared_layers not in (1, 2, 3, 4):
            raise SpecError(f"shared_layers must be 1..4, got {self.shared_layers}")
        if self.variant == "deep" and self.task_layers != 2:
            raise SpecError("deep variant uses a 2-layer task head")
        if self.variant == "shallow" and (self.shared_layers != 1 or self.task_layers != 1):
            raise SpecError("shallow variant uses exactly one shared layer and a 1-layer task head")
        if self.domain_layers != 2:
            raise SpecError("domain head is fixed at 2 layers")
        for rate in (self.input_dropout, self.hidden_dropout):
            if not 0.0 <= rate < 1.0:
                raise SpecError(f"dropout rates must lie in [0, 1), got {rate}")

    def to_dict(self):
        return {
            "input_dim": self.input_dim,
            "shared_layers": self.shared_layers,
            "variant": self.variant,
            "task_layers": self.task_layers,
            "domain_layers": self.domain_layers,
            "hidden_width": self.hidden_width,
            "input_dropout": self.input_dropout,
            "hidden_dropout": self.hidden_dropout,
        }


def _hidden_block(in_units, width, rng, dropout_rate, name):
    return Stack([
        Dense(in_units, width, rng, name),
        BatchNorm(width, name=f"{name}.bn"),
        Relu(),
        Dropout(dropout_rate),
    ])


class RegressionNet:
    """Shared feature stack plus task head; trained alone it is the
    source-only (or target) baseline."""

    kind = "regression"

    def __init__(self, spec: NetworkSpec, seed: int):
        rng = stream_rng(seed, INIT_MAIN)
        self.spec = spec
        self.seed = seed
        self.input_drop = Dropout(spec.input_dropout)
        self.shared_blocks = []
        width = spec.input_dim
        for i in range(spec.shared_layers):
            self.shared_blocks.append(_hidden_block(width, spec.hidden_width, rng, spec.hidden_dropout, f"shared{i + 1}"))
            width = spec.hidden_width
        head = []
        for j in range(spec.task_layers - 1):
            head.append(_hidden_block(width, spec.hidden_width, rng, spec.hidden_dropout, f"task{j + 1}"))
            width = spec.hidden_width
        head.append(Stack([Dense(width, 1, rng, "task_out")]))
        self.task_head = Stack(head)

    def forward_shared(self, x, train=False, rng=None, update_stats=True):
        h = self.input_drop.forward(x, train=train, rng=rng)
        for block in self.shared_blocks:
            h = block.forward(h, train=train, rng=rng, update_stats=update_stats)
        return h

    def backward_shared(self, upstream):
        for block in reversed(self.shared_blocks):
            upstream = block.backward(upstream)
        return self.input_drop.backward(upstream)

    def forward_task(self, x, train=False, rng=None):
        return self.task_head.forward(self.forward_shared(x, train=train, rng=rng), train=train, rng=rng)

    def backward_task(self, upstream):
        return self.backward_shared(self.task_head.backward(upstream))

    def predict(self, x):
        return self.forward_task(x).ravel()

    def shared_activations(self, x):
        """Inference-mode output of each shared block, outermost last."""
        h = self.input_drop.forward(x)
        outs = []
        for block in self.shared_blocks:
            h = block.forward(h)
            outs.append(h)
        return outs

    def params(self):
        out = []
        for block in self.shared_blocks:
            out.extend(block.params())
        out.extend(self.task_head.params())
        return out

    def state(self):
        out = []
        for block in self.shared_blocks:
            out.extend(block.state())
        out.extend(self.task_head.state())
        return out


class DannModel:
    """RegressionNet backbone plus a domain head behind the reversal gate.

    The task path never touches the gate; the domain path runs the full
    shared stack, the gate, then the head. Backward through the domain
    path feeds the head its plain gradient and the shared stack the
    reversed one, so one optimizer step realizes the adversarial update.
    """

    kind = "dann"

    def __init__(self, spec: NetworkSpec, seed: int):
        self.backbone = RegressionNet(spec, seed)
        self.spec = spec
        self.seed = seed
        self.gate = ReversalGate(0.0)
        rng = stream_rng(seed, INIT_DOMAIN)
        head = []
        width = spec.hidden_width
        for j in range(spec.domain_layers - 1):
            head.append(_hidden_block(width, spec.hidden_width, rng, spec.hidden_dropout, f"domain{j + 1}"))
            width = spec.hidden_width
        head.append(Stack([Dense(width, 2, rng, "domain_out")]))
        self.domain_head = Stack(head)

    def forward_task(self, x, train=False, rng=None):
        return self.backbone.forward_task(x, train=train, rng=rng)

    def backward_task(self, upstream):
        return self.backbone.backward_task(upstream)

    def forward_domain(self, x, train=False, rng=None):
        # the task pass owns the shared stack's running statistics; the
        # adversarial pass must not skew inference behavior through them
        h = self.backbone.forward_shared(x, train=train, rng=rng, update_stats=False)
        return self.domain_head.forward(self.gate.forward(h, train=train, rng=rng), train=train, rng=rng)

    def backward_domain(self, upstream):
        g = self.gate.backward(self.domain_head.backward(upstream))
        if self.gate.coefficient == 0.0:
            return None  # exactly zero contribution, skip the shared sweep
        return self.backbone.backward_shared(g)

    def predict_task(self, x):
        return self.backbone.predict(x)

    def predict_domain(self, x):
        return softmax(self.forward_domain(x))

    def shared_activations(self, x):
        return self.backbone.shared_activations(x)

    def objective(self, features, scores, unlabeled, coefficient):
        """Inference-mode losses: MSE on the labeled rows, cross-entropy
        over the labeled+unlabeled union against domain classes 0/1, and
        the composite task_loss - coefficient * domain_loss."""
        features = np.asarray(features, dtype=np.float64)
        if features.size == 0:
            raise BatchError("objective: empty labeled batch")
        unlabeled = np.asarray(unlabeled, dtype=np.float64)
        task_loss, _ = mse_loss(self.predict_task(features), scores)
        union = np.concatenate([features, unlabeled]) if unlabeled.size else features
        onehot = np.zeros((union.shape[0], 2))
        onehot[: features.shape[0], 0] = 1.0
        onehot[features.shape[0]:, 1] = 1.0
        domain_loss, _ = crossentropy_loss(self.forward_domain(union), onehot)
        return task_loss, domain_loss, task_loss - coefficient * domain_loss

    def task_params(self):
        return self.backbone.params()

    def domain_params(self):
        return self.domain_head.params()

    def params(self):
        return self.task_params() + self.domain_params()

    def state(self):
        return self.backbone.state() + self.domain_head.state()


def save_model(model, path):
    """Single-file snapshot: tag line, 4-byte little-endian header length,
    JSON header (spec, kind, ordered tensor names and shapes), then raw
    float64 little-endian C-order tensor blocks."""
    tensors = [(p.name, p.value) for p in model.params()] + list(model.state())
    header = {
        "kind": model.kind,
        "spec": model.spec.to_dict(),
        "tensors": [{"name": n, "shape": list(v.shape)} for n, v in tensors],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(FORMAT_TAG.encode("ascii") + b"\n")
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for _, value in tensors:
            fh.write(np.ascontiguousarray(value, dtype="<f8").tobytes())


def load_model(path):
    with open(path, "rb") as fh:
        tag = fh.readline().strip().decode("ascii", errors="replace")
        if tag != FORMAT_TAG:
            raise DataError(f"{path}: expected format tag {FORMAT_TAG!r}, found {tag!r}")
        (header_len,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(header_len).decode("utf-8"))
        spec = NetworkSpec(**header["spec"])
        model = DannModel(spec, seed=0) if header["kind"] == "dann" else RegressionNet(spec, seed=0)
        by_name = {p.name: p.value for p in model.params()}
        by_name.update({name: value for name, value in model.state()})
        for entry in header["tensors"]:
            shape = tuple(entry["shape"])
            n = int(np.prod(shape)) if shape else 1
            raw = fh.read(8 * n)
            if len(raw) != 8 * n:
                raise DataError(f"{path}: truncated tensor block for {entry['name']}")
            if entry["name"] not in by_name:
                raise DataError(f"{path}: unknown tensor {entry['name']}")
            target = by_name[entry["name"]]
            if tuple(target.shape) != shape:
                raise DataError(f"{path}: shape mismatch for {entry['name']}")
            target[...] = np.frombuffer(raw, dtype="<f8").reshape(shape)
    return model
