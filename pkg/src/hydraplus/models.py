"""Teacher ensembles, shared-core multi-head students, counting and checkpoints."""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .exceptions import ConfigError, ShapeError
from .nn import LinearLayer, ParamStore, init_linear, linear_forward

TASKS = ("classification", "regression")

# Toy architectures.  The student splits the teacher so that
# the last two linear layers become the heads.
TOY_TEACHER_WIDTHS = {
    "classification": (2, 100, 100, 100, 100, 3),
    "regression": (1, 50, 50, 50, 2),
}


def _check_task(task):
    if task not in TASKS:
        raise ConfigError(f"unknown task {task!r}; expected one of {TASKS}")


@dataclass(frozen=True)
class MlpSpec:
    widths: tuple
    task: str

    def __post_init__(self):
        _check_task(self.task)
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        if len(self.widths) < 2 or min(self.widths) < 1:
            raise ConfigError(f"invalid widths {self.widths}")
        if self.task == "regression" and self.widths[-1] != 2:
            raise ConfigError("regression networks output (mean, raw variance)")

    def to_dict(self):
        return {"widths": list(self.widths), "task": self.task}


@dataclass(frozen=True)
class MultiHeadSpec:
    core_widths: tuple
    head_widths: tuple
    n_heads: int
    task: str

    def __post_init__(self):
        _check_task(self.task)
        object.__setattr__(self, "core_widths", tuple(int(w) for w in self.core_widths))
        object.__setattr__(self, "head_widths", tuple(int(w) for w in self.head_widths))
        if len(self.core_widths) < 1 or len(self.head_widths) < 2:
            raise ConfigError("core needs an input width and heads need at least one layer")
        if self.core_widths[-1] != self.head_widths[0]:
            raise ConfigError("core output width must equal head input width")
        if self.n_heads < 2:
            raise ConfigError(f"a multi-head student needs M >= 2, got {self.n_heads}")
        if self.task == "regression" and self.head_widths[-1] != 2:
            raise ConfigError("regression heads output (mean, raw variance)")

    @property
    def input_width(self):
        return self.core_widths[0]

    def to_dict(self):
        return {
            "core_widths": list(self.core_widths),
            "head_widths": list(self.head_widths),
            "n_heads": self.n_heads,
            "task": self.task,
        }


def teacher_spec(task):
    return MlpSpec(TOY_TEACHER_WIDTHS[task], task)


def student_spec(task, n_heads):
    """Toy student: teacher widths with the last two layers as heads."""
    widths = TOY_TEACHER_WIDTHS[task]
    return MultiHeadSpec(widths[:-2], widths[-3:], n_heads, task)


class Mlp:
    """Fully connected ReLU network returning raw outputs."""

    def __init__(self, spec, layers):
        self.spec = spec
        self.layers = layers
        self.params = ParamStore()
        for i, layer in enumerate(layers):
            self.params.add(f"layer{i}.weight", layer.weight)
            self.params.add(f"layer{i}.bias", layer.bias)

    @classmethod
    def build(cls, spec, seed):
        rng = np.random.default_rng(seed)
        w = spec.widths
        return cls(spec, [init_linear(rng, w[i], w[i + 1]) for i in range(len(w) - 1)])

    @property
    def task(self):
        return self.spec.task

    def forward(self, x):
        h = ag.as_tensor(x)
        for i, layer in enumerate(self.layers):
            h = linear_forward(layer, h)
            if i < len(self.layers) - 1:
                h = ag.relu(h)
        return h


class MultiHeadNet:
    """Shared core followed by ``M`` heads stored as stacked layers.

    ``forward`` returns raw outputs of shape ``(M, B, out)``.
    """

    def __init__(self, spec, core, heads):
        self.spec = spec
        self.core = core
        self.heads = heads
        self.params = ParamStore()
        for i, layer in enumerate(core):
            self.params.add(f"core{i}.weight", layer.weight)
            self.params.add(f"core{i}.bias", layer.bias)
        for i, layer in enumerate(heads):
            self.params.add(f"head{i}.weight", layer.weight)
            self.params.add(f"head{i}.bias", layer.bias)

    @classmethod
    def build(cls, spec, seed):
        rng = np.random.default_rng([seed, 1])
        c, h = spec.core_widths, spec.head_widths
        core = [init_linear(rng, c[i], c[i + 1]) for i in range(len(c) - 1)]
        heads = [init_linear(rng, h[i], h[i + 1], copies=spec.n_heads) for i in range(len(h) - 1)]
        return cls(spec, core, heads)

    @property
    def task(self):
        return self.spec.task

    @property
    def n_heads(self):
        return self.spec.n_heads

    def head_weights(self):
        """Stacked ``(M, out, in)`` weight tensors, one per head layer."""
        return [layer.weight for layer in self.heads]

    def forward(self, x):
        h = ag.as_tensor(x)
        for layer in self.core:
            h = ag.relu(linear_forward(layer, h))
        for i, layer in enumerate(self.heads):
            h = linear_forward(layer, h)
            if i < len(self.heads) - 1:
                h = ag.relu(h)
        return h


class EnsembleTeacher:
    """``N`` independently initialised networks sharing one :class:`MlpSpec`."""

    def __init__(self, spec, members, seeds):
        if len(members) < 1:
            raise ConfigError("an ensemble needs at least one member")
        if len(members) != len(seeds):
            raise ConfigError("one seed per member")
        self.spec = spec
        self.members = list(members)
        self.seeds = [int(s) for s in seeds]

    @classmethod
    def build(cls, spec, n_members, base_seed):
        seeds = [base_seed + n for n in range(n_members)]
        return cls(spec, [Mlp.build(spec, s) for s in seeds], seeds)

    @property
    def task(self):
        return self.spec.task

    def __len__(self):
        return len(self.members)

    def member_raw(self, x):
        """Raw member outputs stacked to ``(N, B, out)`` (no graph)."""
        return np.stack([m.forward(Tensor(x)).data for m in self.members])


def build_student(spec, seed):
    return MultiHeadNet.build(spec, seed)


@dataclass
class MemberOutputs:
    """Per-member (or per-head) predictive distributions.

    Classification: ``probs`` of shape ``(S, B, K)``.  Regression: ``means``
    and ``variances`` of shape ``(S, B)``.
    """

    task: str
    probs: np.ndarray | None = None
    means: np.ndarray | None = None
    variances: np.ndarray | None = None

    @property
    def n_members(self):
        return len(self.probs if self.task == "classification" else self.means)


StudentOutput = MemberOutputs


def raw_to_outputs(raw, task, temperature=1.0):
    """Turn raw ``(S, B, out)`` network outputs into distributions."""
    raw = np.asarray(raw, dtype=np.float64)
    if task == "classification":
        return MemberOutputs(task, probs=ag.softmax(Tensor(raw), axis=-1, temperature=temperature).data)
    return MemberOutputs(task, means=raw[..., 0].copy(), variances=np.exp(raw[..., 1]))


def _input_array(model, x):
    x = np.asarray(x, dtype=np.float64)
    width = model.spec.widths[0] if isinstance(model.spec, MlpSpec) else model.spec.input_width
    single = x.ndim == 1
    if single:
        x = x.reshape(1, -1)
    if x.ndim != 2 or x.shape[1] != width:
        raise ShapeError(f"expected inputs of width {width}, got shape {x.shape}")
    return x, single


def student_forward(model, x):
    """Evaluate the core once and every head on it.

    A single input vector gives ``(M, K)`` / ``(M,)`` arrays; a batch gives
    ``(M, B, K)`` / ``(M, B)``.
    """
    x, single = _input_array(model, x)
    out = raw_to_outputs(model.forward(Tensor(x)).data, model.task)
    if single:
        out = _squeeze_batch(out)
    return out


def _squeeze_batch(out):
    if out.task == "classification":
        return MemberOutputs(out.task, probs=out.probs[:, 0])
    return MemberOutputs(out.task, means=out.means[:, 0], variances=out.variances[:, 0])


def predict_members(model, x):
    """Per-member distributions for a teacher ensemble or a student."""
    if isinstance(model, MultiHeadNet):
        return student_forward(model, x)
    if isinstance(model, EnsembleTeacher):
        x, single = _input_array(model.members[0], x)
        out = raw_to_outputs(model.member_raw(x), model.task)
        return _squeeze_batch(out) if single else out
    if isinstance(model, Mlp):
        x, single = _input_array(model, x)
        out = raw_to_outputs(model.forward(Tensor(x)).data[None], model.task)
        return _squeeze_batch(out) if single else out
    raise TypeError(f"cannot predict with {type(model).__name__}")


def combine_predictions(out):
    """Average members into a single prediction.

    Accepts :class:`MemberOutputs`, an ``(S, ..., K)`` probability array, or a
    ``(means, variances)`` pair.  Classification returns the mean probability
    vector; regression returns ``(mean, predictive variance)`` where the
    variance adds the mean aleatoric variance and the population variance of
    the member means.
    """
    if isinstance(out, MemberOutputs):
        if out.task == "classification":
            return np.mean(out.probs, axis=0)
        out = (out.means, out.variances)
    if isinstance(out, tuple):
        means, variances = (np.asarray(a, dtype=np.float64) for a in out)
        mean = means.mean(axis=0)
        return mean, variances.mean(axis=0) + ((means - mean) ** 2).mean(axis=0)
    return np.mean(np.asarray(out, dtype=np.float64), axis=0)


# -- counting ---------------------------------------------------------------


def _layer_params(layer):
    return layer.weight.data.size + layer.bias.data.size


def count_params(model):
    """Number of weight and bias entries."""
    if isinstance(model, LinearLayer):
        return _layer_params(model)
    if isinstance(model, Mlp):
        return sum(_layer_params(l) for l in model.layers)
    if isinstance(model, MultiHeadNet):
        return sum(_layer_params(l) for l in model.core + model.heads)
    if isinstance(model, EnsembleTeacher):
        return sum(count_params(m) for m in model.members)
    raise TypeError(f"cannot count {type(model).__name__}")


def count_flops(model):
    """Floating-point operations for one input.

    One per weight (multiply-add), one per bias add and one per ReLU output.
    Softmax and the variance exponential are not counted.
    """
    if isinstance(model, LinearLayer):
        return _layer_params(model)
    if isinstance(model, Mlp):
        relus = sum(l.out_features for l in model.layers[:-1])
        return count_params(model) + relus
    if isinstance(model, MultiHeadNet):
        relus = sum(l.out_features for l in model.core)
        relus += model.n_heads * sum(l.out_features for l in model.heads[:-1])
        return count_params(model) + relus
    if isinstance(model, EnsembleTeacher):
        return sum(count_flops(m) for m in model.members)
    raise TypeError(f"cannot count {type(model).__name__}")


# -- checkpoints ------------------------------------------------------------

_MAGIC = b"HYDRAPLUS-CKPT\x00\x01"


def _named_arrays(model):
    if isinstance(model, EnsembleTeacher):
        for n, member in enumerate(model.members):
            for name, p in member.params:
                yield f"member{n:03d}.{name}", p
    else:
        yield from model.params


def model_manifest(model):
    if isinstance(model, EnsembleTeacher):
        manifest = {"kind": "ensemble", "architecture": model.spec.to_dict(), "member_seeds": model.seeds}
    elif isinstance(model, MultiHeadNet):
        manifest = {"kind": "student", "architecture": model.spec.to_dict()}
    elif isinstance(model, Mlp):
        manifest = {"kind": "mlp", "architecture": model.spec.to_dict()}
    else:
        raise TypeError(f"cannot checkpoint {type(model).__name__}")
    manifest["task"] = model.task
    manifest["param_count"] = count_params(model)
    manifest["flop_count"] = count_flops(model)
    return manifest


def save_checkpoint(path, model, extra=None):
    """Write a manifest plus little-endian float64 arrays to one file.

    Layout: magic, 8-byte manifest length, JSON manifest, raw array bytes in
    manifest order.
    """
    manifest = model_manifest(model)
    if extra:
        manifest["extra"] = extra
    tensors, blobs, offset = [], [], 0
    for name, p in _named_arrays(model):
        blob = np.ascontiguousarray(p.data, dtype="<f8").tobytes()
        tensors.append({"name": name, "shape": list(p.data.shape), "offset": offset})
        blobs.append(blob)
        offset += len(blob)
    manifest["tensors"] = tensors
    header = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)
    return manifest


def read_manifest(path):
    with open(path, "rb") as fh:
        manifest, _ = _read(fh)
    return manifest


def _read(fh):
    if fh.read(len(_MAGIC)) != _MAGIC:
        raise ValueError("not a hydraplus checkpoint")
    (n,) = struct.unpack("<Q", fh.read(8))
    manifest = json.loads(fh.read(n).decode())
    return manifest, fh.read()


def load_checkpoint(path):
    """Rebuild the model stored at ``path``; returns ``(model, manifest)``."""
    with open(path, "rb") as fh:
        manifest, payload = _read(fh)
    arch = manifest["architecture"]
    kind = manifest["kind"]
    if kind == "ensemble":
        spec = MlpSpec(tuple(arch["widths"]), arch["task"])
        seeds = manifest["member_seeds"]
        model = EnsembleTeacher(spec, [Mlp.build(spec, s) for s in seeds], seeds)
    elif kind == "student":
        spec = MultiHeadSpec(tuple(arch["core_widths"]), tuple(arch["head_widths"]), arch["n_heads"], arch["task"])
        model = MultiHeadNet.build(spec, 0)
    elif kind == "mlp":
        model = Mlp.build(MlpSpec(tuple(arch["widths"]), arch["task"]), 0)
    else:
        raise ValueError(f"unknown checkpoint kind {kind!r}")
    params = dict(_named_arrays(model))
    if sorted(params) != sorted(t["name"] for t in manifest["tensors"]):
        raise ValueError("checkpoint tensors do not match the architecture")
    for t in manifest["tensors"]:
        p = params[t["name"]]
        count = int(np.prod(t["shape"])) if t["shape"] else 1
        arr = np.frombuffer(payload, dtype="<f8", count=count, offset=t["offset"])
        p.data = arr.reshape(t["shape"]).astype(np.float64)
    return model, manifest
