"""Declarative parameter-group specs and the model zoo.

A `ParamGroupSpec` names how each of the five groups (query, key, decay,
value, gate) is produced from the input and fixes the dimension layout.
`make_zoo_spec` realizes the published variants as rows of this taxonomy,
with two real-valued simplifications: complex rotating decays are modeled
by their magnitude only, and nonlinear query kernels collapse to linear
projections (the taxonomy has no nonlinear query).
"""

import json
from dataclasses import dataclass, field, asdict

import numpy as np

from . import tensor as T
from .errors import ConfigError

QUERY_KINDS = ("none", "linear_proj")
KEY_KINDS = ("none", "linear_proj", "sigmoid_proj", "exp_proj", "one_minus_decay")
DECAY_KINDS = ("none", "fixed_scalar", "dynamic_sigmoid")
VALUE_KINDS = ("linear_proj", "identity")
GATE_KINDS = ("none", "silu_proj", "sigmoid_proj")


@dataclass
class ParamGroupSpec:
    name: str
    query: str
    key: str
    decay: str
    value: str
    gate: str
    d: int
    d_k: int
    d_v: int
    H: int
    tau: float = 16.0          # temperature of sigmoid(x W_a)^(1/tau) dynamic decay
    fixed_decay_range: tuple = (0.9, 0.999)
    per_channel: bool = False  # H pinned to the table's dimension row

    def __post_init__(self):
        self.validate()

    def validate(self):
        for kind, allowed, label in (
            (self.query, QUERY_KINDS, "query"),
            (self.key, KEY_KINDS, "key"),
            (self.decay, DECAY_KINDS, "decay"),
            (self.value, VALUE_KINDS, "value"),
            (self.gate, GATE_KINDS, "gate"),
        ):
            if kind not in allowed:
                raise ConfigError(f"{label} kind {kind!r} not in {allowed}")
        if self.d_k % self.H or self.d_v % self.H:
            raise ConfigError(
                f"d_k={self.d_k}, d_v={self.d_v} must be divisible by H={self.H}"
            )
        if self.key == "one_minus_decay" and self.decay != "dynamic_sigmoid":
            raise ConfigError("key=one_minus_decay requires decay=dynamic_sigmoid")
        if self.value == "identity" and self.d_v != self.d:
            raise ConfigError(f"value=identity needs d_v == d (got {self.d_v} != {self.d})")
        lo, hi = self.fixed_decay_range
        if not (0.0 < lo <= hi < 1.0):
            raise ConfigError(f"fixed decay range {self.fixed_decay_range} outside (0, 1)")

    # parameter-group view used by the C0-C3 classifier
    @property
    def has_query_group(self):
        return self.query == "linear_proj"

    @property
    def has_key_group(self):
        return self.key in ("linear_proj", "sigmoid_proj", "exp_proj")

    @property
    def decay_group(self):
        return {"none": "none", "fixed_scalar": "fixed", "dynamic_sigmoid": "dynamic"}[self.decay]

    def group_label(self):
        parts = []
        if self.has_query_group:
            parts.append("Q")
        if self.has_key_group:
            parts.append("K")
        if self.decay_group == "fixed":
            parts.append("L")
        elif self.decay_group == "dynamic":
            parts.append("Lt")
        return "_".join(parts) if parts else "-"

    def to_dict(self):
        d = asdict(self)
        d["fixed_decay_range"] = list(self.fixed_decay_range)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "fixed_decay_range" in d:
            d["fixed_decay_range"] = tuple(d["fixed_decay_range"])
        return cls(**d)

    def to_json(self, path):
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=2)

    @classmethod
    def from_json(cls, path):
        with open(path) as f:
            return cls.from_dict(json.load(f))

    @classmethod
    def from_toml(cls, path):
        import tomli

        with open(path, "rb") as f:
            return cls.from_dict(tomli.load(f))


ZOO_NAMES = (
    "vanilla_linformer",
    "retnet_like",
    "transnormer_like",
    "gla_like",
    "glru_like",
    "rwkv4_like",
    "mamba_like",
    "s5_like",
    "hgrn_like",
    "metala",
)


def make_zoo_spec(name, d=16, H=1, n_state=4):
    """Build the spec for a zoo variant.

    `H` applies to the variants with a free head count; per-channel rows
    (rwkv4/glru/hgrn/mamba/s5) pin their head layout to the published
    dimension row and ignore it. `n_state` is the per-head state expansion
    of the SSM rows.
    """
    if name not in ZOO_NAMES:
        raise ConfigError(f"unknown zoo spec {name!r}; valid names: {', '.join(ZOO_NAMES)}")
    if name == "vanilla_linformer":
        return ParamGroupSpec(name, "linear_proj", "sigmoid_proj", "none",
                              "linear_proj", "none", d, d, d, H)
    if name == "retnet_like":
        return ParamGroupSpec(name, "linear_proj", "linear_proj", "fixed_scalar",
                              "linear_proj", "silu_proj", d, d, d, H)
    if name == "transnormer_like":
        return ParamGroupSpec(name, "linear_proj", "sigmoid_proj", "fixed_scalar",
                              "linear_proj", "none", d, d, d, H)
    if name == "gla_like":
        if (d // 2) % H:
            raise ConfigError(f"gla_like needs (d/2) % H == 0, got d={d}, H={H}")
        return ParamGroupSpec(name, "linear_proj", "linear_proj", "dynamic_sigmoid",
                              "linear_proj", "silu_proj", d, d // 2, d, H, tau=16.0)
    if name == "glru_like":
        return ParamGroupSpec(name, "none", "sigmoid_proj", "dynamic_sigmoid",
                              "linear_proj", "silu_proj", d, d, d, d, tau=1.0,
                              per_channel=True)
    if name == "rwkv4_like":
        return ParamGroupSpec(name, "none", "exp_proj", "fixed_scalar",
                              "linear_proj", "sigmoid_proj", d, d, d, d,
                              per_channel=True)
    if name == "mamba_like":
        return ParamGroupSpec(name, "linear_proj", "linear_proj", "dynamic_sigmoid",
                              "identity", "none", d, n_state * d, d, d, tau=1.0,
                              per_channel=True)
    if name == "s5_like":
        return ParamGroupSpec(name, "none", "none", "fixed_scalar",
                              "linear_proj", "none", d, n_state * d, n_state * d,
                              n_state * d, per_channel=True)
    if name == "hgrn_like":
        return ParamGroupSpec(name, "none", "one_minus_decay", "dynamic_sigmoid",
                              "linear_proj", "silu_proj", d, d, d, d, tau=1.0,
                              per_channel=True)
    if name == "metala":
        if (d // 2) % H:
            raise ConfigError(f"metala needs (d/2) % H == 0, got d={d}, H={H}")
        return ParamGroupSpec(name, "linear_proj", "one_minus_decay", "dynamic_sigmoid",
                              "linear_proj", "silu_proj", d, d // 2, d, H, tau=16.0)
    raise AssertionError(name)


def _uniform(rng, shape, scale):
    return rng.uniform(-scale, scale, size=shape)


def fixed_decay_values(w_raw):
    """Map the raw fixed-decay parameter to lambda = exp(-exp(w)) in (0, 1)."""
    return np.exp(-np.exp(w_raw))


def init_weights(spec, seed=0, trainable=True):
    """Weights for one token-mixing layer of `spec`, as a dict name -> Tensor.

    Projections are uniform(-1/sqrt(d), 1/sqrt(d)). Fixed decays are stored
    as raw parameters w with lambda = exp(-exp(w)), initialized so lambda is
    log-spaced per channel across `spec.fixed_decay_range` (multi-scale).
    """
    rng = np.random.default_rng(seed)
    s = 1.0 / np.sqrt(spec.d)
    w = {}
    if spec.query == "linear_proj":
        w["W_Q"] = _uniform(rng, (spec.d, spec.d_k), s)
    if spec.key in ("linear_proj", "sigmoid_proj", "exp_proj"):
        w["W_K"] = _uniform(rng, (spec.d, spec.d_k), s)
    if spec.decay == "dynamic_sigmoid":
        w["W_alpha"] = _uniform(rng, (spec.d, spec.d_k), s)
    elif spec.decay == "fixed_scalar":
        lo, hi = spec.fixed_decay_range
        lam = np.exp(np.linspace(np.log(lo), np.log(hi), spec.d_k))
        w["w_decay"] = np.log(-np.log(lam))
    if spec.value == "linear_proj":
        w["W_V"] = _uniform(rng, (spec.d, spec.d_v), s)
    if spec.gate in ("silu_proj", "sigmoid_proj"):
        w["W_G"] = _uniform(rng, (spec.d, spec.d_v), s)
        w["b_G"] = np.zeros(spec.d_v)
    return {k: T.Tensor(v, requires_grad=trainable) for k, v in w.items()}


def check_weights(spec, weights):
    """Raise ConfigError if a required weight is missing or mis-shaped."""
    expected = {}
    if spec.query == "linear_proj":
        expected["W_Q"] = (spec.d, spec.d_k)
    if spec.key in ("linear_proj", "sigmoid_proj", "exp_proj"):
        expected["W_K"] = (spec.d, spec.d_k)
    if spec.decay == "dynamic_sigmoid":
        expected["W_alpha"] = (spec.d, spec.d_k)
    elif spec.decay == "fixed_scalar":
        expected["w_decay"] = (spec.d_k,)
    if spec.value == "linear_proj":
        expected["W_V"] = (spec.d, spec.d_v)
    if spec.gate in ("silu_proj", "sigmoid_proj"):
        expected["W_G"] = (spec.d, spec.d_v)
        expected["b_G"] = (spec.d_v,)
    for name, shape in expected.items():
        if name not in weights:
            raise ConfigError(f"spec {spec.name!r}: missing weight {name}")
        if tuple(weights[name].shape) != shape:
            raise ConfigError(
                f"spec {spec.name!r}: weight {name} has shape {tuple(weights[name].shape)}, "
                f"expected {shape}"
            )
