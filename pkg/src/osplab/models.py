"""The five trainable recall models and their state/compute accounting.

All models share one skeleton: token + learned positional embeddings, a
stack of pre-norm residual blocks (sequence mixer, then a SiLU feed-forward
of width ``2d``), a final RMS norm and an untied output head read at the last
position only. Mixers:

``attn``     causal softmax attention over a growing key/value cache
``linattn``  ELU+1 kernel linear attention, one ``d_h x d_h`` state per head
``gla``      gated linear attention with sigmoid key-wise forget gates
``ssm``      selective state space layer with a ``d x N`` state

Attention-family mixers concatenate heads without an output projection, so
``W_Q, W_K, W_V`` are the only mixer weights; the feed-forward mixes heads.
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor

ARCHITECTURES = ("transformer", "linear_transformer", "mamba", "gla", "hybrid")
HYBRID_LAYERS = 4
VOCAB = 35


class ConfigError(ValueError):
    pass


class LengthError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    arch: str
    d: int = 64
    n_layers: int = 2
    n_heads: int = 4
    N: int = 16
    r_attn: float = 0.0
    vocab: int = VOCAB
    t_max: int = 64
    ffn_mult: int = 2
    bits: int = 32
    init_std: float = 0.02
    gla_forget_init: float = 0.95
    gla_gate_rank: int = 16
    dt_min: float = 1e-3
    dt_max: float = 1e-1
    dtype: str = "float32"

    def __post_init__(self):
        if self.arch not in ARCHITECTURES:
            raise ConfigError(f"arch must be one of {ARCHITECTURES}, got {self.arch!r}")
        if self.d % self.n_heads:
            raise ConfigError(f"d={self.d} not divisible by heads={self.n_heads}")
        if self.arch == "hybrid" and self.n_layers != HYBRID_LAYERS:
            raise ConfigError(f"hybrid models have {HYBRID_LAYERS} layers, got {self.n_layers}")
        if not 0.0 <= self.r_attn <= 1.0:
            raise ConfigError(f"r_attn must lie in [0, 1], got {self.r_attn}")
        if self.t_max > 256:
            raise ConfigError("sequence lengths beyond 256 are not supported")

    @classmethod
    def for_arch(cls, arch: str, **kw) -> "ModelConfig":
        if arch == "hybrid":
            kw.setdefault("n_layers", HYBRID_LAYERS)
        return cls(arch=arch, **kw)

    def with_dtype(self, dtype: str) -> "ModelConfig":
        return replace(self, dtype=dtype)

    @property
    def d_head(self) -> int:
        return self.d // self.n_heads

    @property
    def n_attn(self) -> int:
        if self.arch == "transformer":
            return self.n_layers
        if self.arch == "hybrid":
            return math.ceil(round(self.r_attn * self.n_layers, 9))
        return 0

    @property
    def n_ssm(self) -> int:
        if self.arch == "mamba":
            return self.n_layers
        if self.arch == "hybrid":
            return self.n_layers - self.n_attn
        return 0

    @property
    def label(self) -> str:
        if self.arch == "mamba":
            base = f"mamba_N{self.N}"
        elif self.arch == "hybrid":
            return f"hybrid_r{self.r_attn:g}"
        else:
            base = self.arch
        return base if self.n_layers == 2 else f"{base}_L{self.n_layers}"

    def canonical(self) -> "ModelConfig":
        """The non-hybrid config that builds the same graph, when one exists.

        A hybrid with no attention layers is a 4-layer Mamba and one with only
        attention layers is a 4-layer Transformer; parameter names, shapes and
        the forward computation coincide, so training either gives identical results. Other hybrids map to ``r_attn = n_attn / n_layers``.
        """
        if self.arch != "hybrid":
            return self
        if self.n_attn == 0:
            return replace(self, arch="mamba", r_attn=0.0)
        if self.n_attn == self.n_layers:
            return replace(self, arch="transformer", r_attn=0.0)
        # r_attn values with the same ceil(r * layers) build the same stack
        return replace(self, r_attn=self.n_attn / self.n_layers)

    def layer_kinds(self) -> list[str]:
        if self.arch == "transformer":
            return ["attn"] * self.n_layers
        if self.arch == "linear_transformer":
            return ["linattn"] * self.n_layers
        if self.arch == "gla":
            return ["gla"] * self.n_layers
        if self.arch == "mamba":
            return ["ssm"] * self.n_layers
        # attention layers take the final positions of the stack
        return ["ssm"] * self.n_ssm + ["attn"] * self.n_attn

    def to_dict(self) -> dict:
        return asdict(self)


# --- accounting -------------------------------------------------------------


def state_bits(config: ModelConfig, t: int) -> int:
    """Recurrent/cache state after ``t`` tokens, in bits (parameters excluded).

    Attention layers hold a key and a value vector per token; linear and gated
    linear attention hold ``n_heads`` matrices of ``d_h x d_h`` (the linear
    attention normalizer is not counted); SSM layers hold ``d x N``.
    """
    b, d = config.bits, config.d
    total = 0
    for kind in config.layer_kinds():
        if kind == "attn":
            total += t * 2 * d * b
        elif kind in ("linattn", "gla"):
            total += config.n_heads * config.d_head**2 * b
        else:
            total += d * config.N * b
    return total


def step_flops(config: ModelConfig, t: int) -> int:
    """Per-token cost at cache length ``t`` under the per-architecture convention.

    transformer         2 t d per layer (scores plus value mix): 16,384 at t=64
    hybrid              t d per attention layer + d N per SSM layer: 10,240 at t=64, r=0.5
    linear / gla        2 n_heads d_h^2 per layer (update plus readout): 4,096
    mamba               d N once for the whole model: 1,024 at N=16
    """
    d = config.d
    if config.arch == "transformer":
        return config.n_layers * 2 * t * d
    if config.arch in ("linear_transformer", "gla"):
        return config.n_layers * 2 * config.n_heads * config.d_head**2
    if config.arch == "mamba":
        return d * config.N
    return config.n_attn * t * d + config.n_ssm * d * config.N


def max_step_flops(config: ModelConfig, T: int) -> int:
    return max(step_flops(config, t) for t in range(1, T + 1))


def peak_state_bits(config: ModelConfig, T: int) -> int:
    return max(state_bits(config, t) for t in range(0, T + 1))


# --- parameters -------------------------------------------------------------


def _trunc_normal(rng, shape, std, dtype):
    x = rng.standard_normal(shape)
    bad = np.abs(x) > 2
    while bad.any():
        x[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(x) > 2
    return (x * std).astype(dtype)


def init_params(config: ModelConfig, rng: np.random.Generator) -> dict[str, Parameter]:
    d, dt = config.d, np.dtype(config.dtype)
    std = config.init_std
    P: dict[str, Parameter] = {}

    def add(name, arr):
        P[name] = Parameter(name, Tensor(np.asarray(arr, dtype=dt)))

    def proj(name, *shape):
        add(name, _trunc_normal(rng, shape, std, dt))

    proj("embed", config.vocab, d)
    proj("pos", config.t_max, d)
    dff = config.ffn_mult * d
    for i, kind in enumerate(config.layer_kinds()):
        pre = f"layers.{i}."
        add(pre + "norm1", np.ones(d))
        if kind in ("attn", "linattn", "gla"):
            proj(pre + "W_Q", d, d)
            proj(pre + "W_K", d, d)
            proj(pre + "W_V", d, d)
        if kind == "gla":
            r = config.gla_gate_rank
            proj(pre + "W_g1", d, r)
            proj(pre + "W_g2", r, d)
            f = config.gla_forget_init
            add(pre + "b_g", np.full(d, math.log(f / (1 - f))))
        if kind == "ssm":
            N = config.N
            proj(pre + "W_in", d, d)
            proj(pre + "W_delta", d, d)
            dt_init = np.exp(rng.uniform(math.log(config.dt_min), math.log(config.dt_max), size=d))
            add(pre + "b_delta", dt_init + np.log(-np.expm1(-dt_init)))  # inverse softplus
            proj(pre + "W_B", d, N)
            proj(pre + "W_C", d, N)
            add(pre + "A_log", np.log(np.tile(np.arange(1, N + 1, dtype=np.float64), (d, 1))))
            add(pre + "D", np.ones(d))
            proj(pre + "W_out", d, d)
        add(pre + "norm2", np.ones(d))
        proj(pre + "W_ff1", d, dff)
        add(pre + "b_ff1", np.zeros(dff))
        proj(pre + "W_ff2", dff, d)
        add(pre + "b_ff2", np.zeros(d))
    add("final_norm", np.ones(d))
    proj("head", d, config.vocab)
    return P


def count_parameters(config: ModelConfig) -> int:
    return int(sum(p.value.data.size for p in init_params(config, np.random.default_rng(0)).values()))


def cast_params(params: dict[str, Parameter], dtype) -> dict[str, Parameter]:
    return {k: Parameter(k, Tensor(p.value.data.astype(dtype)), p.trainable) for k, p in params.items()}


def param_arrays(params: dict[str, Parameter]) -> dict[str, np.ndarray]:
    return {k: p.value.data for k, p in params.items()}


# --- forward ----------------------------------------------------------------


@dataclass
class LayerState:
    kind: str
    arrays: dict[str, np.ndarray] = field(default_factory=dict)
    per_step: np.ndarray | None = None  # state after each token, leading axes (B, T, ...)

    def bits(self, b: int) -> int:
        """Bits of the final state, computed from stored array sizes."""
        if self.kind == "attn":
            B = self.arrays["K"].shape[0]
            return (self.arrays["K"].size + self.arrays["V"].size) // B * b
        key = {"linattn": "S", "gla": "S", "ssm": "h"}[self.kind]
        arr = self.arrays[key]
        return arr[0].size * b


@dataclass
class ModelState:
    layers: list[LayerState]
    tokens_processed: int

    def state_bits(self, b: int = 32) -> int:
        return sum(layer.bits(b) for layer in self.layers)


def _rmsnorm(x: Tensor, g: Tensor) -> Tensor:
    ms = ad.mean(ad.square(x), axis=-1, keepdims=True)
    return x * ad.rsqrt(ms + 1e-6) * g


def _split_heads(x: Tensor, H: int) -> Tensor:
    B, T, d = x.shape
    return ad.transpose(ad.reshape(x, (B, T, H, d // H)), (0, 2, 1, 3))


def _merge_heads(x: Tensor) -> Tensor:
    B, H, T, dh = x.shape
    return ad.reshape(ad.transpose(x, (0, 2, 1, 3)), (B, T, H * dh))


def _causal(T: int, dtype, additive: bool) -> np.ndarray:
    lower = np.tril(np.ones((T, T), dtype=bool))
    if additive:
        return np.where(lower, 0.0, -1e9).astype(dtype)
    return lower.astype(dtype)


def _attn_mixer(h, P, pre, config, record):
    H = config.n_heads
    q = _split_heads(h @ P[pre + "W_Q"], H)
    k = _split_heads(h @ P[pre + "W_K"], H)
    v = _split_heads(h @ P[pre + "W_V"], H)
    T = h.shape[1]
    scores = ad.scale(q @ ad.transpose(k, (0, 1, 3, 2)), 1.0 / math.sqrt(config.d_head))
    att = ad.softmax_lastdim(scores + _causal(T, h.dtype, True))
    out = _merge_heads(att @ v)
    if record is not None:
        record.append(LayerState("attn", {"K": k.data, "V": v.data}))
    return out


def _linattn_mixer(h, P, pre, config, record):
    H = config.n_heads
    q = ad.elu_plus_one(_split_heads(h @ P[pre + "W_Q"], H))
    k = ad.elu_plus_one(_split_heads(h @ P[pre + "W_K"], H))
    v = _split_heads(h @ P[pre + "W_V"], H)
    T = h.shape[1]
    # parallel form of S_t = sum_{i<=t} phi(k_i) v_i^T, z_t = sum_{i<=t} phi(k_i)
    A = (q @ ad.transpose(k, (0, 1, 3, 2))) * _causal(T, h.dtype, False)
    out = _merge_heads((A @ v) / ad.sum(A, axis=-1, keepdims=True))
    if record is not None:
        kv = k.data[..., :, None] * v.data[..., None, :]
        S_steps = np.cumsum(kv, axis=2)  # (B, H, T, dh, dh)
        z_steps = np.cumsum(k.data, axis=2)
        record.append(LayerState(
            "linattn",
            {"S": S_steps[:, :, -1], "z": z_steps[:, :, -1]},
            per_step=np.moveaxis(S_steps, 2, 1),
        ))
    return out


def _gla_mixer(h, P, pre, config, record):
    H = config.n_heads
    q = _split_heads(ad.scale(h @ P[pre + "W_Q"], 1.0 / math.sqrt(config.d_head)), H)
    k = _split_heads(h @ P[pre + "W_K"], H)
    v = _split_heads(h @ P[pre + "W_V"], H)
    a = _split_heads(ad.sigmoid((h @ P[pre + "W_g1"]) @ P[pre + "W_g2"] + P[pre + "b_g"]), H)
    if record is None:
        return _merge_heads(ad.gla_scan(q, k, v, a))
    o, states = ad.gla_scan(q, k, v, a, return_states=True)
    record.append(LayerState("gla", {"S": states[:, :, -1]}, per_step=np.moveaxis(states, 2, 1)))
    return _merge_heads(o)


def _ssm_mixer(h, P, pre, config, record):
    xs = ad.silu(h @ P[pre + "W_in"])
    delta = ad.softplus(xs @ P[pre + "W_delta"] + P[pre + "b_delta"])
    Bm = xs @ P[pre + "W_B"]
    Cm = xs @ P[pre + "W_C"]
    A = ad.neg(ad.exp(P[pre + "A_log"]))
    if record is None:
        y = ad.selective_scan(xs, delta, A, Bm, Cm)
    else:
        y, hs = ad.selective_scan(xs, delta, A, Bm, Cm, return_states=True)
        record.append(LayerState("ssm", {"h": hs[:, -1]}, per_step=hs))
    y = y + xs * P[pre + "D"]
    return y @ P[pre + "W_out"]


_MIXERS = {"attn": _attn_mixer, "linattn": _linattn_mixer, "gla": _gla_mixer, "ssm": _ssm_mixer}


def model_forward(config: ModelConfig, params, tokens, return_states: bool = False):
    """Logits ``(B, vocab)`` at the last position, plus a :class:`ModelState` when requested.

    ``params`` maps names to :class:`Parameter` or :class:`Tensor`; ``tokens``
    is an int array ``(B, T)`` or ``(T,)``.
    """
    P = {k: (v.value if isinstance(v, Parameter) else v) for k, v in params.items()}
    toks = np.asarray(tokens, dtype=np.int64)
    if toks.ndim == 1:
        toks = toks[None]
    B, T = toks.shape
    if T > config.t_max:
        raise LengthError(f"sequence length {T} exceeds t_max={config.t_max}")
    if T < 1:
        raise LengthError("empty sequence")
    x = ad.take_rows(P["embed"], toks) + P["pos"][:T]
    record: list[LayerState] | None = [] if return_states else None
    for i, kind in enumerate(config.layer_kinds()):
        pre = f"layers.{i}."
        x = x + _MIXERS[kind](_rmsnorm(x, P[pre + "norm1"]), P, pre, config, record)
        hdn = _rmsnorm(x, P[pre + "norm2"])
        ff = ad.silu(hdn @ P[pre + "W_ff1"] + P[pre + "b_ff1"]) @ P[pre + "W_ff2"] + P[pre + "b_ff2"]
        x = x + ff
    last = _rmsnorm(x[:, T - 1, :], P["final_norm"])
    logits = last @ P["head"]
    if return_states:
        return logits, ModelState(record, T)
    return logits


def transformer_forward(config: ModelConfig, params, tokens, return_states: bool = False):
    if config.arch != "transformer":
        raise ConfigError(f"transformer_forward needs arch='transformer', got {config.arch!r}")
    return model_forward(config, params, tokens, return_states)


# --- checkpoints --------------------------------------------------------------

CHECKPOINT_FORMAT = "osplab-params/1"


def save_checkpoint(path, config: ModelConfig, params: dict[str, Parameter], extra: dict | None = None) -> None:
    """Write an ``.npz`` holding every array plus a JSON manifest under ``__manifest__``.

    Manifest: ``format``, ``config``, and ``arrays`` (ordered ``name, shape, dtype``).
    """
    arrays = param_arrays(params)
    manifest = {
        "format": CHECKPOINT_FORMAT,
        "config": config.to_dict(),
        "arrays": [{"name": k, "shape": list(a.shape), "dtype": str(a.dtype)} for k, a in arrays.items()],
        "extra": extra or {},
    }
    buf = io.BytesIO()
    np.savez(buf, __manifest__=np.array(json.dumps(manifest, sort_keys=True)), **arrays)
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_checkpoint(path) -> tuple[ModelConfig, dict[str, Parameter], dict]:
    with np.load(path, allow_pickle=False) as z:
        manifest = json.loads(str(z["__manifest__"]))
        if manifest.get("format") != CHECKPOINT_FORMAT:
            raise ValueError(f"unknown checkpoint format {manifest.get('format')!r}")
        config = ModelConfig(**manifest["config"])
        params = {}
        for entry in manifest["arrays"]:
            arr = z[entry["name"]]
            if list(arr.shape) != entry["shape"] or str(arr.dtype) != entry["dtype"]:
                raise ValueError(f"array {entry['name']} does not match its manifest entry")
            params[entry["name"]] = Parameter(entry["name"], Tensor(arr.copy()))
    return config, params, manifest.get("extra", {})
