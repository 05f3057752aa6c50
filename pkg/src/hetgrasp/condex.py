"""Conditional-neural-process grasp quality model and its two baselines.

ConDex encodes each context observation ``(x, z, y)`` into ``r_i``,
aggregates them into one task vector ``r`` and scores targets with a
decoder fed ``(x, z, r)``. DexNet is the same decoder without ``r``; IGML
is DexNet meta-trained with first-order MAML and adapted on the context by
plain gradient steps.

Parameter names are ``<net>.<layer>.<w|b>`` with nets ``enc``, ``dec`` and
``att`` (attention query projection).
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .collect import Episode, ObservationSet, make_episode, task_augment
from .errors import ConfigError, InsufficientDataError
from .nncore import ops
from .nncore.optim import Adam
from .nncore.params import ModelParams, he_uniform, lecun_uniform
from .nncore.tensor import Tensor, no_grad


@dataclass(frozen=True)
class ConvSpec:
    kernel: int
    filters: int
    stride: int = 1
    pool: bool = True


@dataclass(frozen=True)
class NetConfig:
    conv: tuple[ConvSpec, ...] = (ConvSpec(7, 16), ConvSpec(5, 16))
    hidden: int = 64
    r_dim: int = 32
    aggregator: str = "mean"
    patch_size: int = 64
    # fixed average pooling of the raw patch before the trunk
    input_pool: int = 1
    share_trunk: bool = False
    patch_scale: float = 30.0
    z_scale: float = 20.0
    # context labels enter the encoder as +-label_scale
    label_scale: float = 1.0

    def __post_init__(self):
        if self.aggregator not in ("mean", "attention"):
            raise ConfigError(f"aggregator must be 'mean' or 'attention', got {self.aggregator!r}")
        if self.patch_size % self.input_pool:
            raise ConfigError(f"input_pool {self.input_pool} must divide patch_size {self.patch_size}")
        object.__setattr__(self, "conv", tuple(c if isinstance(c, ConvSpec) else ConvSpec(**c) for c in self.conv))

    @property
    def input_size(self) -> int:
        return self.patch_size // self.input_pool

    def trunk_shape(self) -> tuple[int, int, int]:
        s, c = self.input_size, 1
        for spec in self.conv:
            s = (s - spec.kernel) // spec.stride + 1
            if s < 1:
                raise ConfigError(f"conv stack does not fit a {self.input_size}px input")
            c = spec.filters
            if spec.pool:
                s //= 2
                if s < 1:
                    raise ConfigError(f"pooling leaves nothing of a {self.input_size}px input")
        return s, s, c

    @property
    def trunk_features(self) -> int:
        h, w, c = self.trunk_shape()
        return h * w * c

    def to_dict(self) -> dict:
        d = asdict(self)
        d["conv"] = [asdict(c) for c in self.conv]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NetConfig":
        d = dict(d)
        d["conv"] = tuple(ConvSpec(**c) for c in d.get("conv", []))
        return cls(**d)


def compact_net(patch_size: int = 64, **kw) -> NetConfig:
    """Cheaper trunk used for the experiments: 2x input pooling, strided first conv."""
    return NetConfig(conv=(ConvSpec(4, 16, 2, False), ConvSpec(3, 16, 1, True)), patch_size=patch_size,
                     input_pool=2, **kw)


# parameters


def _conv_params(p: ModelParams, rng, prefix: str, cfg: NetConfig) -> None:
    c = 1
    for i, spec in enumerate(cfg.conv):
        fan_in = spec.kernel * spec.kernel * c
        p.add(f"{prefix}.conv{i}.w", he_uniform(rng, (spec.kernel, spec.kernel, c, spec.filters), fan_in))
        p.add(f"{prefix}.conv{i}.b", np.zeros(spec.filters))
        c = spec.filters


def _dense_params(p: ModelParams, rng, name: str, n_in: int, n_out: int, last: bool = False) -> None:
    init = lecun_uniform if last else he_uniform
    p.add(f"{name}.w", init(rng, (n_in, n_out), n_in))
    p.add(f"{name}.b", np.zeros(n_out))


def init_params(cfg: NetConfig, seed: int, kind: str = "condex") -> ModelParams:
    """Fresh parameters; ``kind`` is ``condex`` or ``dexnet`` (decoder only)."""
    rng = np.random.default_rng(seed)
    p = ModelParams(init_seed=int(seed), meta={"kind": kind, "net": cfg.to_dict()})
    feat = cfg.trunk_features
    _conv_params(p, rng, "dec", cfg)
    r_in = cfg.r_dim if kind == "condex" else 0
    _dense_params(p, rng, "dec.fc0", feat + 1 + r_in, cfg.hidden)
    _dense_params(p, rng, "dec.out", cfg.hidden, 1, last=True)
    if kind == "condex":
        if not cfg.share_trunk:
            _conv_params(p, rng, "enc", cfg)
        _dense_params(p, rng, "enc.fc0", feat + 2, cfg.hidden)
        _dense_params(p, rng, "enc.out", cfg.hidden, cfg.r_dim, last=True)
        if cfg.aggregator == "attention":
            _dense_params(p, rng, "att.q", feat + 1, cfg.r_dim, last=True)
    elif kind != "dexnet":
        raise ConfigError(f"unknown model kind {kind!r}")
    return p


# functional network pieces


def prepare_patches(patches: np.ndarray, cfg: NetConfig) -> np.ndarray:
    """Raw (n, s, s) height patches -> scaled, pooled NHWC float64 network input."""
    x = np.asarray(patches, dtype=np.float64)
    if x.shape[-1] != cfg.patch_size:
        from .render import center_crop
        if x.shape[-1] < cfg.patch_size:
            raise ConfigError(f"model expects {cfg.patch_size}px patches, got {x.shape[-1]}px")
        x = center_crop(x, cfg.patch_size)
    k = cfg.input_pool
    if k > 1:
        n, s = x.shape[0], x.shape[-1]
        x = x.reshape(n, s // k, k, s // k, k).mean(axis=(2, 4))
    return (x * cfg.patch_scale)[..., None]


def trunk(params: ModelParams, prefix: str, x: np.ndarray, cfg: NetConfig) -> Tensor:
    if cfg.share_trunk:
        prefix = "dec"
    h = Tensor(x)
    for i, spec in enumerate(cfg.conv):
        h = ops.relu(ops.conv2d(h, params[f"{prefix}.conv{i}.w"], params[f"{prefix}.conv{i}.b"], spec.stride))
        if spec.pool:
            h = ops.maxpool2(h)
    return ops.flatten(h)


def _col(v: np.ndarray, scale: float = 1.0) -> Tensor:
    return Tensor(np.asarray(v, dtype=np.float64).reshape(-1, 1) * scale)


def encoder_head(params: ModelParams, feats: Tensor, z: np.ndarray, y: np.ndarray, cfg: NetConfig) -> Tensor:
    signed = 2.0 * np.asarray(y, dtype=np.float64) - 1.0
    h = ops.concat([feats, _col(z, cfg.z_scale), _col(signed, cfg.label_scale)], axis=1)
    h = ops.relu(ops.dense(h, params["enc.fc0.w"], params["enc.fc0.b"]))
    return ops.dense(h, params["enc.out.w"], params["enc.out.b"])


def decoder_head(params: ModelParams, feats: Tensor, z: np.ndarray, r: Tensor | None, cfg: NetConfig) -> Tensor:
    parts = [feats, _col(z, cfg.z_scale)]
    if r is not None:
        parts.append(r)
    h = ops.relu(ops.dense(ops.concat(parts, axis=1), params["dec.fc0.w"], params["dec.fc0.b"]))
    return ops.sigmoid(ops.dense(h, params["dec.out.w"], params["dec.out.b"]))


def attention_query(params: ModelParams, feats: Tensor, z: np.ndarray, cfg: NetConfig) -> Tensor:
    return ops.dense(ops.concat([feats, _col(z, cfg.z_scale)], axis=1), params["att.q.w"], params["att.q.b"])


def aggregate_embeddings(emb: Tensor, counts: Sequence[int], mode: str = "mean", query: Tensor | None = None,
                         query_counts: Sequence[int] | None = None) -> Tensor:
    """Per-task representation: (T, R) for ``mean``, (targets, R) for ``attention``.

    Empty context blocks give zero vectors in both modes.
    """
    if mode == "mean":
        return ops.mean_over_set(emb, counts)
    if mode == "attention":
        if query is None:
            raise ConfigError("attention aggregation needs a target query")
        return ops.dot_product_attention(query, emb, emb, query_counts, counts)
    raise ConfigError(f"unknown aggregator {mode!r}")


def condex_forward(params: ModelParams, cfg: NetConfig, ctx_x: np.ndarray, ctx_z, ctx_y, ctx_counts: Sequence[int],
                   tgt_x: np.ndarray, tgt_z, tgt_counts: Sequence[int]) -> Tensor:
    """Batched CNP forward: predictions (sum(tgt_counts), 1) for T tasks.

    ``ctx_x``/``tgt_x`` are prepared network inputs with task blocks laid
    out consecutively in the order of the counts.
    """
    tgt_feats = trunk(params, "dec", tgt_x, cfg)
    ctx_counts = [int(c) for c in ctx_counts]
    tgt_counts = [int(c) for c in tgt_counts]
    if sum(ctx_counts):
        emb = encoder_head(params, trunk(params, "enc", ctx_x, cfg), ctx_z, ctx_y, cfg)
    else:
        emb = Tensor(np.zeros((0, cfg.r_dim)))
    if cfg.aggregator == "mean":
        r_task = aggregate_embeddings(emb, ctx_counts)
        r = ops.gather_rows(r_task, np.repeat(np.arange(len(tgt_counts)), tgt_counts))
    else:
        q = attention_query(params, tgt_feats, tgt_z, cfg)
        r = aggregate_embeddings(emb, ctx_counts, "attention", q, tgt_counts)
    return decoder_head(params, tgt_feats, tgt_z, r, cfg)


def dexnet_forward(params: ModelParams, cfg: NetConfig, x: np.ndarray, z) -> Tensor:
    return decoder_head(params, trunk(params, "dec", x, cfg), z, None, cfg)


# models


class ConDex:
    """Frozen-parameter inference wrapper around the functional network."""

    kind = "condex"

    def __init__(self, params: ModelParams, cfg: NetConfig | None = None):
        self.params = params
        self.cfg = cfg or NetConfig.from_dict(params.meta["net"])

    @classmethod
    def init(cls, cfg: NetConfig, seed: int = 0) -> "ConDex":
        return cls(init_params(cfg, seed, "condex"), cfg)

    def prepare(self, patches: np.ndarray) -> np.ndarray:
        return prepare_patches(patches, self.cfg)

    def encode_context(self, patches, z, y) -> np.ndarray:
        """Embeddings r_i, one row per observation."""
        with no_grad():
            x = self.prepare(patches)
            return encoder_head(self.params, trunk(self.params, "enc", x, self.cfg), z, y, self.cfg).data

    def target_features(self, patches) -> np.ndarray:
        with no_grad():
            return trunk(self.params, "dec", self.prepare(patches), self.cfg).data

    def aggregate(self, emb: np.ndarray, query_feats: np.ndarray | None = None, query_z=None) -> np.ndarray:
        """Task vector for one context set: (R,) for mean, (targets, R) for attention."""
        with no_grad():
            e = Tensor(np.asarray(emb, dtype=np.float64).reshape(-1, self.cfg.r_dim))
            if self.cfg.aggregator == "mean":
                return aggregate_embeddings(e, [len(e.data)]).data[0]
            q = attention_query(self.params, Tensor(query_feats), query_z, self.cfg)
            return aggregate_embeddings(e, [len(e.data)], "attention", q, [len(q.data)]).data

    def head(self, feats: np.ndarray, z, r: np.ndarray) -> np.ndarray:
        """Scores from precomputed target features and a task vector."""
        feats = np.asarray(feats, dtype=np.float64)
        r = np.asarray(r, dtype=np.float64)
        if r.ndim == 1:
            r = np.broadcast_to(r, (len(feats), self.cfg.r_dim))
        with no_grad():
            return decoder_head(self.params, Tensor(feats), z, Tensor(r), self.cfg).data[:, 0]

    def predict(self, context: ObservationSet, targets: ObservationSet) -> np.ndarray:
        feats = self.target_features(targets.patches)
        emb = self.encode_context(context.patches, context.z, context.y) if len(context) else np.zeros((0, self.cfg.r_dim))
        if self.cfg.aggregator == "mean":
            r = self.aggregate(emb)
        else:
            r = self.aggregate(emb, feats, targets.z)
        return self.head(feats, targets.z, r)

    # accumulated collection scores candidates against the contexts so far
    def score(self, context: ObservationSet, candidates: ObservationSet) -> np.ndarray:
        return self.predict(context, candidates)


class DexNet:
    """Context-free baseline; any supplied context is ignored."""

    kind = "dexnet"

    def __init__(self, params: ModelParams, cfg: NetConfig | None = None):
        self.params = params
        self.cfg = cfg or NetConfig.from_dict(params.meta["net"])

    @classmethod
    def init(cls, cfg: NetConfig, seed: int = 0) -> "DexNet":
        return cls(init_params(cfg, seed, "dexnet"), cfg)

    def target_features(self, patches) -> np.ndarray:
        with no_grad():
            return trunk(self.params, "dec", prepare_patches(patches, self.cfg), self.cfg).data

    def head(self, feats: np.ndarray, z, r=None) -> np.ndarray:
        with no_grad():
            return decoder_head(self.params, Tensor(np.asarray(feats, dtype=np.float64)), z, None, self.cfg).data[:, 0]

    def predict(self, context: ObservationSet | None, targets: ObservationSet) -> np.ndarray:
        return self.head(self.target_features(targets.patches), targets.z)

    def score(self, context, candidates: ObservationSet) -> np.ndarray:
        return self.predict(None, candidates)


# training


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 2000
    tasks_per_batch: int = 16
    targets_per_task: int = 8
    k_interval: tuple[int, int] = (1, 15)
    lr: float = 1e-3
    augment: bool = False
    seed: int = 0
    log_every: int = 0

    def __post_init__(self):
        if self.steps < 0 or self.tasks_per_batch < 1 or self.targets_per_task < 1:
            raise ConfigError(f"invalid training sizes in {self}")
        k0, k1 = self.k_interval
        if not 0 <= k0 <= k1:
            raise ConfigError(f"invalid k_interval {self.k_interval}")
        object.__setattr__(self, "k_interval", (int(k0), int(k1)))


@dataclass
class TrainResult:
    params: ModelParams
    losses: list[float] = field(default_factory=list)
    seconds: float = 0.0


def _object_pools(obs: ObservationSet, keys: Sequence[str] | None, need: int) -> list[tuple[str, np.ndarray]]:
    groups = obs.by_object()
    keys = list(groups) if keys is None else [k for k in keys if k in groups]
    pools = [(k, groups[k]) for k in keys if len(groups[k]) >= need]
    if not pools:
        raise InsufficientDataError(f"no object has the {need} observations an episode needs")
    return pools


class PreparedInputs:
    """Network inputs for a whole observation set, computed once (float32 cache)."""

    def __init__(self, obs: ObservationSet, cfg: NetConfig, chunk: int = 4096):
        parts = [prepare_patches(obs.patches[i:i + chunk], cfg).astype(np.float32) for i in range(0, len(obs), chunk)]
        s = cfg.input_size
        self.x = np.concatenate(parts) if parts else np.zeros((0, s, s, 1), np.float32)

    def __getitem__(self, idx) -> np.ndarray:
        return self.x[idx].astype(np.float64)


def _sample_tasks(rng, n_pools: int, t: int) -> np.ndarray:
    return rng.choice(n_pools, size=t, replace=n_pools < t)


def _episode_batch(obs: ObservationSet, episodes: Sequence[Episode], inputs: PreparedInputs):
    ctx_idx = np.concatenate([e.context_idx for e in episodes]).astype(np.int64)
    tgt_idx = np.concatenate([e.target_idx for e in episodes]).astype(np.int64)
    ctx_y = np.concatenate([e.context_y for e in episodes]).astype(np.float64)
    tgt_y = np.concatenate([e.target_y for e in episodes]).astype(np.float64)
    return (inputs[ctx_idx], obs.z[ctx_idx], ctx_y, [e.k for e in episodes],
            inputs[tgt_idx], obs.z[tgt_idx], tgt_y, [e.m for e in episodes])


def train_condex(obs: ObservationSet, net: NetConfig, train: TrainConfig = TrainConfig(),
                 keys: Sequence[str] | None = None, inputs: PreparedInputs | None = None,
                 init: ModelParams | None = None) -> TrainResult:
    """Episodic training: T episodes per step, mean BCE over all targets, Adam."""
    pools = _object_pools(obs, keys, train.k_interval[1] + train.targets_per_task)
    inputs = PreparedInputs(obs, net) if inputs is None else inputs
    params = init_params(net, train.seed, "condex") if init is None else init.copy()
    params.meta.update({"kind": "condex", "net": net.to_dict(), "train": _train_meta(train)})
    opt = Adam(params.tensors, lr=train.lr)
    rng = np.random.default_rng(train.seed)
    losses = []
    t0 = time.perf_counter()
    for step in range(train.steps):
        chosen = _sample_tasks(rng, len(pools), train.tasks_per_batch)
        episodes = []
        for i in chosen:
            key, idx = pools[int(i)]
            ep = make_episode(obs, train.k_interval, train.targets_per_task, rng, key, idx)
            episodes.append(task_augment(ep, rng, train.augment))
        cx, cz, cy, cc, tx, tz, ty, tc = _episode_batch(obs, episodes, inputs)
        pred = condex_forward(params, net, cx, cz, cy, cc, tx, tz, tc)
        loss = ops.binary_cross_entropy(pred, ty)
        opt.zero_grad()
        loss.backward()
        opt.step()
        losses.append(loss.item())
        if train.log_every and (step + 1) % train.log_every == 0:
            print(f"step {step + 1} loss {np.mean(losses[-train.log_every:]):.4f}", flush=True)
    return TrainResult(params, losses, time.perf_counter() - t0)


def train_dexnet(obs: ObservationSet, net: NetConfig, train: TrainConfig = TrainConfig(),
                 keys: Sequence[str] | None = None, inputs: PreparedInputs | None = None) -> TrainResult:
    """Plain supervised training on single observations, T*M per batch."""
    pools = _object_pools(obs, keys, 1)
    idx_all = np.concatenate([idx for _, idx in pools])
    inputs = PreparedInputs(obs, net) if inputs is None else inputs
    params = init_params(net, train.seed, "dexnet")
    params.meta["train"] = _train_meta(train)
    opt = Adam(params.tensors, lr=train.lr)
    rng = np.random.default_rng(train.seed)
    batch = train.tasks_per_batch * train.targets_per_task
    losses = []
    t0 = time.perf_counter()
    for step in range(train.steps):
        idx = idx_all[rng.integers(0, len(idx_all), size=batch)]
        pred = dexnet_forward(params, net, inputs[idx], obs.z[idx])
        loss = ops.binary_cross_entropy(pred, obs.y[idx].astype(np.float64))
        opt.zero_grad()
        loss.backward()
        opt.step()
        losses.append(loss.item())
        if train.log_every and (step + 1) % train.log_every == 0:
            print(f"step {step + 1} loss {np.mean(losses[-train.log_every:]):.4f}", flush=True)
    return TrainResult(params, losses, time.perf_counter() - t0)


def _train_meta(train: TrainConfig) -> dict:
    d = asdict(train)
    d["k_interval"] = list(train.k_interval)
    return d


# IGML: first-order MAML on the DexNet architecture


@dataclass(frozen=True)
class IGMLConfig:
    adapt_steps: int = 5
    inner_lr: float = 0.05

    def __post_init__(self):
        if self.adapt_steps < 0 or not self.inner_lr > 0:
            raise ConfigError(f"invalid IGML settings {self}")


def _loss_and_grads(params: ModelParams, cfg: NetConfig, x: np.ndarray, z, y) -> tuple[float, dict[str, np.ndarray]]:
    params.zero_grad()
    loss = ops.binary_cross_entropy(dexnet_forward(params, cfg, x, z), np.asarray(y, dtype=np.float64))
    loss.backward()
    return loss.item(), {k: (t.grad if t.grad is not None else np.zeros_like(t.data)) for k, t in params.items()}


def adapt(params: ModelParams, cfg: NetConfig, x: np.ndarray, z, y, igml: IGMLConfig) -> tuple[ModelParams, list[float]]:
    """Inner-loop SGD on the context; returns adapted copy and per-step context losses."""
    fast = params.copy()
    losses = []
    if len(y) == 0:
        return fast, losses
    for _ in range(igml.adapt_steps):
        loss, grads = _loss_and_grads(fast, cfg, x, z, y)
        losses.append(loss)
        for k, t in fast.items():
            t.data = t.data - igml.inner_lr * grads[k]
    fast.zero_grad()
    return fast, losses


def train_igml(obs: ObservationSet, net: NetConfig, train: TrainConfig = TrainConfig(),
               igml: IGMLConfig = IGMLConfig(), keys: Sequence[str] | None = None,
               inputs: PreparedInputs | None = None) -> TrainResult:
    """First-order MAML: the meta-gradient is the target gradient at the adapted weights."""
    pools = _object_pools(obs, keys, train.k_interval[1] + train.targets_per_task)
    inputs = PreparedInputs(obs, net) if inputs is None else inputs
    params = init_params(net, train.seed, "dexnet")
    params.meta.update({"kind": "igml", "train": _train_meta(train), "igml": asdict(igml)})
    opt = Adam(params.tensors, lr=train.lr)
    rng = np.random.default_rng(train.seed)
    losses = []
    t0 = time.perf_counter()
    for step in range(train.steps):
        meta = {k: np.zeros_like(t.data) for k, t in params.items()}
        total = 0.0
        chosen = _sample_tasks(rng, len(pools), train.tasks_per_batch)
        for i in chosen:
            key, idx = pools[int(i)]
            ep = task_augment(make_episode(obs, train.k_interval, train.targets_per_task, rng, key, idx), rng,
                              train.augment)
            fast, _ = adapt(params, net, inputs[ep.context_idx], obs.z[ep.context_idx], ep.context_y, igml)
            loss, grads = _loss_and_grads(fast, net, inputs[ep.target_idx], obs.z[ep.target_idx], ep.target_y)
            total += loss
            for k in meta:
                meta[k] += grads[k] / len(chosen)
        opt.step(meta)
        losses.append(total / len(chosen))
        if train.log_every and (step + 1) % train.log_every == 0:
            print(f"step {step + 1} loss {np.mean(losses[-train.log_every:]):.4f}", flush=True)
    return TrainResult(params, losses, time.perf_counter() - t0)


class IGML:
    kind = "igml"

    def __init__(self, params: ModelParams, cfg: NetConfig | None = None, igml: IGMLConfig | None = None):
        self.params = params
        self.cfg = cfg or NetConfig.from_dict(params.meta["net"])
        self.igml = igml or IGMLConfig(**params.meta.get("igml", {}))

    def predict(self, context: ObservationSet | None, targets: ObservationSet) -> np.ndarray:
        params = self.params
        if context is not None and len(context) and self.igml.adapt_steps:
            params, _ = adapt(self.params, self.cfg, prepare_patches(context.patches, self.cfg), context.z,
                              context.y, self.igml)
        with no_grad():
            return dexnet_forward(params, self.cfg, prepare_patches(targets.patches, self.cfg), targets.z).data[:, 0]

    def score(self, context, candidates: ObservationSet) -> np.ndarray:
        return self.predict(context, candidates)


def load_model(params: ModelParams):
    """Wrap a checkpoint in the model class its metadata names."""
    kind = params.meta.get("kind", "condex")
    return {"condex": ConDex, "dexnet": DexNet, "igml": IGML}[kind](params)
