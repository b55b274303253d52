"""Learned score networks: an MLP baseline and a node-sequence transformer.

Both architectures implement the same per-slot noise-prediction contract as
the analytic factors: `eval(values, t, sigma)` returns one epsilon array per
member slot. Networks condition on t through a fixed 64-dim sinusoidal
embedding; final decoders are zero-initialized so epsilon is identically 0 at
init. `train_skill` runs denoising score matching with an adaptive-moment
optimizer and optionally trains marginal heads (independent smaller nets on
column subsets) used for shared-node compensation.

Checkpoints are a versioned binary blob: magic, version, JSON header
(architecture, member dims, tensor manifest, normalization stats), then the
flat float64 parameter arrays in manifest order.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .schedule import NoiseSchedule
from .scores import ContractError, ScoreModel

__all__ = [
    "ArchConfig",
    "TrainConfig",
    "NetScoreModel",
    "net_forward",
    "train_skill",
    "save_checkpoint",
    "load_checkpoint",
    "time_embedding",
]

_MAGIC = b"FPCK"
_VERSION = 1
TIME_DIM = 64


@dataclass(frozen=True)
class ArchConfig:
    kind: str = "transformer"  # "mlp" | "transformer"
    widths: tuple[int, ...] = (256, 256)  # mlp hidden widths
    hidden_dim: int = 128
    num_blocks: int = 2
    num_heads: int = 2
    mlp_ratio: int = 2
    dropout_p: float = 0.1

    def __post_init__(self):
        if self.kind not in ("mlp", "transformer"):
            raise ValueError(f"unknown architecture kind {self.kind!r}")
        if self.hidden_dim % self.num_heads:
            raise ValueError("hidden_dim must be divisible by num_heads")


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 64
    learning_rate: float = 1e-3
    steps: int = 20_000
    seed: int = 0
    eval_every: int = 500

    def __post_init__(self):
        if min(self.batch_size, self.steps, self.eval_every) <= 0:
            raise ValueError("batch_size, steps, and eval_every must be positive")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")


def time_embedding(t, dim: int = TIME_DIM) -> np.ndarray:
    """Fixed sinusoidal features of t in [0, 1]; shape (..., dim)."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    half = dim // 2
    freqs = np.exp(np.linspace(0.0, np.log(1000.0), half))
    phase = t[..., None] * freqs
    return np.concatenate([np.sin(phase), np.cos(phase)], axis=-1)


def _affine_params(rng, d_in, d_out, zero=False):
    if zero:
        W = np.zeros((d_in, d_out))
    else:
        W = rng.normal(size=(d_in, d_out)) / np.sqrt(d_in)
    return Tensor(W, requires_grad=True), Tensor(np.zeros(d_out), requires_grad=True)


def _affine(x, W, b):
    return ad.add(ad.matmul(x, W), b)


def init_params(arch: ArchConfig, member_dims: tuple[int, ...],
                rng: np.random.Generator) -> dict[str, Tensor]:
    """Parameter dict with a deterministic key order for serialization."""
    p: dict[str, Tensor] = {}
    if arch.kind == "mlp":
        d_in = sum(member_dims) + TIME_DIM
        prev = d_in
        for i, w in enumerate(arch.widths):
            p[f"W{i}"], p[f"b{i}"] = _affine_params(rng, prev, w)
            prev = w
        p["Wout"], p["bout"] = _affine_params(rng, prev, sum(member_dims), zero=True)
        return p

    H = arch.hidden_dim
    for i, d in enumerate(member_dims):
        p[f"enc{i}_W"], p[f"enc{i}_b"] = _affine_params(rng, d, H)
    p["pos"] = Tensor(0.02 * rng.normal(size=(len(member_dims), H)),
                      requires_grad=True)
    p["time_W"], p["time_b"] = _affine_params(rng, TIME_DIM, H)
    for k in range(arch.num_blocks):
        p[f"blk{k}_ln1_g"] = Tensor(np.ones(H), requires_grad=True)
        p[f"blk{k}_ln1_b"] = Tensor(np.zeros(H), requires_grad=True)
        p[f"blk{k}_q_W"], p[f"blk{k}_q_b"] = _affine_params(rng, H, H)
        p[f"blk{k}_k_W"], p[f"blk{k}_k_b"] = _affine_params(rng, H, H)
        p[f"blk{k}_v_W"], p[f"blk{k}_v_b"] = _affine_params(rng, H, H)
        p[f"blk{k}_o_W"], p[f"blk{k}_o_b"] = _affine_params(rng, H, H)
        p[f"blk{k}_ln2_g"] = Tensor(np.ones(H), requires_grad=True)
        p[f"blk{k}_ln2_b"] = Tensor(np.zeros(H), requires_grad=True)
        p[f"blk{k}_m1_W"], p[f"blk{k}_m1_b"] = _affine_params(rng, H, arch.mlp_ratio * H)
        p[f"blk{k}_m2_W"], p[f"blk{k}_m2_b"] = _affine_params(rng, arch.mlp_ratio * H, H)
    p["lnf_g"] = Tensor(np.ones(H), requires_grad=True)
    p["lnf_b"] = Tensor(np.zeros(H), requires_grad=True)
    for i, d in enumerate(member_dims):
        p[f"dec{i}_W"], p[f"dec{i}_b"] = _affine_params(rng, H, d, zero=True)
    return p


def net_forward(arch: ArchConfig, params: dict[str, Tensor],
                member_dims: tuple[int, ...], values: list[Tensor],
                t, rng: np.random.Generator | None = None) -> list[Tensor]:
    """Per-slot epsilon prediction; train mode iff `rng` is given (dropout)."""
    if len(values) != len(member_dims):
        raise ContractError(
            f"expected {len(member_dims)} slots, got {len(values)}"
        )
    B = values[0].shape[0]
    temb = time_embedding(np.broadcast_to(np.asarray(t, float), (B,)))

    if arch.kind == "mlp":
        x = ad.concat(list(values) + [Tensor(temb)], axis=-1)
        for i in range(len(arch.widths)):
            x = ad.silu(_affine(x, params[f"W{i}"], params[f"b{i}"]))
            x = ad.dropout(x, arch.dropout_p, rng)
        out = _affine(x, params["Wout"], params["bout"])
        return ad.split(out, list(member_dims), axis=-1)

    H = arch.hidden_dim
    tokens = []
    tcond = _affine(Tensor(temb), params["time_W"], params["time_b"])
    pos = ad.split(params["pos"], [1] * len(member_dims), axis=0)
    for i, v in enumerate(values):
        tok = _affine(v, params[f"enc{i}_W"], params[f"enc{i}_b"])
        tok = ad.add(tok, ad.reshape(pos[i], (H,)))
        tok = ad.add(tok, tcond)
        tokens.append(ad.reshape(tok, (B, 1, H)))
    x = ad.concat(tokens, axis=1)
    for k in range(arch.num_blocks):
        h = ad.layer_norm(x, params[f"blk{k}_ln1_g"], params[f"blk{k}_ln1_b"])
        q = _affine(h, params[f"blk{k}_q_W"], params[f"blk{k}_q_b"])
        kk = _affine(h, params[f"blk{k}_k_W"], params[f"blk{k}_k_b"])
        v = _affine(h, params[f"blk{k}_v_W"], params[f"blk{k}_v_b"])
        a = ad.attention(q, kk, v, arch.num_heads, rng, arch.dropout_p)
        a = _affine(a, params[f"blk{k}_o_W"], params[f"blk{k}_o_b"])
        x = ad.add(x, ad.dropout(a, arch.dropout_p, rng))
        h = ad.layer_norm(x, params[f"blk{k}_ln2_g"], params[f"blk{k}_ln2_b"])
        m = ad.silu(_affine(h, params[f"blk{k}_m1_W"], params[f"blk{k}_m1_b"]))
        m = _affine(m, params[f"blk{k}_m2_W"], params[f"blk{k}_m2_b"])
        x = ad.add(x, ad.dropout(m, arch.dropout_p, rng))
    x = ad.layer_norm(x, params["lnf_g"], params["lnf_b"])
    toks = ad.split(x, [1] * len(member_dims), axis=1)
    out = []
    for i, d in enumerate(member_dims):
        tok = ad.reshape(toks[i], (B, H))
        out.append(_affine(tok, params[f"dec{i}_W"], params[f"dec{i}_b"]))
    return out


class NetScoreModel(ScoreModel):
    """A trained network behind the analytic-factor ScoreModel contract.

    Inference is deterministic (dropout off). Marginal heads, when present,
    are independent NetScoreModels keyed by slot-index subset.
    """

    def __init__(self, arch: ArchConfig, params: dict[str, Tensor],
                 member_dims: tuple[int, ...],
                 marginal_heads: dict[tuple[int, ...], "NetScoreModel"] | None = None):
        self.arch = arch
        self.params = params
        self.member_dims = tuple(member_dims)
        self.marginal_heads = dict(marginal_heads or {})

    def eval(self, values, t, sigma):
        values = [np.asarray(v, dtype=float) for v in values]
        self.check_slots(values)
        lead = values[0].shape[:-1]
        flat = [v.reshape(-1, v.shape[-1]) for v in values]
        B = flat[0].shape[0]
        t_arr = np.broadcast_to(np.asarray(t, float), lead).reshape(B) \
            if np.ndim(t) else np.full(B, float(t))
        out = net_forward(self.arch, self.params, self.member_dims,
                          [Tensor(v) for v in flat], t_arr, rng=None)
        return [o.data.reshape(*lead, d) for o, d in zip(out, self.member_dims)]

    def marginal_eval(self, subset, values, t, sigma):
        head = self.marginal_heads.get(tuple(subset))
        if head is None:
            raise NotImplementedError(
                f"no marginal head trained for slot subset {tuple(subset)}"
            )
        return head.eval(values, t, sigma)

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())


def _extract_slots(dataset) -> list[np.ndarray]:
    if hasattr(dataset, "slot_values"):
        return [np.asarray(c, dtype=float) for c in dataset.slot_values()]
    return [np.asarray(c, dtype=float) for c in dataset]


def train_skill(
    dataset,
    member_dims: tuple[int, ...],
    arch: ArchConfig | None = None,
    cfg: TrainConfig | None = None,
    schedule: NoiseSchedule | None = None,
    marginal_subsets: tuple[tuple[int, ...], ...] = (),
) -> tuple[NetScoreModel, list[tuple[int, float]]]:
    """Denoising score matching on per-slot transition columns.

    Returns the trained model (with one marginal head per requested subset,
    each trained by the same recipe on the projected columns) and the loss
    trace [(step, running-mean loss)]. Raises on empty data or NaN loss.
    """
    arch = arch or ArchConfig()
    cfg = cfg or TrainConfig()
    schedule = schedule or NoiseSchedule()
    slots = _extract_slots(dataset)
    if not slots or slots[0].shape[0] == 0:
        raise ValueError("cannot train on an empty dataset")
    if tuple(s.shape[-1] for s in slots) != tuple(member_dims):
        raise ContractError(
            f"dataset column dims {tuple(s.shape[-1] for s in slots)} "
            f"!= member_dims {tuple(member_dims)}"
        )
    n = slots[0].shape[0]
    rng = np.random.default_rng(cfg.seed)
    params = init_params(arch, tuple(member_dims), rng)
    opt = ad.Adam(list(params.values()), lr=cfg.learning_rate)

    trace: list[tuple[int, float]] = []
    running = 0.0
    for step in range(1, cfg.steps + 1):
        idx = rng.integers(0, n, size=cfg.batch_size)
        t = rng.uniform(0.0, 1.0, size=cfg.batch_size)
        sigma = schedule.sigma_min * np.exp(schedule.log_ratio * t)
        noised, targets = [], []
        for col in slots:
            x0 = col[idx]
            eps = rng.standard_normal(x0.shape)
            noised.append(Tensor(x0 + sigma[:, None] * eps))
            targets.append(Tensor(eps))
        pred = net_forward(arch, params, tuple(member_dims), noised, t, rng=rng)
        loss = ad.scale(
            ad.tsum(ad.square(ad.sub(ad.concat(pred), ad.concat(targets)))),
            1.0 / cfg.batch_size,
        )
        val = loss.data.item()
        if not np.isfinite(val):
            raise RuntimeError(
                f"training diverged at step {step}: loss={val!r} "
                f"(lr={cfg.learning_rate}, batch={cfg.batch_size})"
            )
        opt.zero_grad()
        loss.backward()
        opt.step()
        running += val
        if step % cfg.eval_every == 0 or step == cfg.steps:
            trace.append((step, running / min(cfg.eval_every, step)))
            running = 0.0

    heads = {}
    for subset in marginal_subsets:
        sub_dims = tuple(member_dims[i] for i in subset)
        sub_cols = [slots[i] for i in subset]
        head_arch = ArchConfig(kind="mlp", widths=(128, 128),
                               dropout_p=arch.dropout_p)
        head, _ = train_skill(sub_cols, sub_dims, head_arch, cfg, schedule)
        heads[tuple(subset)] = head
    return NetScoreModel(arch, params, tuple(member_dims), heads), trace


# ------------------------------------------------------------- serialization


def _header(model: NetScoreModel, stats) -> dict:
    return {
        "version": _VERSION,
        "arch": asdict(model.arch),
        "member_dims": list(model.member_dims),
        "tensors": [
            {"name": k, "shape": list(v.data.shape)} for k, v in model.params.items()
        ],
        "normalization": stats,
        "marginals": [list(s) for s in model.marginal_heads],
    }


def save_checkpoint(path, model: NetScoreModel, normalization=None) -> None:
    """Write model (and marginal heads, recursively) to a single binary file."""
    blobs = [_encode(model, normalization)]
    for subset in sorted(model.marginal_heads):
        blobs.append(_encode(model.marginal_heads[subset], None))
    with open(path, "wb") as fh:
        fh.write(_MAGIC + struct.pack("<II", _VERSION, len(blobs)))
        for blob in blobs:
            fh.write(struct.pack("<Q", len(blob)))
            fh.write(blob)


def _encode(model: NetScoreModel, stats) -> bytes:
    head = json.dumps(_header(model, stats)).encode()
    body = b"".join(np.ascontiguousarray(v.data).tobytes()
                    for v in model.params.values())
    return struct.pack("<Q", len(head)) + head + body


def _decode(blob: bytes) -> tuple[NetScoreModel, dict | None]:
    (hlen,) = struct.unpack_from("<Q", blob, 0)
    head = json.loads(blob[8:8 + hlen].decode())
    if head["version"] != _VERSION:
        raise ValueError(f"unsupported checkpoint version {head['version']}")
    arch_d = head["arch"]
    arch_d["widths"] = tuple(arch_d["widths"])
    arch = ArchConfig(**arch_d)
    params: dict[str, Tensor] = {}
    off = 8 + hlen
    for entry in head["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(blob, dtype=np.float64, count=count, offset=off)
        params[entry["name"]] = Tensor(arr.reshape(shape).copy(), requires_grad=True)
        off += 8 * count
    model = NetScoreModel(arch, params, tuple(head["member_dims"]))
    return model, head


def load_checkpoint(path) -> tuple[NetScoreModel, dict | None]:
    """Read a checkpoint; returns (model, normalization stats or None)."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != _MAGIC:
        raise ValueError("not a model checkpoint (bad magic)")
    version, n_blobs = struct.unpack_from("<II", data, 4)
    if version != _VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    off = 12
    blobs = []
    for _ in range(n_blobs):
        (blen,) = struct.unpack_from("<Q", data, off)
        off += 8
        blobs.append(data[off:off + blen])
        off += blen
    model, head = _decode(blobs[0])
    subsets = [tuple(s) for s in head["marginals"]]
    for subset, blob in zip(sorted(subsets), blobs[1:]):
        model.marginal_heads[subset], _ = _decode(blob)
    return model, head.get("normalization")
