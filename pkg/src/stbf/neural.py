"""Minimal feed-forward neural stack built on numpy: affine/ReLU/batchnorm
layers, inverted dropout, linear bottleneck projections, additive skip
junctions, per-speaker LHUC scaling, softmax heads, cross-entropy multi-task
loss, momentum SGD, and a central-difference gradient checker.

Parameters live in a flat dict keyed by path ("trunk.3.W", "head.intel.b",
"trunk.5.lhuc.SPK01"), which keeps checkpointing, freezing, and gradient
checking uniform across layer kinds.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import stbf_io
from .errors import (
    DataError,
    FormatError,
    NumericError,
    ParameterError,
    ShapeError,
)

LAYER_KINDS = (
    "Affine",
    "ReLU",
    "BatchNorm",
    "Dropout",
    "LinearBottleneckProjection",
    "SkipJunction",
    "Softmax",
    "LHUCScale",
)

_BN_MOMENTUM = 0.9
_BN_EPS = 1e-5
LOG_FLOOR = 1e-12


@dataclass
class LayerSpec:
    kind: str
    in_dim: int
    out_dim: int
    rate: float = 0.0
    source: int = -1

    def __post_init__(self) -> None:
        if self.kind not in LAYER_KINDS:
            raise ParameterError(f"unknown layer kind {self.kind!r}")
        if self.in_dim < 1 or self.out_dim < 1:
            raise ParameterError(f"{self.kind}: dims must be >= 1")
        if self.kind == "LinearBottleneckProjection" and self.out_dim >= self.in_dim:
            raise ParameterError(
                f"bottleneck width {self.out_dim} must be < input dim {self.in_dim}"
            )
        if self.kind == "Dropout" and not 0.0 <= self.rate < 1.0:
            raise ParameterError(f"dropout rate must be in [0, 1), got {self.rate}")
        if self.kind not in ("Affine", "LinearBottleneckProjection"):
            if self.in_dim != self.out_dim:
                raise ParameterError(f"{self.kind}: in_dim must equal out_dim")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "in_dim": self.in_dim,
            "out_dim": self.out_dim,
            "rate": self.rate,
            "source": self.source,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LayerSpec":
        return cls(**d)


@dataclass
class MtlBatch:
    """One minibatch with one integer label vector per head.

    Head weights must be non-negative and sum to 1.
    """

    inputs: np.ndarray
    labels: dict[str, np.ndarray]
    weights: dict[str, float]
    speakers: list[str] | None = None

    def __post_init__(self) -> None:
        if any(w < 0 for w in self.weights.values()):
            raise ParameterError("task weights must be non-negative")
        total = sum(self.weights.values())
        if abs(total - 1.0) > 1e-9:
            raise ParameterError(f"task weights must sum to 1, got {total}")


def softmax(x: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max subtraction."""
    z = x - np.max(x, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=-1, keepdims=True)


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def lhuc_scale(h: np.ndarray, r: np.ndarray) -> np.ndarray:
    """Scale hidden activations by the LHUC amplitude a(r) = 2*sigmoid(r)."""
    return h * (2.0 * sigmoid(r))


class Network:
    """Feed-forward trunk plus one affine+softmax head per task."""

    def __init__(
        self,
        trunk: list[LayerSpec],
        heads: list[tuple[str, int]],
        seed: int = 0,
        dtype=np.float64,
    ):
        if not trunk:
            raise ParameterError("trunk must have at least one layer")
        if not heads:
            raise ParameterError("at least one head is required")
        for i in range(1, len(trunk)):
            if trunk[i].in_dim != trunk[i - 1].out_dim:
                raise ParameterError(
                    f"trunk layer {i} in_dim {trunk[i].in_dim} does not match "
                    f"previous out_dim {trunk[i - 1].out_dim}"
                )
        for i, spec in enumerate(trunk):
            if spec.kind == "SkipJunction":
                if not 0 <= spec.source < i:
                    raise ParameterError(
                        f"skip at layer {i} needs a source index before it"
                    )
                if trunk[spec.source].out_dim != spec.in_dim:
                    raise ParameterError(
                        f"skip at layer {i}: source dim "
                        f"{trunk[spec.source].out_dim} != {spec.in_dim}"
                    )
        self.trunk = list(trunk)
        self.heads = [(str(n), int(k)) for n, k in heads]
        self.seed = seed
        self.dtype = np.dtype(dtype)
        self.params: dict[str, np.ndarray] = {}
        self.stats: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.velocity: dict[str, np.ndarray] = {}
        self._tape = None
        rng = np.random.default_rng(seed)
        for i, spec in enumerate(self.trunk):
            if spec.kind in ("Affine", "LinearBottleneckProjection"):
                scale = 1.0 / np.sqrt(spec.in_dim)
                self.params[f"trunk.{i}.W"] = rng.uniform(
                    -scale, scale, (spec.in_dim, spec.out_dim)
                ).astype(self.dtype)
                if spec.kind == "Affine":
                    self.params[f"trunk.{i}.b"] = np.zeros(spec.out_dim, self.dtype)
            elif spec.kind == "BatchNorm":
                self.params[f"trunk.{i}.gamma"] = np.ones(spec.out_dim, self.dtype)
                self.params[f"trunk.{i}.beta"] = np.zeros(spec.out_dim, self.dtype)
                self.stats[f"trunk.{i}.running_mean"] = np.zeros(
                    spec.out_dim, self.dtype
                )
                self.stats[f"trunk.{i}.running_var"] = np.ones(
                    spec.out_dim, self.dtype
                )
        trunk_out = self.trunk[-1].out_dim
        for name, n_classes in self.heads:
            scale = 1.0 / np.sqrt(trunk_out)
            self.params[f"head.{name}.W"] = rng.uniform(
                -scale, scale, (trunk_out, n_classes)
            ).astype(self.dtype)
            self.params[f"head.{name}.b"] = np.zeros(n_classes, self.dtype)

    # -- forward ---------------------------------------------------------

    @property
    def in_dim(self) -> int:
        return self.trunk[0].in_dim

    @property
    def bottleneck_dim(self) -> int:
        return self.trunk[-1].out_dim

    def has_lhuc(self) -> bool:
        return any(s.kind == "LHUCScale" for s in self.trunk)

    def _lhuc_vector(self, layer: int, speaker: str, width: int) -> np.ndarray:
        path = f"trunk.{layer}.lhuc.{speaker}"
        if path not in self.params:
            self.params[path] = np.zeros(width, self.dtype)
        return self.params[path]

    def forward(
        self,
        x: np.ndarray,
        train: bool = False,
        speakers: list[str] | None = None,
        rng: np.random.Generator | None = None,
        update_stats: bool = True,
    ) -> dict[str, np.ndarray]:
        """Run the network, returning per-head probability matrices.

        Train mode uses batch statistics for batchnorm (updating running
        stats unless update_stats is False) and samples dropout masks from
        ``rng``; eval mode uses running statistics and identity dropout.
        A tape of activations is kept for a following backward() call.
        """
        x = np.asarray(x, dtype=self.dtype)
        if x.ndim != 2:
            raise ShapeError(f"inputs must be 2-D (batch, dim), got {x.shape}")
        if x.shape[1] != self.in_dim:
            raise ShapeError(
                f"input dim {x.shape[1]} does not match network dim {self.in_dim}"
            )
        # skip junctions read earlier activations while the list is still
        # being built, so the loop appends into the shared attribute
        self._fwd_outputs = []
        outputs = self._fwd_outputs
        caches: list = []
        h = x
        for i, spec in enumerate(self.trunk):
            h, cache = self._layer_forward(
                i, spec, h, train, speakers, rng, update_stats
            )
            outputs.append(h)
            caches.append(cache)
        if not np.all(np.isfinite(h)):
            raise NumericError("non-finite activations in trunk output")
        probs: dict[str, np.ndarray] = {}
        head_caches: dict[str, np.ndarray] = {}
        for name, _ in self.heads:
            logits = h @ self.params[f"head.{name}.W"] + self.params[f"head.{name}.b"]
            p = softmax(logits)
            if not np.all(np.isfinite(p)):
                raise NumericError(f"non-finite probabilities in head {name}")
            probs[name] = p
            head_caches[name] = p
        self._tape = (x, outputs, caches, h, head_caches, train)
        return probs

    def trunk_output(self, x: np.ndarray, speakers: list[str] | None = None) -> np.ndarray:
        """Eval-mode activation of the last trunk layer (the bottleneck)."""
        self.forward(x, train=False, speakers=speakers)
        return self._tape[3]

    def _layer_forward(self, i, spec, x, train, speakers, rng, update_stats):
        kind = spec.kind
        if kind == "Affine":
            w = self.params[f"trunk.{i}.W"]
            return x @ w + self.params[f"trunk.{i}.b"], x
        if kind == "LinearBottleneckProjection":
            return x @ self.params[f"trunk.{i}.W"], x
        if kind == "ReLU":
            return np.maximum(x, 0.0), x
        if kind == "BatchNorm":
            gamma = self.params[f"trunk.{i}.gamma"]
            beta = self.params[f"trunk.{i}.beta"]
            if train:
                mean = x.mean(axis=0)
                var = x.var(axis=0)
                if update_stats:
                    rm = self.stats[f"trunk.{i}.running_mean"]
                    rv = self.stats[f"trunk.{i}.running_var"]
                    rm[...] = _BN_MOMENTUM * rm + (1 - _BN_MOMENTUM) * mean
                    rv[...] = _BN_MOMENTUM * rv + (1 - _BN_MOMENTUM) * var
            else:
                mean = self.stats[f"trunk.{i}.running_mean"]
                var = self.stats[f"trunk.{i}.running_var"]
            inv_std = 1.0 / np.sqrt(var + _BN_EPS)
            xhat = (x - mean) * inv_std
            return gamma * xhat + beta, (xhat, inv_std, train)
        if kind == "Dropout":
            if not train or spec.rate == 0.0:
                return x, None
            if rng is None:
                raise ParameterError("training forward with dropout requires rng")
            mask = (rng.random(x.shape) >= spec.rate) / (1.0 - spec.rate)
            mask = mask.astype(self.dtype)
            return x * mask, mask
        if kind == "SkipJunction":
            # outputs list is being built; source < i is already appended
            return x + self._tape_source(i, spec.source), None
        if kind == "Softmax":
            y = softmax(x)
            return y, y
        if kind == "LHUCScale":
            if speakers is None:
                raise DataError("LHUC layer requires per-row speaker ids")
            if len(speakers) != x.shape[0]:
                raise ShapeError("speakers length must equal batch size")
            groups: dict[str, list[int]] = {}
            for row, spk in enumerate(speakers):
                groups.setdefault(spk, []).append(row)
            amp = np.empty_like(x)
            for spk, rows in groups.items():
                r = self._lhuc_vector(i, spk, spec.out_dim)
                amp[rows] = 2.0 * sigmoid(r)
            return x * amp, (x, amp, groups)
        raise ParameterError(f"unknown layer kind {kind!r}")

    def _tape_source(self, i: int, source: int) -> np.ndarray:
        # during forward the partial outputs are stashed on _fwd_outputs
        return self._fwd_outputs[source]

    # -- backward ----------------------------------------------------------

    def backward(self, dprobs: dict[str, np.ndarray]) -> np.ndarray:
        """Backpropagate per-head probability gradients from the last
        forward call; fills self.grads and returns the input gradient."""
        if self._tape is None:
            raise ParameterError("backward called before forward")
        x, outputs, caches, trunk_out, head_caches, train = self._tape
        self.grads = {}
        g_trunk = np.zeros_like(trunk_out)
        for name, _ in self.heads:
            p = head_caches[name]
            gp = dprobs.get(name)
            if gp is None:
                continue
            # softmax jacobian applied to the probability gradient
            glogits = p * (gp - np.sum(gp * p, axis=1, keepdims=True))
            self.grads[f"head.{name}.W"] = trunk_out.T @ glogits
            self.grads[f"head.{name}.b"] = glogits.sum(axis=0)
            g_trunk += glogits @ self.params[f"head.{name}.W"].T
        pending: dict[int, np.ndarray] = {}
        g = g_trunk
        for i in range(len(self.trunk) - 1, -1, -1):
            if i in pending:
                g = g + pending.pop(i)
            g = self._layer_backward(i, self.trunk[i], g, caches[i], outputs, x, pending)
        return g

    def _layer_backward(self, i, spec, g, cache, outputs, x0, pending):
        kind = spec.kind
        below = outputs[i - 1] if i > 0 else x0
        if kind == "Affine":
            self.grads[f"trunk.{i}.W"] = cache.T @ g
            self.grads[f"trunk.{i}.b"] = g.sum(axis=0)
            return g @ self.params[f"trunk.{i}.W"].T
        if kind == "LinearBottleneckProjection":
            self.grads[f"trunk.{i}.W"] = cache.T @ g
            return g @ self.params[f"trunk.{i}.W"].T
        if kind == "ReLU":
            return g * (cache > 0.0)
        if kind == "BatchNorm":
            xhat, inv_std, was_train = cache
            gamma = self.params[f"trunk.{i}.gamma"]
            self.grads[f"trunk.{i}.gamma"] = np.sum(g * xhat, axis=0)
            self.grads[f"trunk.{i}.beta"] = g.sum(axis=0)
            if not was_train:
                return g * gamma * inv_std
            b = g.shape[0]
            return (gamma * inv_std / b) * (
                b * g - g.sum(axis=0) - xhat * np.sum(g * xhat, axis=0)
            )
        if kind == "Dropout":
            return g if cache is None else g * cache
        if kind == "SkipJunction":
            pending[spec.source] = pending.get(spec.source, 0.0) + g
            return g
        if kind == "Softmax":
            y = cache
            return y * (g - np.sum(g * y, axis=1, keepdims=True))
        if kind == "LHUCScale":
            xin, amp, groups = cache
            dadr = amp * (1.0 - amp / 2.0)
            gr_all = g * xin * dadr
            for spk, rows in groups.items():
                path = f"trunk.{i}.lhuc.{spk}"
                contrib = gr_all[rows].sum(axis=0)
                if path in self.grads:
                    self.grads[path] = self.grads[path] + contrib
                else:
                    self.grads[path] = contrib
            return g * amp
        raise ParameterError(f"unknown layer kind {kind!r}")

    # -- parameter management ---------------------------------------------

    def snapshot(self) -> dict[str, np.ndarray]:
        snap = {p: a.copy() for p, a in self.params.items()}
        snap.update({p: a.copy() for p, a in self.stats.items()})
        return snap

    def restore(self, snap: dict[str, np.ndarray]) -> None:
        for p in list(self.params):
            if p in snap:
                self.params[p][...] = snap[p]
            else:
                del self.params[p]
        for p, a in snap.items():
            if p.startswith("trunk.") and ".lhuc." in p and p not in self.params:
                self.params[p] = a.copy()
        for p in self.stats:
            self.stats[p][...] = snap[p]


# -- loss -------------------------------------------------------------------


def mtl_loss(
    probs: dict[str, np.ndarray], batch: MtlBatch
) -> tuple[float, dict[str, np.ndarray]]:
    """Weighted cross-entropy over heads.

    Returns the scalar loss and the gradient w.r.t. each head's
    probabilities (feed to Network.backward). Probabilities are floored at
    1e-12 inside the log.
    """
    loss = 0.0
    dprobs: dict[str, np.ndarray] = {}
    for name, w in batch.weights.items():
        if name not in probs:
            raise ParameterError(f"no head named {name!r} in forward output")
        p = probs[name]
        labels = np.asarray(batch.labels[name])
        if labels.shape[0] != p.shape[0]:
            raise ShapeError("labels length must equal batch size")
        if labels.min() < 0 or labels.max() >= p.shape[1]:
            raise ParameterError(f"label out of range for head {name!r}")
        rows = np.arange(p.shape[0])
        p_true = p[rows, labels]
        clipped = np.maximum(p_true, LOG_FLOOR)
        loss += w * float(-np.mean(np.log(clipped)))
        dp = np.zeros_like(p)
        live = p_true > LOG_FLOOR
        dp[rows[live], labels[live]] = -w / (clipped[live] * p.shape[0])
        dprobs[name] = dp
    return loss, dprobs


# -- optimizer ----------------------------------------------------------------


def freeze_non_lhuc(path: str) -> bool:
    """Freeze predicate for LHUC-only adaptation."""
    return ".lhuc." not in path


def sgd_step(
    net: Network,
    lr: float,
    momentum: float = 0.0,
    l2: float = 0.0,
    freeze=None,
) -> None:
    """Classical momentum update: v <- momentum*v - lr*(g + l2*p); p += v.

    L2 decay applies to weight matrices (paths ending '.W') only. ``freeze``
    is a predicate on parameter paths; frozen parameters are untouched.
    """
    if lr < 0:
        raise ParameterError(f"lr must be >= 0, got {lr}")
    if not 0.0 <= momentum < 1.0:
        raise ParameterError(f"momentum must be in [0, 1), got {momentum}")
    for path, p in net.params.items():
        g = net.grads.get(path)
        if g is None:
            continue
        if freeze is not None and freeze(path):
            continue
        if l2 and path.endswith(".W"):
            g = g + l2 * p
        v = net.velocity.get(path)
        if v is None:
            v = np.zeros_like(p)
        v = momentum * v - lr * g
        net.velocity[path] = v
        p += v.astype(p.dtype, copy=False)


def train_step(
    net: Network,
    batch: MtlBatch,
    lr: float,
    momentum: float = 0.9,
    l2: float = 0.0,
    rng: np.random.Generator | None = None,
    freeze=None,
    train_mode: bool = True,
) -> float:
    """One forward/backward/update step; returns the batch loss."""
    probs = net.forward(
        batch.inputs, train=train_mode, speakers=batch.speakers, rng=rng
    )
    loss, dprobs = mtl_loss(probs, batch)
    net.backward(dprobs)
    sgd_step(net, lr, momentum, l2, freeze)
    return loss


# -- gradient checking ---------------------------------------------------------


def grad_check(
    net: Network,
    batch: MtlBatch,
    eps: float = 1e-5,
    max_coords: int = 50,
    seed: int = 0,
) -> dict:
    """Compare backprop gradients against central differences.

    Runs in train mode with frozen running statistics and a fixed dropout
    RNG so every loss evaluation sees identical masks. Samples up to
    ``max_coords`` coordinates per tensor. The relative error denominator
    is floored at 1e-3, so coordinates where both gradients are tiny are
    compared on an absolute scale.

    Returns {"max_rel_err": float, "per_tensor": {path: err}}.
    """
    if net.dtype != np.float64:
        raise ParameterError("grad_check requires a float64 network")

    def loss_fn() -> float:
        probs = net.forward(
            batch.inputs,
            train=True,
            speakers=batch.speakers,
            rng=np.random.default_rng(seed),
            update_stats=False,
        )
        loss, _ = mtl_loss(probs, batch)
        return loss

    probs = net.forward(
        batch.inputs,
        train=True,
        speakers=batch.speakers,
        rng=np.random.default_rng(seed),
        update_stats=False,
    )
    _, dprobs = mtl_loss(probs, batch)
    net.backward(dprobs)
    analytic = {p: g.copy() for p, g in net.grads.items()}
    coord_rng = np.random.default_rng(seed + 1)
    per_tensor: dict[str, float] = {}
    for path in sorted(net.params):
        if path not in analytic:
            continue
        tensor = net.params[path]
        flat = tensor.reshape(-1)
        n = flat.size
        idxs = (
            np.arange(n)
            if n <= max_coords
            else np.sort(coord_rng.choice(n, size=max_coords, replace=False))
        )
        worst = 0.0
        ga = analytic[path].reshape(-1)
        for k in idxs:
            orig = flat[k]
            flat[k] = orig + eps
            lp = loss_fn()
            flat[k] = orig - eps
            lm = loss_fn()
            flat[k] = orig
            numeric = (lp - lm) / (2.0 * eps)
            denom = max(abs(ga[k]), abs(numeric), 1e-3)
            worst = max(worst, abs(ga[k] - numeric) / denom)
        per_tensor[path] = worst
    return {
        "max_rel_err": max(per_tensor.values()) if per_tensor else 0.0,
        "per_tensor": per_tensor,
    }


# -- checkpoints ----------------------------------------------------------------


def save_checkpoint(path: str | Path, net: Network, extra: dict | None = None) -> None:
    """Write the network to one file: u32 header length, JSON header, then
    one STBF frame per tensor in header order."""
    tensor_names = sorted(net.params) + sorted(net.stats)
    header = {
        "format": "stbf-checkpoint",
        "version": 1,
        "dtype": "f4" if net.dtype == np.float32 else "f8",
        "trunk": [s.to_dict() for s in net.trunk],
        "heads": [[n, k] for n, k in net.heads],
        "seed": net.seed,
        "tensors": tensor_names,
        "extra": extra or {},
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    out = bytearray(struct.pack("<I", len(blob)) + blob)
    store = {**net.params, **net.stats}
    for name in tensor_names:
        out += stbf_io.pack_tensor(store[name])
    Path(path).write_bytes(bytes(out))


def load_checkpoint(path: str | Path) -> tuple[Network, dict]:
    """Rebuild a Network (including LHUC vectors) from save_checkpoint output."""
    buf = Path(path).read_bytes()
    if len(buf) < 4:
        raise FormatError("truncated checkpoint")
    (hlen,) = struct.unpack_from("<I", buf, 0)
    header = json.loads(buf[4 : 4 + hlen].decode("utf-8"))
    if header.get("format") != "stbf-checkpoint":
        raise FormatError("not a checkpoint file")
    dtype = np.float32 if header["dtype"] == "f4" else np.float64
    net = Network(
        [LayerSpec.from_dict(d) for d in header["trunk"]],
        [(n, k) for n, k in header["heads"]],
        seed=header["seed"],
        dtype=dtype,
    )
    offset = 4 + hlen
    for name in header["tensors"]:
        arr, offset = stbf_io.unpack_tensor(buf, offset)
        arr = arr.astype(dtype)
        if name in net.stats:
            net.stats[name][...] = arr
        elif name in net.params:
            net.params[name][...] = arr
        else:
            # lazily created parameters (LHUC vectors)
            net.params[name] = arr
    return net, header["extra"]
