"""Dual-stream convolutional actor-critic network with exact
hand-written forward/backward passes.

One conv stream reads the stacked grayscale observation, the other
reads the goal mask; their flattened features are concatenated into a
shared fully-connected head producing the action distribution and the
state value. A single-stream variant (no mask stream) serves as the
plain baseline.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from . import kernels

Params = Dict[str, np.ndarray]


class ShapeMismatch(Exception):
    pass


class ArchitectureMismatch(Exception):
    pass


CHECKPOINT_MAGIC = b"TDCK"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class NetArchitecture:
    input_hw: Tuple[int, int] = (84, 84)
    frame_stack: int = 4
    use_mask: bool = True
    conv: Tuple[Tuple[int, int, int], ...] = ((16, 8, 4), (32, 4, 2))
    hidden: int = 256
    actions: int = 6

    def conv_output_shapes(self) -> List[Tuple[int, int, int]]:
        h, w = self.input_hw
        shapes = []
        for filters, size, stride in self.conv:
            h = (h - size) // stride + 1
            w = (w - size) // stride + 1
            if h <= 0 or w <= 0:
                raise ShapeMismatch("conv stack collapses the input")
            shapes.append((h, w, filters))
        return shapes

    @property
    def stream_features(self) -> int:
        h, w, f = self.conv_output_shapes()[-1]
        return h * w * f

    @property
    def concat_features(self) -> int:
        return self.stream_features * (2 if self.use_mask else 1)

    def to_dict(self) -> dict:
        return {
            "input_hw": list(self.input_hw),
            "frame_stack": self.frame_stack,
            "use_mask": self.use_mask,
            "conv": [list(c) for c in self.conv],
            "hidden": self.hidden,
            "actions": self.actions,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetArchitecture":
        return cls(
            input_hw=tuple(d["input_hw"]),
            frame_stack=d["frame_stack"],
            use_mask=d["use_mask"],
            conv=tuple(tuple(c) for c in d["conv"]),
            hidden=d["hidden"],
            actions=d["actions"],
        )

    def fingerprint(self) -> bytes:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).digest()


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _uniform_init(rng: np.random.Generator, shape, fan_in: int,
                  dtype) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def init_params(arch: NetArchitecture, seed: int = 0,
                dtype=np.float32) -> Params:
    """Seeded uniform +-1/sqrt(fan_in) initialization for every tensor."""
    rng = np.random.default_rng(seed)
    params: Params = {}
    streams = ["state", "mask"] if arch.use_mask else ["state"]
    for stream in streams:
        c_in = arch.frame_stack if stream == "state" else 1
        for li, (filters, size, _) in enumerate(arch.conv, start=1):
            fan_in = size * size * c_in
            params[f"{stream}_conv{li}_w"] = _uniform_init(
                rng, (size, size, c_in, filters), fan_in, dtype
            )
            params[f"{stream}_conv{li}_b"] = np.zeros(filters, dtype=dtype)
            c_in = filters
    params["fc_w"] = _uniform_init(
        rng, (arch.concat_features, arch.hidden), arch.concat_features, dtype
    )
    params["fc_b"] = np.zeros(arch.hidden, dtype=dtype)
    params["policy_w"] = _uniform_init(
        rng, (arch.hidden, arch.actions), arch.hidden, dtype
    )
    params["policy_b"] = np.zeros(arch.actions, dtype=dtype)
    params["value_w"] = _uniform_init(rng, (arch.hidden, 1), arch.hidden, dtype)
    params["value_b"] = np.zeros(1, dtype=dtype)
    return params


class DualStreamNet:
    """Architecture + parameters + exact forward/backward."""

    def __init__(self, arch: NetArchitecture, params: Optional[Params] = None,
                 seed: int = 0):
        self.arch = arch
        # Shape pipeline sanity, fixed at construction.
        shapes = arch.conv_output_shapes()
        assert len(shapes) == len(arch.conv)
        self.conv_shapes = shapes
        self.params: Params = (
            params if params is not None else init_params(arch, seed)
        )
        self._check_param_shapes()

    def _check_param_shapes(self) -> None:
        expected = init_params(self.arch, seed=0)
        if set(expected) != set(self.params):
            raise ShapeMismatch(
                f"parameter names {sorted(self.params)} != "
                f"expected {sorted(expected)}"
            )
        for name, ref in expected.items():
            if self.params[name].shape != ref.shape:
                raise ShapeMismatch(
                    f"{name}: {self.params[name].shape} != {ref.shape}"
                )

    # -- forward ----------------------------------------------------------

    def _stream_forward(self, stream: str, x: np.ndarray, params: Params,
                        cache: dict) -> np.ndarray:
        for li, (_, _, stride) in enumerate(self.arch.conv, start=1):
            w = params[f"{stream}_conv{li}_w"]
            b = params[f"{stream}_conv{li}_b"]
            pre, cols = kernels.conv2d_forward_ex(x, w, b, stride)
            cache[f"{stream}_x{li}"] = x
            cache[f"{stream}_cols{li}"] = cols
            cache[f"{stream}_pre{li}"] = pre
            x = np.maximum(pre, 0)
        return x.reshape(x.shape[0], -1)

    def forward(self, obs: np.ndarray, mask: Optional[np.ndarray] = None,
                params: Optional[Params] = None):
        """Returns (policy probs (N,A), value (N,), cache).

        obs: (N, H, W, frame_stack); mask: (N, H, W, 1), values in [0,1].
        Accepts single samples without the batch axis.
        """
        params = params if params is not None else self.params
        squeeze = obs.ndim == 3
        if squeeze:
            obs = obs[None]
            if mask is not None:
                mask = mask[None] if mask.ndim == 3 else mask[None, :, :, None]
        if mask is not None and mask.ndim == 3:
            mask = mask[:, :, :, None]

        h, w = self.arch.input_hw
        if obs.shape[1:] != (h, w, self.arch.frame_stack):
            raise ShapeMismatch(f"obs shape {obs.shape}")
        if self.arch.use_mask:
            if mask is None:
                raise ShapeMismatch("dual-stream net needs a mask input")
            if mask.shape != (obs.shape[0], h, w, 1):
                raise ShapeMismatch(f"mask shape {mask.shape}")
        elif mask is not None:
            raise ShapeMismatch("single-stream net takes no mask input")

        cache: dict = {}
        dtype = params["fc_w"].dtype
        feat = self._stream_forward("state", obs.astype(dtype, copy=False),
                                    params, cache)
        if self.arch.use_mask:
            mfeat = self._stream_forward(
                "mask", mask.astype(dtype, copy=False), params, cache
            )
            feat = np.concatenate([feat, mfeat], axis=1)
        cache["feat"] = feat

        pre_h = feat @ params["fc_w"] + params["fc_b"]
        hidden = np.maximum(pre_h, 0)
        cache["pre_h"] = pre_h
        cache["hidden"] = hidden

        logits = hidden @ params["policy_w"] + params["policy_b"]
        probs = softmax(logits)
        value = (hidden @ params["value_w"] + params["value_b"])[:, 0]
        cache["probs"] = probs
        cache["params"] = params
        if squeeze:
            return probs[0], float(value[0]), cache
        return probs, value, cache

    # -- backward ---------------------------------------------------------

    def _stream_backward(self, stream: str, grad_flat: np.ndarray,
                         cache: dict, grads: Params) -> None:
        params = cache["params"]
        last = len(self.arch.conv)
        oh, ow, f = self.conv_shapes[-1]
        g = grad_flat.reshape(-1, oh, ow, f)
        for li in range(last, 0, -1):
            pre = cache[f"{stream}_pre{li}"]
            x = cache[f"{stream}_x{li}"]
            w = params[f"{stream}_conv{li}_w"]
            stride = self.arch.conv[li - 1][2]
            g = g * (pre > 0)
            gx, gw, gb = kernels.conv2d_backward(
                x, w, stride, g, need_grad_x=li > 1,
                cols=cache.get(f"{stream}_cols{li}"),
            )
            grads[f"{stream}_conv{li}_w"] = gw
            grads[f"{stream}_conv{li}_b"] = gb
            g = gx

    def backward(self, cache: dict, grad_logits: np.ndarray,
                 grad_value: np.ndarray) -> Params:
        """Parameter gradients given upstream gradients on the policy
        logits (N,A) and the value output (N,)."""
        params = cache["params"]
        hidden, feat, pre_h = cache["hidden"], cache["feat"], cache["pre_h"]
        if grad_logits.ndim == 1:
            grad_logits = grad_logits[None]
        grad_value = np.atleast_1d(np.asarray(grad_value))

        grads: Params = {}
        grads["policy_w"] = hidden.T @ grad_logits
        grads["policy_b"] = grad_logits.sum(axis=0)
        gv = grad_value[:, None]
        grads["value_w"] = hidden.T @ gv
        grads["value_b"] = gv.sum(axis=0)

        dh = grad_logits @ params["policy_w"].T + gv @ params["value_w"].T
        dh = dh * (pre_h > 0)
        grads["fc_w"] = feat.T @ dh
        grads["fc_b"] = dh.sum(axis=0)
        dfeat = dh @ params["fc_w"].T

        n_stream = self.arch.stream_features
        self._stream_backward("state", dfeat[:, :n_stream], cache, grads)
        if self.arch.use_mask:
            self._stream_backward("mask", dfeat[:, n_stream:], cache, grads)
        return grads

    def astype(self, dtype) -> "DualStreamNet":
        return DualStreamNet(
            self.arch, {k: v.astype(dtype) for k, v in self.params.items()}
        )


# -- checkpointing --------------------------------------------------------


def save_checkpoint(path: str, arch: NetArchitecture, params: Params,
                    step: int = 0) -> None:
    """Binary checkpoint: magic, version, architecture fingerprint,
    training-step count, then named float32 tensors."""
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(arch.fingerprint())
        arch_blob = json.dumps(arch.to_dict(), sort_keys=True).encode()
        fh.write(struct.pack("<I", len(arch_blob)))
        fh.write(arch_blob)
        fh.write(struct.pack("<Q", step))
        fh.write(struct.pack("<I", len(params)))
        for name in sorted(params):
            t = np.ascontiguousarray(params[name], dtype=np.float32)
            nb = name.encode()
            fh.write(struct.pack("<H", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<B", t.ndim))
            fh.write(struct.pack(f"<{t.ndim}I", *t.shape))
            fh.write(t.tobytes())


def load_checkpoint(path: str,
                    expect_arch: Optional[NetArchitecture] = None):
    """Returns (arch, params, step). Raises ArchitectureMismatch when the
    stored fingerprint differs from the expected architecture."""
    with open(path, "rb") as fh:
        if fh.read(4) != CHECKPOINT_MAGIC:
            raise IOError(f"{path}: not a checkpoint file")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != CHECKPOINT_VERSION:
            raise IOError(f"{path}: unsupported checkpoint version {version}")
        fingerprint = fh.read(32)
        (alen,) = struct.unpack("<I", fh.read(4))
        arch = NetArchitecture.from_dict(json.loads(fh.read(alen)))
        if arch.fingerprint() != fingerprint:
            raise IOError(f"{path}: corrupt architecture block")
        if expect_arch is not None and expect_arch.fingerprint() != fingerprint:
            raise ArchitectureMismatch(
                f"{path}: checkpoint architecture does not match"
            )
        (step,) = struct.unpack("<Q", fh.read(8))
        (count,) = struct.unpack("<I", fh.read(4))
        params: Params = {}
        for _ in range(count):
            (nlen,) = struct.unpack("<H", fh.read(2))
            name = fh.read(nlen).decode()
            (ndim,) = struct.unpack("<B", fh.read(1))
            shape = struct.unpack(f"<{ndim}I", fh.read(4 * ndim))
            size = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(fh.read(4 * size), dtype="<f4")
            params[name] = data.reshape(shape).copy()
    return arch, params, step


# -- gradient checking ----------------------------------------------------


@dataclass
class GradCheckReport:
    max_rel_error: float
    coords_checked: int
    tensors_covered: int
    worst_tensor: str
    passed: bool
    failures: List[str] = field(default_factory=list)


def grad_check(params: Params, value_fn, analytic_grads: Params,
               num_coords: int = 200, eps: float = 1e-3,
               tolerance: float = 1e-3, seed: int = 0) -> GradCheckReport:
    """Compare analytic gradients against central finite differences.

    value_fn(params) must be a deterministic scalar loss. Coordinates are
    sampled so every parameter tensor is covered; work in float64 for a
    meaningful eps.
    """
    rng = np.random.default_rng(seed)
    names = sorted(params)
    coords = []
    for name in names:  # at least one coordinate per tensor
        coords.append((name, tuple(rng.integers(0, s) for s in params[name].shape)))
    while len(coords) < num_coords:
        name = names[int(rng.integers(len(names)))]
        coords.append((name, tuple(rng.integers(0, s) for s in params[name].shape)))

    max_err, worst, failures = 0.0, "", []
    for name, idx in coords:
        orig = params[name][idx]
        params[name][idx] = orig + eps
        up = value_fn(params)
        params[name][idx] = orig - eps
        down = value_fn(params)
        params[name][idx] = orig
        fd = (up - down) / (2 * eps)
        an = float(analytic_grads[name][idx])
        denom = max(1e-6, abs(fd), abs(an))
        err = abs(fd - an) / denom
        if err > max_err:
            max_err, worst = err, f"{name}{list(idx)}"
        if err > tolerance:
            failures.append(f"{name}{list(idx)}: analytic={an} fd={fd} err={err}")
    return GradCheckReport(
        max_rel_error=max_err,
        coords_checked=len(coords),
        tensors_covered=len(names),
        worst_tensor=worst,
        passed=not failures,
        failures=failures,
    )
