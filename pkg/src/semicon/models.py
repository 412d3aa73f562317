"""Encoders and the projection head.

Two desk-scale encoders: an MLP for synthetic vector streams and a small
two-conv-block network for 32x32x3 images. The projection head is an MLP
with one hidden layer, a ReLU, and a row-normalized output (default size
128). Parameters live in a name -> float64 array mapping; training binds
them onto a tape, evaluation runs the same forward on a throwaway tape.

Projections are L2-normalized before any similarity is taken; the head is
dropped at test time and only encoder latents reach the classifier.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Var
from .errors import ShapeError


@dataclass(frozen=True)
class MlpSpec:
    in_dim: int
    hidden: tuple[int, ...] = (64,)
    out_dim: int = 64


@dataclass(frozen=True)
class ConvSpec:
    """Two valid 3x3 conv + ReLU + 2x2 max-pool blocks, then a dense layer."""

    in_shape: tuple[int, int, int] = (3, 32, 32)  # channels, height, width
    channels: tuple[int, int] = (8, 16)
    kernel: int = 3
    pool: int = 2
    out_dim: int = 160


@dataclass(frozen=True)
class HeadSpec:
    in_dim: int
    hidden_dim: int
    out_dim: int = 128


def bind(tape: Tape, params: Mapping[str, np.ndarray]) -> dict[str, Var]:
    """Register parameters as tape leaves, in sorted-name order."""
    return {name: tape.param(params[name]) for name in sorted(params)}


def _linear(x: Var, bound: Mapping[str, Var], w: str, b: str) -> Var:
    return ad.add(ad.matmul(x, bound[w]), bound[b])


def _conv_patch_indices(n: int, h: int, w: int, c: int, k: int) -> np.ndarray:
    """Flat NHWC indices shaped (n*oh*ow, k*k*c) for valid 3x3 windows."""
    oh, ow = h - k + 1, w - k + 1
    bn = np.arange(n).reshape(n, 1, 1, 1, 1, 1)
    ii = (np.arange(oh).reshape(oh, 1) + np.arange(k)).reshape(1, oh, 1, k, 1, 1)
    jj = (np.arange(ow).reshape(ow, 1) + np.arange(k)).reshape(1, 1, ow, 1, k, 1)
    cc = np.arange(c).reshape(1, 1, 1, 1, 1, c)
    idx = ((bn * h + ii) * w + jj) * c + cc
    return np.broadcast_to(idx, (n, oh, ow, k, k, c)).reshape(n * oh * ow, k * k * c)


def _pool_window_indices(n: int, h: int, w: int, c: int, p: int) -> np.ndarray:
    """Flat NHWC indices shaped (n*ph*pw*c, p*p); trailing rows/cols cropped."""
    ph, pw = h // p, w // p
    bn = np.arange(n).reshape(n, 1, 1, 1, 1, 1)
    ii = (np.arange(ph).reshape(ph, 1) * p + np.arange(p)).reshape(1, ph, 1, 1, p, 1)
    jj = (np.arange(pw).reshape(pw, 1) * p + np.arange(p)).reshape(1, 1, pw, 1, 1, p)
    cc = np.arange(c).reshape(1, 1, 1, c, 1, 1)
    idx = ((bn * h + ii) * w + jj) * c + cc
    return np.broadcast_to(idx, (n, ph, pw, c, p, p)).reshape(n * ph * pw * c, p * p)


@dataclass
class Encoder:
    spec: MlpSpec | ConvSpec
    params: dict[str, np.ndarray]

    @property
    def out_dim(self) -> int:
        return self.spec.out_dim

    def prepare(self, batch: np.ndarray) -> np.ndarray:
        """Shape-check a raw batch and lay it out for `apply`."""
        batch = ad.as_f64(batch)
        if isinstance(self.spec, MlpSpec):
            if batch.ndim != 2 or batch.shape[1] != self.spec.in_dim:
                raise ShapeError(
                    f"encoder expects (batch, {self.spec.in_dim}), got {batch.shape}"
                )
            return batch
        c, h, w = self.spec.in_shape
        if batch.ndim != 4 or batch.shape[1:] != (c, h, w):
            raise ShapeError(
                f"encoder expects (batch, {c}, {h}, {w}), got {batch.shape}"
            )
        return np.ascontiguousarray(batch.transpose(0, 2, 3, 1))  # NCHW -> NHWC

    def apply(self, bound: Mapping[str, Var], x: Var) -> Var:
        if isinstance(self.spec, MlpSpec):
            return self._apply_mlp(bound, x)
        return self._apply_conv(bound, x)

    def _apply_mlp(self, bound: Mapping[str, Var], x: Var) -> Var:
        h = x
        n_layers = len(self.spec.hidden) + 1
        for i in range(n_layers):
            h = _linear(h, bound, f"enc/w{i}", f"enc/b{i}")
            if i < n_layers - 1:
                h = ad.relu(h)
        return h

    def _apply_conv(self, bound: Mapping[str, Var], x: Var) -> Var:
        spec = self.spec
        c, h, w = spec.in_shape
        k, p = spec.kernel, spec.pool
        n = x.shape[0]
        act = x
        in_c = c
        for block, out_c in enumerate(spec.channels, start=1):
            patches = ad.reshape(
                ad.gather(act, _conv_patch_indices(n, h, w, in_c, k)),
                (n * (h - k + 1) * (w - k + 1), k * k * in_c),
            )
            conv = ad.relu(_linear(patches, bound, f"enc/c{block}_w", f"enc/c{block}_b"))
            h, w = h - k + 1, w - k + 1
            conv = ad.reshape(conv, (n, h, w, out_c))
            windows = ad.reshape(
                ad.gather(conv, _pool_window_indices(n, h, w, out_c, p)),
                (n * (h // p) * (w // p) * out_c, p * p),
            )
            h, w = h // p, w // p
            act = ad.reshape(ad.row_max(windows), (n, h, w, out_c))
            in_c = out_c
        flat = ad.reshape(act, (n, h * w * in_c))
        return _linear(flat, bound, "enc/dense_w", "enc/dense_b")


@dataclass
class ProjectionHead:
    spec: HeadSpec
    params: dict[str, np.ndarray]

    @property
    def out_dim(self) -> int:
        return self.spec.out_dim

    def apply(self, bound: Mapping[str, Var], h: Var) -> Var:
        if h.shape[1] != self.spec.in_dim:
            raise ShapeError(
                f"projection head expects (batch, {self.spec.in_dim}), got {h.shape}"
            )
        hidden = ad.relu(_linear(h, bound, "proj/w1", "proj/b1"))
        return ad.l2_normalize_rows(_linear(hidden, bound, "proj/w2", "proj/b2"))


def _uniform_fan_in(rng: np.random.Generator, fan_in: int,
                    shape: tuple[int, ...]) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def init_params(seed: int, spec: MlpSpec | ConvSpec,
                head_hidden: int | None = None,
                proj_dim: int = 128) -> tuple[Encoder, ProjectionHead]:
    """Deterministic init: weights ~ U(-1/sqrt(fan_in), +1/sqrt(fan_in)), zero biases."""
    rng = np.random.default_rng(seed)
    params: dict[str, np.ndarray] = {}
    if isinstance(spec, MlpSpec):
        dims = (spec.in_dim, *spec.hidden, spec.out_dim)
        for i, (fi, fo) in enumerate(zip(dims[:-1], dims[1:])):
            params[f"enc/w{i}"] = _uniform_fan_in(rng, fi, (fi, fo))
            params[f"enc/b{i}"] = np.zeros((1, fo))
    else:
        c, h, w = spec.in_shape
        k, p = spec.kernel, spec.pool
        in_c = c
        for block, out_c in enumerate(spec.channels, start=1):
            fan_in = k * k * in_c
            params[f"enc/c{block}_w"] = _uniform_fan_in(rng, fan_in, (fan_in, out_c))
            params[f"enc/c{block}_b"] = np.zeros((1, out_c))
            h, w = (h - k + 1) // p, (w - k + 1) // p
            in_c = out_c
        flat = h * w * in_c
        params["enc/dense_w"] = _uniform_fan_in(rng, flat, (flat, spec.out_dim))
        params["enc/dense_b"] = np.zeros((1, spec.out_dim))
    enc = Encoder(spec, params)

    hidden = spec.out_dim if head_hidden is None else head_hidden
    head_spec = HeadSpec(spec.out_dim, hidden, proj_dim)
    head_params = {
        "proj/w1": _uniform_fan_in(rng, head_spec.in_dim,
                                   (head_spec.in_dim, hidden)),
        "proj/b1": np.zeros((1, hidden)),
        "proj/w2": _uniform_fan_in(rng, hidden, (hidden, proj_dim)),
        "proj/b2": np.zeros((1, proj_dim)),
    }
    return enc, ProjectionHead(head_spec, head_params)


def encode(enc: Encoder, batch: np.ndarray) -> np.ndarray:
    """Latent rows for a raw batch (throwaway tape, no gradients kept)."""
    tape = Tape()
    return enc.apply(bind(tape, enc.params), tape.const(enc.prepare(batch))).data


def project(proj: ProjectionHead, h: np.ndarray) -> np.ndarray:
    tape = Tape()
    return proj.apply(bind(tape, proj.params), tape.const(ad.as_f64(h))).data
