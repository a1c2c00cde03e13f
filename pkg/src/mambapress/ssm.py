"""Selective state-space blocks with exposed per-token timescales.

One block normalizes its input, projects it into a gated stream pair,
runs one depthwise-convolved selective scan per direction (head), sums the
head outputs, gates, projects back out and adds the residual. Every head's
scan keeps its timescale activations around in a :class:`ScanTrace` so the
scoring stage can read them without recomputation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .kernels import as_f32

DIRECTIONS = ("forward", "backward")


@dataclass
class SsmHeadParams:
    """Parameters of one directional scan head.

    The state decay matrix is stored as ``a_log`` with A = -exp(a_log), so
    A is strictly negative and the discretized decay lands in (0, 1) for
    any positive timescale.
    """

    a_log: np.ndarray  # (E, N)
    w_b: np.ndarray  # (E, N) input -> per-token B
    w_c: np.ndarray  # (E, N) input -> per-token C
    w_1: np.ndarray  # (E, R) low-rank timescale projection, stage 1
    w_2: np.ndarray  # (R, E) low-rank timescale projection, stage 2
    skip_d: np.ndarray  # (E,) pass-through gain on the scan input
    conv_kernel: np.ndarray  # (E, W) depthwise causal taps, current token last
    scan_direction: str = "forward"
    # Derived once at construction so per-token cost stays linear in L.
    a: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        for name in ("a_log", "w_b", "w_c", "w_1", "w_2", "skip_d", "conv_kernel"):
            setattr(self, name, as_f32(getattr(self, name)))
        e, n = self.a_log.shape
        r = self.w_1.shape[1]
        if self.w_b.shape != (e, n) or self.w_c.shape != (e, n):
            raise ValueError(
                f"projection shapes {self.w_b.shape}/{self.w_c.shape} "
                f"inconsistent with state shape {(e, n)}"
            )
        if self.w_1.shape != (e, r) or self.w_2.shape != (r, e):
            raise ValueError(
                f"timescale projections {self.w_1.shape}/{self.w_2.shape} "
                f"inconsistent with feat_dim {e}"
            )
        if self.skip_d.shape != (e,):
            raise ValueError(f"skip vector shape {self.skip_d.shape} != ({e},)")
        if self.conv_kernel.ndim != 2 or self.conv_kernel.shape[0] != e:
            raise ValueError(f"conv kernel shape {self.conv_kernel.shape} != ({e}, W)")
        if self.scan_direction not in DIRECTIONS:
            raise ValueError(f"unknown scan direction {self.scan_direction!r}")
        self.a = -np.exp(self.a_log)

    @property
    def feat_dim(self) -> int:
        return self.a_log.shape[0]

    @property
    def state_dim(self) -> int:
        return self.a_log.shape[1]

    @property
    def delta_rank(self) -> int:
        return self.w_1.shape[1]


@dataclass
class SsmBlockParams:
    """One block: shared norm and in/out projections plus its scan heads."""

    norm_scale: np.ndarray  # (D,)
    norm_bias: np.ndarray  # (D,)
    in_proj: np.ndarray  # (D, 2E) -> stream u and gate z
    out_proj: np.ndarray  # (E, D)
    heads: list[SsmHeadParams]

    def __post_init__(self) -> None:
        for name in ("norm_scale", "norm_bias", "in_proj", "out_proj"):
            setattr(self, name, as_f32(getattr(self, name)))
        if not self.heads:
            raise ValueError("a block needs at least one scan head")
        d = self.norm_scale.shape[0]
        e = self.out_proj.shape[0]
        if e < d:
            raise ValueError(f"inner dim {e} must be >= feat dim {d}")
        if self.in_proj.shape != (d, 2 * e):
            raise ValueError(f"in_proj shape {self.in_proj.shape} != ({d}, {2 * e})")
        if self.out_proj.shape != (e, d):
            raise ValueError(f"out_proj shape {self.out_proj.shape} != ({e}, {d})")
        for head in self.heads:
            if head.feat_dim != e:
                raise ValueError(
                    f"head feat_dim {head.feat_dim} inconsistent with block inner dim {e}"
                )

    @property
    def feat_dim(self) -> int:
        return self.norm_scale.shape[0]

    @property
    def inner_dim(self) -> int:
        return self.out_proj.shape[0]


@dataclass
class ScanTrace:
    """Per-head scan outputs, always in original token order.

    ``scan_input`` is the convolved, activated stream the scan consumed;
    the timescales satisfy delta == softplus(scan_input @ w_1 @ w_2)
    bitwise, whichever direction the head runs.
    """

    y: np.ndarray  # (L, E)
    delta: np.ndarray  # (L, E), strictly positive
    scan_input: np.ndarray  # (L, E)
    hidden: np.ndarray | None = None  # (L, E, N) state trajectory, on request


def discretize(a: np.ndarray, delta: np.ndarray) -> np.ndarray:
    """Per-token decay factors exp(delta[t, e] * a[e, n]) -> (L, E, N).

    The matching input transform needs no separate array: scaling the input
    by its timescale before the state update realizes it implicitly.
    """
    a = as_f32(a)
    delta = as_f32(delta)
    if delta.ndim != 2 or a.ndim != 2 or delta.shape[1] != a.shape[0]:
        raise ValueError(f"discretize shape mismatch: a {a.shape}, delta {delta.shape}")
    if not np.all(delta > 0):
        raise ValueError("discretize requires strictly positive timescales")
    return kernels.exp(kernels.multiply(delta[:, :, None], a[None, :, :]))


def selective_scan(
    x: np.ndarray, params: SsmHeadParams, collect_hidden: bool = False
) -> ScanTrace:
    """Run one head's input-dependent recurrence over a token sequence.

    Per token: B, C and the timescale are projected from the input, the
    state decays by the discretized factor and absorbs the timescale-scaled
    input through B, and the output reads the state through C plus the
    skip path. Backward heads scan the reversed sequence; their outputs are
    re-reversed so the trace is in original token order.
    """
    x = as_f32(x)
    if x.ndim != 2 or x.shape[1] != params.feat_dim:
        raise ValueError(
            f"scan input shape {x.shape} inconsistent with feat_dim {params.feat_dim}"
        )
    length = x.shape[0]
    if length < 1:
        raise ValueError("selective_scan needs at least one token")
    backward = params.scan_direction == "backward"
    xs = np.ascontiguousarray(x[::-1]) if backward else x

    delta = kernels.softplus(kernels.matmul(kernels.matmul(xs, params.w_1), params.w_2))
    b = kernels.matmul(xs, params.w_b)  # (L, N)
    c = kernels.matmul(xs, params.w_c)  # (L, N)
    abar = discretize(params.a, delta)  # (L, E, N)
    dx = kernels.multiply(delta, xs)
    dxb = kernels.multiply(dx[:, :, None], b[:, None, :])  # (L, E, N)

    e, n = params.a.shape
    h = np.zeros((e, n), dtype=np.float32)
    y = np.empty((length, e), dtype=np.float32)
    hidden = np.empty((length, e, n), dtype=np.float32) if collect_hidden else None
    for t in range(length):
        kernels.multiply(abar[t], h, out=h)
        kernels.add(h, dxb[t], out=h)
        y[t] = kernels.rowdot(h, c[t])
        if hidden is not None:
            hidden[t] = h
    y = kernels.add(y, kernels.multiply(params.skip_d, xs))

    if backward:
        y = np.ascontiguousarray(y[::-1])
        delta = np.ascontiguousarray(delta[::-1])
        if hidden is not None:
            hidden = np.ascontiguousarray(hidden[::-1])
    return ScanTrace(y=y, delta=delta, scan_input=x, hidden=hidden)


def mamba_block(
    x: np.ndarray, params: SsmBlockParams, collect_hidden: bool = False
) -> tuple[np.ndarray, list[ScanTrace]]:
    """Full block: norm, split projection, per-head conv + scan, gate, residual.

    Returns the block output (same shape as x) and one trace per head. The
    depthwise convolution is causal in each head's scan direction, so
    backward heads convolve the reversed stream.
    """
    x = as_f32(x)
    if x.ndim != 2 or x.shape[1] != params.feat_dim:
        raise ValueError(
            f"block input shape {x.shape} inconsistent with feat_dim {params.feat_dim}"
        )
    e = params.inner_dim
    normed = kernels.layernorm(x, params.norm_scale, params.norm_bias)
    uz = kernels.matmul(normed, params.in_proj)
    u, z = uz[:, :e], uz[:, e:]

    traces: list[ScanTrace] = []
    for head in params.heads:
        backward = head.scan_direction == "backward"
        stream = np.ascontiguousarray(u[::-1]) if backward else u
        act = kernels.silu(kernels.causal_conv(stream, head.conv_kernel))
        if backward:
            act = np.ascontiguousarray(act[::-1])
        traces.append(selective_scan(act, head, collect_hidden=collect_hidden))

    y_sum = traces[0].y
    for trace in traces[1:]:
        y_sum = kernels.add(y_sum, trace.y)
    gated = kernels.multiply(kernels.silu(z), y_sum)
    out = kernels.matmul(gated, params.out_proj)
    return kernels.add(x, out), traces
