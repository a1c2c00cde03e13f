"""Analytic FLOPs model and the reduction-target solver.

The per-token block cost is an exact algebraic mirror of the kernel calls
the block makes (see ``docs/flops_accounting.md`` for the op-count table);
a test instruments the live kernels and checks the two agree to the FLOP.
Block cost is strictly linear in the token count: parameter-derived
constants (like the negated state matrix) are precomputed at load time.

The solver turns a global compute-reduction target into the single
grouping ratio k shared by all reduction layers. Because group sizes are
floors, achieved reduction is a step function of k; bisection converges
onto the step whose value is within tolerance of the target, or onto the
nearest achievable value below it, reported honestly either way.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, Iterable, Sequence

from .reduction import Strategy, group_size

if TYPE_CHECKING:  # pragma: no cover
    from .model import ModelConfig

SOLVER_TOLERANCE = 0.0025  # 0.25 percentage points
SOLVER_MAX_ITERATIONS = 64
_K_CEILING = 0.5 - 1e-9


@dataclass(frozen=True)
class BlockDims:
    """The dimensions that determine one block's per-token cost."""

    feat_dim: int  # D
    inner_dim: int  # E
    state_dim: int  # N
    delta_rank: int  # R
    head_count: int = 2
    conv_width: int = 4


def per_token_block_flops(dims: BlockDims) -> int:
    """FLOPs one token costs in one block (multiply-adds count 2)."""
    d, e, n, r = dims.feat_dim, dims.inner_dim, dims.state_dim, dims.delta_rank
    h, w = dims.head_count, dims.conv_width
    per_head = 2 * w * e + e + 11 * e * n + 4 * e * r + 4 * e
    return 8 * d + 6 * d * e + h * per_head + (h + 1) * e


def block_flops(token_count: int, dims: BlockDims) -> int:
    """Cost of one block on a token_count-long sequence; exactly linear."""
    if token_count < 1:
        raise ValueError(f"block_flops needs at least one token, got {token_count}")
    return token_count * per_token_block_flops(dims)


@dataclass(frozen=True)
class ReductionPlan:
    """Where to reduce, by how much, and what the schedule achieves."""

    reduce_at_layers: tuple[int, ...]
    k: float
    strategy: Strategy
    target_reduction: float
    achieved_reduction: float

    def to_json(self) -> dict:
        return {
            "layers": list(self.reduce_at_layers),
            "k": self.k,
            "strategy": self.strategy.value,
            "target": self.target_reduction,
            "achieved": self.achieved_reduction,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "ReductionPlan":
        return cls(
            reduce_at_layers=tuple(int(i) for i in doc["layers"]),
            k=float(doc["k"]),
            strategy=Strategy(doc["strategy"]),
            target_reduction=float(doc["target"]),
            achieved_reduction=float(doc["achieved"]),
        )


def default_reduction_layers(depth: int) -> tuple[int, ...]:
    """Every fifth block starting at index 5 (configurable elsewhere)."""
    return tuple(range(5, depth, 5))


@dataclass(frozen=True)
class FlopsModel:
    """Whole-model analytic cost as a function of the reduction schedule."""

    dims: BlockDims
    layer_count: int
    patch_tokens: int
    cls_present: bool
    patch_embed_cost: int
    head_base_cost: int  # pooled-feature norm + classifier
    mean_pool: bool

    @classmethod
    def from_config(cls, config: "ModelConfig") -> "FlopsModel":
        d = config.feat_dim
        patch_in = config.patch_size * config.patch_size * config.channels
        patches = config.patch_tokens
        return cls(
            dims=config.block_dims(),
            layer_count=config.depth,
            patch_tokens=patches,
            cls_present=config.cls_position != "none",
            patch_embed_cost=patches * (2 * patch_in * d + d),
            head_base_cost=7 * d + 2 * d * config.class_count + config.class_count,
            mean_pool=config.cls_position == "none",
        )

    def token_counts(self, k: float, reduce_at_layers: Iterable[int]) -> list[int]:
        """Simulated per-block input token counts plus the final count."""
        layer_set = set(int(i) for i in reduce_at_layers)
        for i in layer_set:
            if not 0 <= i < self.layer_count:
                raise ValueError(f"reduction layer {i} outside 0..{self.layer_count - 1}")
        cls = 1 if self.cls_present else 0
        count = self.patch_tokens + cls
        counts = []
        for layer in range(self.layer_count):
            counts.append(count)
            if layer in layer_set:
                count -= group_size(k, count - cls)
        counts.append(count)
        return counts

    def head_cost(self, final_count: int) -> int:
        cost = self.head_base_cost
        if self.mean_pool:
            cost += final_count * self.dims.feat_dim
        return cost

    def total_from_counts(self, counts: Sequence[int]) -> int:
        blocks = sum(block_flops(c, self.dims) for c in counts[:-1])
        return self.patch_embed_cost + blocks + self.head_cost(counts[-1])

    def total_flops(self, k: float = 0.0, reduce_at_layers: Iterable[int] = ()) -> int:
        return self.total_from_counts(self.token_counts(k, reduce_at_layers))

    def achieved_reduction(self, k: float, reduce_at_layers: Iterable[int]) -> float:
        baseline = self.total_flops()
        return 1.0 - self.total_flops(k, reduce_at_layers) / baseline


def solve_k(
    model: FlopsModel,
    target_reduction: float,
    reduce_at_layers: Iterable[int],
    strategy: Strategy = Strategy.MERGE,
) -> ReductionPlan:
    """Bisect the grouping ratio until the achieved reduction meets the target.

    Raises if the target exceeds what the layer set can achieve at any
    k < 0.5; if the floor-induced steps skip over the target by more than
    the tolerance, the nearest achievable value below it is returned with
    its honest achieved_reduction.
    """
    layers = tuple(sorted(set(int(i) for i in reduce_at_layers)))
    strategy = Strategy(strategy)
    if not 0.0 <= target_reduction < 1.0:
        raise ValueError(f"target reduction must lie in [0, 1), got {target_reduction}")

    def achieved(k: float) -> float:
        return model.achieved_reduction(k, layers)

    if target_reduction == 0.0:
        return ReductionPlan(layers, 0.0, strategy, 0.0, 0.0)

    max_achievable = achieved(_K_CEILING)
    if target_reduction > max_achievable:
        raise ValueError(
            f"target reduction {target_reduction:.4f} unattainable for layers "
            f"{list(layers)}: maximum achievable is {max_achievable:.4f}"
        )

    lo, hi = 0.0, _K_CEILING
    for _ in range(SOLVER_MAX_ITERATIONS):
        mid = 0.5 * (lo + hi)
        a_mid = achieved(mid)
        if abs(a_mid - target_reduction) < SOLVER_TOLERANCE:
            return ReductionPlan(layers, mid, strategy, target_reduction, a_mid)
        if a_mid <= target_reduction:
            lo = mid
        else:
            hi = mid

    a_lo, a_hi = achieved(lo), achieved(hi)
    if abs(a_hi - target_reduction) < SOLVER_TOLERANCE:
        return ReductionPlan(layers, hi, strategy, target_reduction, a_hi)
    return ReductionPlan(layers, lo, strategy, target_reduction, a_lo)
