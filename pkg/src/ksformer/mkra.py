"""Multi-scale key-select routing attention.

The channel axis is split into four branches, each windowing the feature
map at its own scale. Per branch, region-mean queries and keys build a
region-to-region relevance matrix; each query region keeps only its top-k
most relevant regions and attends over the gathered key/value tokens of
those regions. Routing indices are hard (detached); gradients flow through
the gathered values and the query path only.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .tensor import (
    Tensor,
    channel_slice,
    concat,
    gather_rows,
    matmul,
    mean_axis,
    mul,
    reshape,
    softmax_lastdim,
    topk_lastdim,
    transpose_last2,
    window_partition,
    window_reverse,
)

DEFAULT_WINDOW_SIDES = (2, 4, 8, 64)


@dataclass(frozen=True)
class BranchPlan:
    """Effective geometry of one attention branch at a fixed feature side."""

    window_side: int
    regions: int  # S*S
    tokens: int   # window_side**2, feature vectors per region
    k: int


@dataclass(frozen=True)
class MkraConfig:
    channels: int
    side: int
    window_sides: tuple = DEFAULT_WINDOW_SIDES
    k: int = 0  # 0 -> ceil(S*S/4) per branch; >0 -> min(k, S*S) per branch
    heads: int = 1

    def __post_init__(self):
        if self.channels % 4 != 0:
            raise ConfigError(f"channels must be divisible by 4, got {self.channels}")
        if self.heads != 1:
            raise ConfigError("only single-head attention is supported")
        if len(self.window_sides) != 4:
            raise ConfigError(f"expected 4 window sides, got {self.window_sides}")
        if self.k < 0:
            raise ConfigError(f"k must be nonnegative, got {self.k}")
        for plan in self.branch_plans():
            if self.side % plan.window_side != 0:
                raise ConfigError(
                    f"window side {plan.window_side} does not divide feature side {self.side}"
                )
            if not 1 <= plan.k <= plan.regions:
                raise ConfigError(
                    f"routed count k={plan.k} outside [1, {plan.regions}] for "
                    f"window side {plan.window_side}"
                )

    @property
    def branch_channels(self):
        return self.channels // 4

    def branch_plans(self):
        """Per-branch geometry after clamping oversized windows to the side."""
        plans = []
        for n in self.window_sides:
            n_eff = min(n, self.side)
            s = self.side // n_eff
            regions = s * s
            if self.k == 0:
                k_eff = max(1, math.ceil(regions / 4))
            else:
                k_eff = min(self.k, regions)
            plans.append(BranchPlan(n_eff, regions, n_eff * n_eff, k_eff))
        return tuple(plans)


@dataclass
class MkraWeights:
    """Per-branch q/k/v projections plus the shared output projection."""

    wq: list
    wk: list
    wv: list
    wo: Tensor

    @staticmethod
    def create(cfg, rng):
        c4 = cfg.branch_channels
        scale = 1.0 / math.sqrt(c4)

        def mat(n_in, n_out, s):
            return Tensor(rng.normal(0.0, s, size=(n_in, n_out)).astype(np.float32))

        return MkraWeights(
            wq=[mat(c4, c4, scale) for _ in range(4)],
            wk=[mat(c4, c4, scale) for _ in range(4)],
            wv=[mat(c4, c4, scale) for _ in range(4)],
            wo=mat(cfg.channels, cfg.channels, 1.0 / math.sqrt(cfg.channels)),
        )

    def named(self, prefix):
        for b in range(4):
            yield f"{prefix}b{b + 1}.wq", self.wq[b]
            yield f"{prefix}b{b + 1}.wk", self.wk[b]
            yield f"{prefix}b{b + 1}.wv", self.wv[b]
        yield f"{prefix}wo", self.wo


def project_qkv(xr, wq, wk, wv):
    """Linear q/k/v projections shared across regions."""
    return matmul(xr, wq), matmul(xr, wk), matmul(xr, wv)


def region_pool(q):
    """Region-level descriptor: mean over the token axis."""
    return mean_axis(q, -2)


def region_adjacency(q_r, k_r):
    """Row-stochastic region relevance: softmax(Q_r K_r^T / sqrt(c))."""
    c = q_r.shape[-1]
    logits = mul(matmul(q_r, transpose_last2(k_r)), 1.0 / math.sqrt(c))
    return softmax_lastdim(logits)


def select_topk(adj, k):
    """Indices of the k most relevant regions per query region (detached)."""
    _, idx = topk_lastdim(adj, k)
    return idx


def gather_kv(k, v, idx):
    """Concatenate the token blocks of the routed regions, in index order.

    k, v: [.., S*S, tokens, c]; idx: [.., S*S, kk]. Output token axis is
    kk * tokens.
    """
    tokens, c = k.shape[-2], k.shape[-1]
    kk = idx.shape[-1]
    lead = k.shape[:-3] + (k.shape[-3],)

    def pick(src):
        flat = reshape(src, src.shape[:-2] + (tokens * c,))
        g = gather_rows(flat, idx)  # [.., S*S, kk, tokens*c]
        return reshape(g, lead + (kk * tokens, c))

    return pick(k), pick(v)


def routed_attention(q, k_g, v_g):
    """Scaled dot-product attention of each region over its gathered tokens."""
    c = q.shape[-1]
    scores = mul(matmul(q, transpose_last2(k_g)), 1.0 / math.sqrt(c))
    return matmul(softmax_lastdim(scores), v_g)


def mkra_forward(x, cfg, weights):
    """Four-branch routed attention block with residual and output projection.

    x: [.., side, side, channels] with an optional single leading batch axis.
    """
    if x.shape[-1] != cfg.channels:
        raise ConfigError(f"input channels {x.shape[-1]} != config channels {cfg.channels}")
    if x.shape[-3] != cfg.side or x.shape[-2] != cfg.side:
        raise ConfigError(f"input side {x.shape[-3]}x{x.shape[-2]} != config side {cfg.side}")
    c4 = cfg.branch_channels
    outs = []
    for b, plan in enumerate(cfg.branch_plans()):
        part = channel_slice(x, b * c4, (b + 1) * c4)
        xr = window_partition(part, plan.window_side)
        q, k, v = project_qkv(xr, weights.wq[b], weights.wk[b], weights.wv[b])
        adj = region_adjacency(region_pool(q), region_pool(k))
        idx = select_topk(adj, plan.k)
        k_g, v_g = gather_kv(k, v, idx)
        att = routed_attention(q, k_g, v_g)
        outs.append(window_reverse(att, plan.window_side, cfg.side))
    merged = concat(outs, axis=-1)
    lead = merged.shape[:-3]
    flat = reshape(merged, lead + (cfg.side * cfg.side, cfg.channels))
    projected = reshape(matmul(flat, weights.wo), lead + (cfg.side, cfg.side, cfg.channels))
    return projected + x


def branch_attention_macs(plan, branch_channels):
    """Exact multiply-accumulate counts of the score+apply stages.

    Returns (routed, dense_equivalent): score QK^T plus apply AV, each
    regions * tokens * (k * tokens) * c; dense sets k = regions.
    """
    routed = 2 * plan.regions * plan.tokens * (plan.k * plan.tokens) * branch_channels
    dense = 2 * plan.regions * plan.tokens * (plan.regions * plan.tokens) * branch_channels
    return routed, dense


def attention_macs(cfg):
    """Per-branch and aggregate MAC accounting for one attention block.

    Projections and pooling are identical for routed and dense execution;
    only the score+apply stages differ.
    """
    c4 = cfg.branch_channels
    hw = cfg.side * cfg.side
    per_branch = []
    proj = adjacency = routed = dense = 0
    for plan in cfg.branch_plans():
        r, d = branch_attention_macs(plan, c4)
        per_branch.append((plan, r, d))
        proj += 3 * hw * c4 * c4
        adjacency += plan.regions * plan.regions * c4
        routed += r
        dense += d
    output_proj = hw * cfg.channels * cfg.channels
    return {
        "per_branch": per_branch,
        "projections": proj + output_proj,
        "adjacency": adjacency,
        "score_apply_routed": routed,
        "score_apply_dense": dense,
    }
