"""Heterogeneity-aware scheduling: a weight network over observations plus
the projection onto the constraint set C(tau) and the inner loop of the
bi-level optimization."""

from dataclasses import dataclass, field

import torch

from .numerics import FeedForwardNet, RandomSource
from .score import SampleWeights


def project_weights(raw: torch.Tensor, tau: float) -> SampleWeights:
    """Euclidean projection of a raw T-vector onto
    C(tau) = {tau <= w <= 1/tau, sum w = T}.

    Standard shift-and-clip: w = clip(raw - nu, tau, 1/tau) where the scalar
    nu is found by bisection so the sum constraint holds (the classic
    box-plus-simplex projection). Order-preserving, idempotent on feasible
    input, and differentiable through the unclamped entries.
    """
    raw = torch.as_tensor(raw)
    if not 0.0 < tau < 1.0:
        raise ValueError("tau must lie in (0, 1)")
    T = raw.shape[0]
    lo, hi = tau, 1.0 / tau
    with torch.no_grad():
        r = raw.detach()
        nu_lo = float(r.min()) - hi      # everything at the upper bound
        nu_hi = float(r.max()) - lo      # everything at the lower bound
        for _ in range(200):
            nu = 0.5 * (nu_lo + nu_hi)
            total = float((r - nu).clamp(lo, hi).sum())
            if total > T:
                nu_lo = nu
            else:
                nu_hi = nu
            if nu_hi - nu_lo < 1e-15 * max(1.0, abs(nu_hi)):
                break
        nu = 0.5 * (nu_lo + nu_hi)
    w = (raw - nu).clamp(lo, hi)
    # nail the sum constraint exactly through the interior entries
    interior = (w > lo + 1e-12) & (w < hi - 1e-12)
    gap = T - w.sum()
    if bool(interior.any()):
        w = w + interior.to(w.dtype) * (gap / interior.sum())
    else:
        w = w * (T / w.sum())
    return SampleWeights(w=w, tau=tau)


@dataclass
class SchedulerParams:
    """Weight network mapping an observation x^t to one raw log-weight."""
    weight_net: FeedForwardNet
    tau: float = 0.1
    L_inner: int = 20

    def __post_init__(self):
        if not 0.0 < self.tau < 1.0:
            raise ValueError("tau must lie strictly inside (0, 1)")


def make_scheduler(d: int, tau: float = 0.1, L_inner: int = 20,
                   hidden: int = 16,
                   rng: "RandomSource | None" = None) -> SchedulerParams:
    """Builds the weight network initialized to output weight 1 uniformly
    (zeroed output layer, exp(0) = 1)."""
    net = FeedForwardNet([d, hidden, 1], rng=rng or RandomSource(0))
    with torch.no_grad():
        net.layers[-1].weight.zero_()
        net.layers[-1].bias.zero_()
    return SchedulerParams(weight_net=net, tau=tau, L_inner=L_inner)


def raw_weights(sp: SchedulerParams, x: torch.Tensor) -> torch.Tensor:
    """Positive pre-projection weights exp(net(x^t))."""
    return torch.exp(sp.weight_net(x).squeeze(-1))


def current_weights(sp: SchedulerParams, x: torch.Tensor) -> SampleWeights:
    with torch.no_grad():
        return project_weights(raw_weights(sp, x), sp.tau)


def inner_optimize(sp: SchedulerParams, x: torch.Tensor,
                   frozen_scores: torch.Tensor, lr: float = 1e-3,
                   steps: "int | None" = None,
                   optimizer: "torch.optim.Optimizer | None" = None) -> SampleWeights:
    """Inner level of the bi-level problem: minimize the reweighted score
    over the weight network with per-timestep score contributions frozen.

    ``frozen_scores`` holds the per-timestep terms the weights multiply
    (log-likelihood minus confounder KL), detached from the model.
    """
    scores = frozen_scores.detach()
    if optimizer is None:
        optimizer = torch.optim.Adam(sp.weight_net.parameters(), lr=lr)
    for _ in range(steps if steps is not None else sp.L_inner):
        optimizer.zero_grad()
        w = project_weights(raw_weights(sp, x), sp.tau).w
        loss = (w * scores).sum()
        loss.backward()
        optimizer.step()
    return current_weights(sp, x)
