"""The magnified score S = L + R_G + R_C, its sample-reweighted variant, and
the acyclicity-plus-ancestrality constraint h."""

from dataclasses import dataclass, field

import torch

from .model import AdmgPosterior, ScmModel, split_blocks
from .numerics import RandomSource, matrix_exp


@dataclass
class ScoreBreakdown:
    data_fit: float
    graph_penalty: float
    confounder_kl: float   # signed penalty term R_C = -KL (<= 0)
    h_value: float
    total: float

    def as_dict(self):
        return {
            "data_fit": self.data_fit,
            "graph_penalty": self.graph_penalty,
            "confounder_kl": self.confounder_kl,
            "h_value": self.h_value,
            "total": self.total,
        }


@dataclass
class ConstraintSchedule:
    lam: float = 5.0     # sparsity
    rho: float = 1.0     # quadratic penalty weight
    alpha: float = 0.0   # linear multiplier

    def __post_init__(self):
        if self.lam < 0 or self.rho <= 0 or self.alpha < 0:
            raise ValueError("need lam >= 0, rho > 0, alpha >= 0")


@dataclass
class SampleWeights:
    """T-vector constrained to C(tau): tau <= w_t <= 1/tau, sum w = T."""
    w: torch.Tensor
    tau: float

    def __post_init__(self):
        self.w = torch.as_tensor(self.w)
        if not 0.0 < self.tau < 1.0:
            raise ValueError("tau must lie in (0, 1)")

    def validate(self, atol: float = 1e-9) -> None:
        T = self.w.shape[0]
        if (self.w < self.tau - atol).any() or (self.w > 1.0 / self.tau + atol).any():
            raise ValueError("weights violate the [tau, 1/tau] bounds")
        if abs(float(self.w.sum()) - T) > max(atol, 1e-9 * T):
            raise ValueError("weights do not sum to T")


def h_constraint(D: torch.Tensor, B: "torch.Tensor | None" = None) -> torch.Tensor:
    """trace(e^{D o D}) - d + sum(e^{D o D} o B).

    Zero iff D is acyclic and no bidirected edge connects a directed
    ancestor-descendant pair. Entries are squared elementwise before the
    exponential, a monotone reparameterization preserving the zero set.
    """
    D = torch.as_tensor(D)
    d = D.shape[0]
    if B is None:
        B = D.new_zeros(d, d)
    B = torch.as_tensor(B)
    if not torch.allclose(B, B.T, atol=1e-12):
        raise ValueError("bidirected matrix must be symmetric")
    E = matrix_exp(D * D)
    return torch.diagonal(E).sum() - d + (E * B).sum()


def resolve_weights(weights: "SampleWeights | None", T: int,
                    like: torch.Tensor) -> torch.Tensor:
    if weights is None:
        return like.new_ones(T)
    if weights.w.shape[0] != T:
        raise ValueError(f"weights length {weights.w.shape[0]} != T {T}")
    weights.validate()
    return weights.w.to(like.dtype)


def data_fit(scm: ScmModel, post: AdmgPosterior, x: torch.Tensor,
             weights: "SampleWeights | None" = None, n_mc: int = 2,
             temperature: float = 0.5,
             rng: "RandomSource | None" = None) -> torch.Tensor:
    """Monte Carlo estimate over relaxed graph samples of the (weighted) sum
    of per-timestep log-likelihoods. Deterministic given the rng seed."""
    rng = rng or RandomSource(0)
    w = resolve_weights(weights, x.shape[0], x)[scm.p:]
    total = x.new_zeros(())
    for _ in range(n_mc):
        M = post.sample_relaxed(temperature, rng)
        c, _ = scm.sample_confounders(x, rng)
        ll = scm.loglik_matrix(x, c, M).sum(dim=1)
        total = total + (w * ll).sum()
    return total / n_mc


def graph_penalty(post: AdmgPosterior, sched: ConstraintSchedule) -> torch.Tensor:
    """R_G on the edge-probability matrix P: negated sparsity + augmented
    Lagrangian terms on h(P), plus the Bernoulli entropy of the posterior."""
    P = post.edge_probs()
    D, B = split_blocks(P, post.d)
    h = h_constraint(D, B)
    # E||M||_F^2 = sum of edge probabilities for 0/1 edges
    frob = P.sum()
    live = post.mask > 0
    p = P[live].clamp(1e-12, 1.0 - 1e-12)
    entropy = -(p * torch.log(p) + (1 - p) * torch.log1p(-p)).sum()
    return -(sched.lam * frob + sched.rho * h * h + sched.alpha * h) + entropy


def confounder_kl(mu: torch.Tensor, sigma: torch.Tensor,
                  weights: "SampleWeights | None" = None) -> torch.Tensor:
    """sum_t w_t KL[q(c^t | x^t) || N(0, I)]; nonnegative, zero iff the
    posterior is the prior."""
    if (sigma <= 0).any():
        raise ValueError("sigma must be strictly positive")
    w = resolve_weights(weights, mu.shape[0], mu)
    per_t = 0.5 * (mu**2 + sigma**2 - 1.0 - 2.0 * torch.log(sigma)).sum(dim=1)
    return (w * per_t).sum()


def total_score(scm: ScmModel, post: AdmgPosterior, x: torch.Tensor,
                sched: ConstraintSchedule,
                weights: "SampleWeights | None" = None, n_mc: int = 2,
                temperature: float = 0.5,
                rng: "RandomSource | None" = None):
    """Assembles S_w = L_w + R_G + R_{C,w} (maximized). Returns the scalar
    tensor plus a detached ScoreBreakdown."""
    rng = rng or RandomSource(0)
    L = data_fit(scm, post, x, weights, n_mc, temperature, rng)
    RG = graph_penalty(post, sched)
    cpost = scm.encode_confounders(x)
    RC = -confounder_kl(cpost.mu, cpost.sigma, weights)
    total = L + RG + RC
    with torch.no_grad():
        h = h_constraint(*split_blocks(post.edge_probs(), post.d))
    breakdown = ScoreBreakdown(
        data_fit=float(L.detach()), graph_penalty=float(RG.detach()),
        confounder_kl=float(RC.detach()), h_value=float(h),
        total=float(total.detach()),
    )
    return total, breakdown
