"""Magnified structural causal model: edge posterior over the (d+r)x(d+r)
mixed graph, confounder posterior encoder, and the shared structural causal
networks producing per-node per-timestep predictive log densities."""

import json
import math
from dataclasses import dataclass

import numpy as np
import torch

from .numerics import FeedForwardNet, RandomSource, logistic_noise

_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


def structural_mask(d: int, r: int) -> torch.Tensor:
    """1 where an edge parameter is live, 0 where permanently masked.

    Observed block: all off-diagonal entries. Latent rows may only point at
    observed columns; latents never receive edges.
    """
    n = d + r
    mask = torch.zeros(n, n)
    mask[:d, :d] = 1.0 - torch.eye(d)
    mask[d:, :d] = 1.0
    return mask


class AdmgPosterior(torch.nn.Module):
    """Edge-existence (gamma) and edge-direction (theta) logits over the
    magnified graph. Direction is antisymmetric by construction:
    theta[i, j] = -theta[j, i]."""

    def __init__(self, d: int, r: int, init_edge_prob: float = 0.1,
                 rng: "RandomSource | None" = None):
        super().__init__()
        if not 0.0 < init_edge_prob < 0.5:
            raise ValueError("init_edge_prob must be in (0, 0.5)")
        self.d = d
        self.r = r
        n = d + r
        # sigmoid(theta) starts at 0.5, so gamma carries the initial probability
        gamma0 = math.log(2 * init_edge_prob / (1 - 2 * init_edge_prob))
        self.gamma = torch.nn.Parameter(torch.full((n, n), gamma0))
        theta0 = torch.zeros(n, n)
        if rng is not None:
            theta0 = 0.01 * torch.randn(n, n, generator=rng.torch_gen)
        self.theta_raw = torch.nn.Parameter(theta0)
        self.register_buffer("mask", structural_mask(d, r))

    @property
    def theta(self) -> torch.Tensor:
        return self.theta_raw - self.theta_raw.T

    def edge_probs(self) -> torch.Tensor:
        """(d+r)x(d+r) matrix of edge probabilities; masked entries are 0
        with zero gradient."""
        return torch.sigmoid(self.gamma) * torch.sigmoid(self.theta) * self.mask

    def sample_relaxed(self, temperature: float, rng: RandomSource,
                       hard: bool = False) -> torch.Tensor:
        """Gumbel-sigmoid relaxed draw of the binary adjacency M.

        With ``hard``, straight-through: forward pass is the 0/1 threshold,
        backward pass uses the relaxed sample.
        """
        if temperature <= 0:
            raise ValueError("temperature must be positive")
        p = self.edge_probs().clamp(1e-12, 1.0 - 1e-12)
        logit = torch.log(p) - torch.log1p(-p)
        noise = logistic_noise(logit.shape, rng.torch_gen)
        soft = torch.sigmoid((logit + noise) / temperature) * self.mask
        if hard:
            return (soft > 0.5).to(soft.dtype) + soft - soft.detach()
        return soft


def edge_probability(post: AdmgPosterior, i: int, j: int) -> float:
    n = post.d + post.r
    if not (0 <= i < n and 0 <= j < n):
        raise IndexError(f"edge ({i}, {j}) out of range for {n} nodes")
    return float(post.edge_probs()[i, j].detach())


@dataclass
class ConfounderPosterior:
    mu: torch.Tensor      # (T, r)
    sigma: torch.Tensor   # (T, r), strictly positive


@dataclass
class MixedGraph:
    """Directed adjacency over observed nodes plus the symmetric bidirected
    matrix induced by latent common parents."""
    D: np.ndarray
    B: np.ndarray


class ScmModel(torch.nn.Module):
    """Shared structural causal networks and node embeddings.

    One g network lifts each variable's p-lag history, f_obs / f_conf
    aggregate parent contributions into the target's predictive mean, and
    f_gauss encodes the confounder posterior from the current observation.
    """

    def __init__(self, d: int, r: int, p: int = 3, embed: int = 8,
                 hidden: int = 16, gdim: int = 8,
                 rng: "RandomSource | None" = None):
        super().__init__()
        self.d, self.r, self.p = d, r, p
        self.embed, self.hidden, self.gdim = embed, hidden, gdim
        rng = rng or RandomSource(0)
        self.g = FeedForwardNet([embed + p, hidden, gdim], rng=rng.fork("g"))
        self.f_obs = FeedForwardNet([embed + gdim, hidden, 1], rng=rng.fork("f_obs"))
        self.f_conf = FeedForwardNet([embed + gdim, hidden, 1], rng=rng.fork("f_conf"))
        self.f_gauss = (
            FeedForwardNet([d, hidden, 2 * r], rng=rng.fork("f_gauss"))
            if r > 0 else None
        )
        self.z = torch.nn.Parameter(
            0.1 * torch.randn(d + r, embed, generator=rng.fork("z").torch_gen)
        )
        self.log_noise_scale = torch.nn.Parameter(torch.zeros(d))

    # -- confounder posterior ------------------------------------------------

    def encode_confounders(self, x: torch.Tensor) -> ConfounderPosterior:
        """q(c^t | x^t) per timestep; sigma through softplus so it stays
        strictly positive."""
        if not torch.isfinite(x).all():
            raise ValueError("non-finite observation passed to encoder")
        if self.r == 0:
            shape = x.shape[:-1] + (0,)
            return ConfounderPosterior(x.new_zeros(shape), x.new_ones(shape))
        out = self.f_gauss(x)
        mu, raw = out[..., : self.r], out[..., self.r:]
        return ConfounderPosterior(mu, torch.nn.functional.softplus(raw))

    def sample_confounders(self, x: torch.Tensor,
                           rng: RandomSource) -> "tuple[torch.Tensor, ConfounderPosterior]":
        """Reparameterized draw c = mu + sigma * eps, eps ~ N(0, 1)."""
        post = self.encode_confounders(x)
        eps = torch.randn(post.mu.shape, generator=rng.torch_gen)
        return post.mu + post.sigma * eps, post

    # -- structural causal networks ------------------------------------------

    def _lift(self, series: torch.Tensor, z: torch.Tensor) -> torch.Tensor:
        """series (T, k) -> g outputs (T - p, k, gdim) from p-lag windows."""
        T, k = series.shape
        if k == 0:
            return series.new_zeros(T - self.p, 0, self.gdim)
        lags = torch.stack([series[l: T - self.p + l] for l in range(self.p)], dim=-1)
        feats = torch.cat([z.expand(T - self.p, k, self.embed), lags], dim=-1)
        return self.g(feats)

    def predict_means(self, x: torch.Tensor, c: torch.Tensor,
                      M: torch.Tensor) -> torch.Tensor:
        """Predictive means for every node at every t in [p, T).

        x: (T, d) observed panel, c: (T, r) confounder series,
        M: (d+r)x(d+r) soft or binary adjacency. Returns (T - p, d).
        """
        d, r, p = self.d, self.r, self.p
        if x.shape[0] <= p:
            raise ValueError(f"need more than p={p} timesteps")
        if x.shape[1] != d or c.shape[1] != r:
            raise ValueError("panel width mismatch")
        Tp = x.shape[0] - p
        g_obs = self._lift(x, self.z[:d].unsqueeze(0))
        agg_obs = torch.einsum("tim,ij->tjm", g_obs, M[:d, :d])
        if r > 0:
            g_conf = self._lift(c, self.z[d:].unsqueeze(0))
            agg_conf = torch.einsum("tkm,kj->tjm", g_conf, M[d:, :d])
        else:
            agg_conf = x.new_zeros(Tp, d, self.gdim)
        z_obs = self.z[:d].expand(Tp, d, self.embed)
        mean = self.f_obs(torch.cat([z_obs, agg_obs], dim=-1))
        mean = mean + self.f_conf(torch.cat([z_obs, agg_conf], dim=-1))
        return mean.squeeze(-1)

    def scn_predict(self, x_history: torch.Tensor, c_history: torch.Tensor,
                    M: torch.Tensor) -> torch.Tensor:
        """Single-step form: p x d observed window, p x r confounder window."""
        if x_history.shape[0] != self.p:
            raise ValueError(f"history window must have length p={self.p}")
        x = torch.cat([x_history, x_history.new_zeros(1, self.d)])
        c = torch.cat([c_history, c_history.new_zeros(1, self.r)])
        return self.predict_means(x, c, M)[0]

    def loglik_matrix(self, x: torch.Tensor, c: torch.Tensor,
                      M: torch.Tensor) -> torch.Tensor:
        """Per-node Gaussian log densities, shape (T - p, d); row t holds
        log p(x^{t+p} | history)."""
        mean = self.predict_means(x, c, M)
        scale = torch.exp(self.log_noise_scale)
        resid = (x[self.p:] - mean) / scale
        return -_HALF_LOG_2PI - self.log_noise_scale - 0.5 * resid**2


def log_likelihood(scm: ScmModel, x: torch.Tensor, c: torch.Tensor,
                   M: torch.Tensor, t: int) -> torch.Tensor:
    """d-vector of per-node log densities of x^t given its history. The terms
    sum to the joint conditional log-likelihood (causal Markov factorization)."""
    if t < scm.p:
        raise ValueError(f"t={t} has no full history window (p={scm.p})")
    return scm.loglik_matrix(x, c, M)[t - scm.p]


def split_blocks(P: torch.Tensor, d: int):
    """Differentiable decomposition of the magnified probability matrix into
    the observed directed block D and the induced bidirected matrix B, where
    B[i, j] = max over latents k of min(P[k->i], P[k->j])."""
    D = P[:d, :d]
    r = P.shape[0] - d
    if r == 0:
        return D, P.new_zeros(d, d)
    L = P[d:, :d]
    pairmin = torch.minimum(L.unsqueeze(2), L.unsqueeze(1))
    B = pairmin.amax(dim=0) * (1.0 - torch.eye(d, dtype=P.dtype))
    return D, B


def decompose(post: AdmgPosterior, threshold: float = 0.5,
              binarize: bool = False) -> MixedGraph:
    if not 0.0 < threshold < 1.0:
        raise ValueError("threshold must lie in (0, 1)")
    with torch.no_grad():
        D, B = split_blocks(post.edge_probs(), post.d)
    D, B = D.numpy().copy(), B.numpy().copy()
    if binarize:
        D = (D > threshold).astype(float)
        B = (B > threshold).astype(float)
    return MixedGraph(D=D, B=B)


# -- checkpointing -------------------------------------------------------------


def save_checkpoint(path, post: AdmgPosterior, scm: ScmModel,
                    config_fingerprint: str = "") -> None:
    doc = {
        "format": "rcakit-checkpoint-v1",
        "d": scm.d, "r": scm.r, "p": scm.p,
        "embed": scm.embed, "hidden": scm.hidden, "gdim": scm.gdim,
        "config_fingerprint": config_fingerprint,
        "posterior": {k: v.tolist() for k, v in post.state_dict().items()},
        "scm": {k: v.tolist() for k, v in scm.state_dict().items()},
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_checkpoint(path):
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format") != "rcakit-checkpoint-v1":
        raise ValueError(f"unrecognized checkpoint format in {path}")
    post = AdmgPosterior(doc["d"], doc["r"])
    post.load_state_dict({k: torch.tensor(v) for k, v in doc["posterior"].items()})
    scm = ScmModel(doc["d"], doc["r"], p=doc["p"], embed=doc["embed"],
                   hidden=doc["hidden"], gdim=doc["gdim"])
    scm.load_state_dict({k: torch.tensor(v) for k, v in doc["scm"].items()})
    return post, scm, doc
