"""Differentiable numeric substrate: seeded randomness, small MLPs with exact
reverse-mode gradients, the dense matrix exponential, and the relaxed
Bernoulli (Gumbel-sigmoid) sampler used for discrete edge expectations."""

import hashlib

import numpy as np
import torch


class RandomSource:
    """Single seeded source all randomness flows through.

    Identical seed => identical stream. ``fork(tag)`` derives an independent
    child stream deterministically from the seed and a string tag, so module
    boundaries do not have to share generator state.
    """

    def __init__(self, seed: int):
        self.seed = int(seed)
        self.torch_gen = torch.Generator()
        self.torch_gen.manual_seed(self.seed)
        self.np_gen = np.random.default_rng(self.seed)

    def fork(self, tag: str) -> "RandomSource":
        digest = hashlib.blake2b(
            f"{self.seed}:{tag}".encode(), digest_size=8
        ).digest()
        return RandomSource(int.from_bytes(digest, "big") % (2**63))


def matrix_exp(A: torch.Tensor) -> torch.Tensor:
    """Dense e^A via scaling-and-squaring (differentiable).

    Raises ValueError on non-square input and FloatingPointError if the
    result overflows, reporting the operand norm for diagnosis.
    """
    if A.dim() != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"matrix_exp needs a square matrix, got {tuple(A.shape)}")
    if not torch.isfinite(A).all():
        raise ValueError("matrix_exp input contains non-finite entries")
    E = torch.linalg.matrix_exp(A)
    if not torch.isfinite(E).all():
        raise FloatingPointError(
            f"matrix_exp overflow: input 1-norm {torch.linalg.matrix_norm(A, ord=1).item():.3e}"
        )
    return E


_ACTIVATIONS = {
    "leaky_relu": lambda x: torch.nn.functional.leaky_relu(x, negative_slope=0.01),
    "tanh": torch.tanh,
    "identity": lambda x: x,
}


class FeedForwardNet(torch.nn.Module):
    """Plain MLP with a named hidden nonlinearity (leaky rectifier, slope 0.01
    by default) and a linear output layer."""

    def __init__(self, sizes, activation: str = "leaky_relu",
                 rng: "RandomSource | None" = None):
        super().__init__()
        if len(sizes) < 2:
            raise ValueError("need at least input and output sizes")
        if activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        self.sizes = list(sizes)
        self.activation = activation
        self.layers = torch.nn.ModuleList(
            torch.nn.Linear(sizes[i], sizes[i + 1]) for i in range(len(sizes) - 1)
        )
        if rng is not None:
            self.reset_parameters(rng)

    def reset_parameters(self, rng: RandomSource) -> None:
        gen = rng.torch_gen
        for layer in self.layers:
            bound = 1.0 / np.sqrt(layer.in_features)
            with torch.no_grad():
                layer.weight.uniform_(-bound, bound, generator=gen)
                layer.bias.uniform_(-bound, bound, generator=gen)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        act = _ACTIVATIONS[self.activation]
        h = x
        for layer in self.layers[:-1]:
            h = act(layer(h))
        return self.layers[-1](h)


def net_forward(net: FeedForwardNet, x: torch.Tensor) -> torch.Tensor:
    if x.shape[-1] != net.sizes[0]:
        raise ValueError(
            f"input size {x.shape[-1]} != first layer size {net.sizes[0]}"
        )
    return net(x)


def net_backward(net: FeedForwardNet, x: torch.Tensor,
                 upstream: torch.Tensor):
    """Exact reverse-mode gradients of ``sum(net(x) * upstream)``.

    Returns (parameter gradients keyed by name, gradient w.r.t. the input).
    """
    x = x.detach().requires_grad_(True)
    out = net_forward(net, x)
    if upstream.shape != out.shape:
        raise ValueError("upstream gradient shape mismatch")
    params = dict(net.named_parameters())
    grads = torch.autograd.grad((out * upstream).sum(), [x] + list(params.values()))
    return dict(zip(params.keys(), grads[1:])), grads[0]


def logistic_noise(shape, gen: torch.Generator) -> torch.Tensor:
    """Standard logistic draws = difference of two Gumbels."""
    u = torch.rand(shape, generator=gen)
    u = u.clamp(1e-12, 1.0 - 1e-12)
    return torch.log(u) - torch.log1p(-u)

def relaxed_bernoulli_sample(logit, temperature: float,
                             rng: RandomSource) -> torch.Tensor:
    """Gumbel-sigmoid relaxation of Bern(sigmoid(logit)).

    Differentiable in ``logit``; the sample mean approaches sigmoid(logit)
    as temperature -> 0.
    """
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    logit = torch.as_tensor(logit)
    noise = logistic_noise(logit.shape, rng.torch_gen)
    return torch.sigmoid((logit + noise) / temperature)
