"""Deconfounded root cause localization: restarted random walk on the
transposed directed graph, node-level anomaly degrees from per-timestep log
densities, and the combined candidate score."""

import json
from dataclasses import dataclass, field

import numpy as np


@dataclass
class Alarm:
    frontend_node: int
    t: int


@dataclass
class RcaReport:
    zeta: np.ndarray
    eta: np.ndarray
    s: np.ndarray
    ranking: "list[int]"
    frontend_node: int
    t: int
    phi: float
    psi: float
    n_rw: int
    k: int
    names: "list[str]" = field(default_factory=list)

    def top_k(self) -> "list[int]":
        return self.ranking[: self.k]

    def to_dict(self):
        return {
            "frontend_node": self.frontend_node, "t": self.t,
            "phi": self.phi, "psi": self.psi, "n_rw": self.n_rw, "k": self.k,
            "names": list(self.names),
            "zeta": self.zeta.tolist(), "eta": self.eta.tolist(),
            "s": self.s.tolist(), "ranking": list(self.ranking),
        }


def transition_matrix(D: np.ndarray, phi: float) -> np.ndarray:
    """Row-normalized transposed adjacency scaled by the non-restart mass.

    Rows of H sum to (1 - phi) where D^T has outgoing mass; the remaining
    mass of every row (all of it for dangling rows) restarts at the alarm's
    front-end node.
    """
    if not 0.0 <= phi <= 1.0:
        raise ValueError("phi must lie in [0, 1]")
    if (D < 0).any():
        raise ValueError("adjacency entries must be nonnegative")
    Dt = D.T.astype(float)
    sums = Dt.sum(axis=1, keepdims=True)
    H = np.zeros_like(Dt)
    live = sums[:, 0] > 0
    H[live] = (1.0 - phi) * Dt[live] / sums[live]
    return H


def random_walk(H: np.ndarray, frontend: int, n_rw: int,
                rng: np.random.Generator) -> np.ndarray:
    """Simulate one walker for n_rw steps; restart events teleport to the
    front-end node. Returns visitation counts with sum(zeta) == n_rw."""
    d = H.shape[0]
    if not 0 <= frontend < d:
        raise IndexError(f"frontend {frontend} out of range for {d} nodes")
    if n_rw < 1:
        raise ValueError("n_rw must be >= 1")
    cum = np.cumsum(H, axis=1)
    move_mass = cum[:, -1].copy()
    zeta = np.zeros(d, dtype=np.int64)
    node = frontend
    draws = rng.random(n_rw)
    for u in draws:
        if u >= move_mass[node]:
            node = frontend
        else:
            node = int(np.searchsorted(cum[node], u, side="right"))
        zeta[node] += 1
    return zeta


def expected_visitation(H: np.ndarray, frontend: int, n_rw: int) -> np.ndarray:
    """Power-iteration expectation of zeta / n_rw for the restart-augmented
    transition operator; the independent check for the sampled walk."""
    d = H.shape[0]
    P = H.copy()
    P[:, frontend] += 1.0 - H.sum(axis=1)
    dist = np.zeros(d)
    dist[frontend] = 1.0
    acc = np.zeros(d)
    for _ in range(n_rw):
        dist = dist @ P
        acc += dist
    return acc / n_rw


def anomaly_rank(loglik: np.ndarray, t: int) -> np.ndarray:
    """eta_i = fraction of other timesteps reconstructed better than t
    (ties count half); 1 means worst reconstruction on record."""
    d, T = loglik.shape
    if T < 2:
        raise ValueError("need at least 2 timesteps to rank")
    if not 0 <= t < T:
        raise IndexError(f"t={t} out of range")
    ref = loglik[:, t][:, None]
    others = np.delete(loglik, t, axis=1)
    better = (others > ref).sum(axis=1) + 0.5 * (others == ref).sum(axis=1)
    return better / (T - 1)


def root_cause_scores(zeta: np.ndarray, eta: np.ndarray, psi: float):
    """s_i = psi * zeta_i / max(zeta) + (1 - psi) * eta_i, with a stable
    descending sort (node id breaks ties)."""
    if not 0.0 <= psi <= 1.0:
        raise ValueError("psi must lie in [0, 1]")
    zbar = zeta / zeta.max() if zeta.max() > 0 else np.zeros_like(zeta, dtype=float)
    s = psi * zbar + (1.0 - psi) * eta
    ranking = sorted(range(len(s)), key=lambda i: (-s[i], i))
    return s, ranking


def localize_alarm(D: np.ndarray, loglik: np.ndarray, alarm: Alarm,
                   rng: np.random.Generator, phi: float = 0.15,
                   psi: float = 0.5, n_rw: int = 100_000, k: int = 5,
                   names: "list[str] | None" = None) -> RcaReport:
    """Full localization for one alarm against a frozen model's directed
    graph (bidirected edges never enter the walk) and per-node log densities
    (d x T, T indexed like the alarm timestep)."""
    d = D.shape[0]
    if not 0 <= alarm.frontend_node < d:
        raise IndexError(f"frontend {alarm.frontend_node} out of range")
    if not 0 <= alarm.t < loglik.shape[1]:
        raise IndexError(f"alarm timestep {alarm.t} outside panel")
    H = transition_matrix(D, phi)
    zeta = random_walk(H, alarm.frontend_node, n_rw, rng)
    eta = anomaly_rank(loglik, alarm.t)
    s, ranking = root_cause_scores(zeta, eta, psi)
    return RcaReport(
        zeta=zeta, eta=eta, s=s, ranking=ranking,
        frontend_node=alarm.frontend_node, t=alarm.t,
        phi=phi, psi=psi, n_rw=n_rw, k=k,
        names=list(names) if names else [f"x{i}" for i in range(d)],
    )


def save_report(report: RcaReport, path) -> None:
    with open(path, "w") as fh:
        json.dump(report.to_dict(), fh)


def write_ranking_csv(report: RcaReport, path) -> None:
    """Flat ranking file (rank, node, name, s, zeta_bar, eta) for the
    evaluation harness."""
    zmax = report.zeta.max()
    with open(path, "w") as fh:
        fh.write("rank,node,name,s,zeta_bar,eta\n")
        for rank, node in enumerate(report.ranking, start=1):
            zbar = report.zeta[node] / zmax if zmax > 0 else 0.0
            fh.write(f"{rank},{node},{report.names[node]},"
                     f"{report.s[node]!r},{zbar!r},{report.eta[node]!r}\n")
