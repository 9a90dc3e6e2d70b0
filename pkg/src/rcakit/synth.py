"""Synthetic benchmark generator: random ground-truth DAG, lagged SEM data
propagation, fault injection via edge-weight / noise-scale perturbation, and
confounder masking."""

import json
from dataclasses import dataclass, field

import numpy as np

from .localize import Alarm
from .panel import MetricPanel


@dataclass
class GroundTruth:
    full_adj: np.ndarray          # weighted DAG over all d_full nodes
    self_coeffs: np.ndarray       # AR(1) self terms (not graph edges)
    masked: "list[int]"           # node ids removed from observation
    observed: "list[int]"         # original ids of the observed nodes
    names: "list[str]"            # observed node names
    D: np.ndarray                 # induced binary directed adj over observed
    B: np.ndarray                 # bidirected pairs sharing a masked parent
    fault_windows: "list[dict]" = field(default_factory=list)

    def to_dict(self):
        return {
            "full_adj": self.full_adj.tolist(),
            "self_coeffs": self.self_coeffs.tolist(),
            "masked": list(self.masked),
            "observed": list(self.observed),
            "names": list(self.names),
            "D": self.D.tolist(),
            "B": self.B.tolist(),
            "fault_windows": self.fault_windows,
        }

    @classmethod
    def from_dict(cls, doc):
        return cls(
            full_adj=np.array(doc["full_adj"]),
            self_coeffs=np.array(doc["self_coeffs"]),
            masked=list(doc["masked"]),
            observed=list(doc["observed"]),
            names=list(doc["names"]),
            D=np.array(doc["D"]),
            B=np.array(doc["B"]),
            fault_windows=list(doc["fault_windows"]),
        )


def save_ground_truth(truth: GroundTruth, path) -> None:
    with open(path, "w") as fh:
        json.dump(truth.to_dict(), fh)


def load_ground_truth(path) -> GroundTruth:
    with open(path) as fh:
        return GroundTruth.from_dict(json.load(fh))


def save_alarms(alarms, path) -> None:
    with open(path, "w") as fh:
        json.dump([{"frontend_node": a.frontend_node, "t": a.t} for a in alarms], fh)


def load_alarms(path):
    with open(path) as fh:
        return [Alarm(frontend_node=rec["frontend_node"], t=rec["t"])
                for rec in json.load(fh)]


def sample_dag(d_full: int, expected_degree: float,
               weight_range=(-2.0, 2.0),
               rng: "np.random.Generator | None" = None) -> np.ndarray:
    """Erdos-Renyi DAG over a random topological order; weights uniform in
    weight_range with the near-zero band (-0.3, 0.3) excluded."""
    if d_full < 2:
        raise ValueError("need at least 2 nodes")
    lo, hi = weight_range
    if hi <= 0.3 or lo >= -0.3:
        raise ValueError("weight_range must extend beyond the (-0.3, 0.3) band")
    rng = rng or np.random.default_rng(0)
    order = rng.permutation(d_full)
    q = min(1.0, expected_degree / max(d_full - 1, 1))
    W = np.zeros((d_full, d_full))
    for a in range(d_full):
        for b in range(a + 1, d_full):
            if rng.random() < q:
                w = rng.uniform(lo, hi)
                while -0.3 < w < 0.3:
                    w = rng.uniform(lo, hi)
                W[order[a], order[b]] = w
    return W


def _stabilize(W: np.ndarray, self_coeffs: np.ndarray, limit: float = 0.95):
    A = W + np.diag(self_coeffs)
    radius = max(np.abs(np.linalg.eigvals(A))) if A.any() else 0.0
    if radius > limit:
        factor = limit / radius
        return W * factor, self_coeffs * factor
    return W, self_coeffs


def _propagate(W_per_t, self_coeffs, noise, nonlinear: bool,
               x0: "np.ndarray | None" = None,
               start: int = 0) -> np.ndarray:
    """Lag-1 SEM rollout x^t = W_t^T phi(x^{t-1}) + s o x^{t-1} + u^t,
    recomputed from ``start`` with earlier rows taken from ``x0``."""
    T = noise.shape[0]
    x = np.zeros_like(noise)
    phi = np.tanh if nonlinear else (lambda v: v)
    if start == 0:
        x[0] = noise[0]
        begin = 1
    else:
        x[:start] = x0[:start]
        begin = start
    for t in range(begin, T):
        prev = x[t - 1]
        x[t] = W_per_t(t).T @ phi(prev) + self_coeffs * prev + noise[t]
    return x


def generate_panel(W: np.ndarray, T: int, noise_scale: float = 1.0,
                   rng: "np.random.Generator | None" = None,
                   self_coeffs: "np.ndarray | None" = None,
                   nonlinear: bool = False) -> np.ndarray:
    """Propagate the lag-1 SEM for T steps. Rescales the weighted graph if
    its spectral radius would make the process explosive."""
    if T < 2:
        raise ValueError("T must exceed the lag")
    rng = rng or np.random.default_rng(0)
    d = W.shape[0]
    if self_coeffs is None:
        self_coeffs = np.zeros(d)
    W, self_coeffs = _stabilize(W, self_coeffs)
    noise = rng.normal(0.0, noise_scale, size=(T, d))
    return _propagate(lambda t: W, self_coeffs, noise, nonlinear)


def recover_noise(panel: np.ndarray, W: np.ndarray, self_coeffs: np.ndarray,
                  nonlinear: bool = False) -> np.ndarray:
    """Invert the additive SEM to get the exogenous noise that produced the
    panel under (W, self_coeffs)."""
    phi = np.tanh if nonlinear else (lambda v: v)
    noise = panel.copy()
    noise[1:] -= phi(panel[:-1]) @ W + panel[:-1] * self_coeffs
    return noise


def inject_faults(panel: np.ndarray, W: np.ndarray, windows,
                  mechanism: str = "mixed",
                  rng: "np.random.Generator | None" = None,
                  self_coeffs: "np.ndarray | None" = None,
                  candidates: "list[int] | None" = None,
                  nonlinear: bool = False):
    """Perturb the panel inside disjoint fault windows.

    Per window either selected incoming edge weights are scaled by a factor
    in [2, 5] (or sign-flipped) or a node's noise scale is multiplied by a
    factor in [3, 10]. Downstream values are re-propagated from the first
    window start. Returns (mutated panel, labels), labels being a list of
    {"start", "end", "mechanism", "roots"} records.
    """
    if not windows:
        return panel.copy(), []
    rng = rng or np.random.default_rng(0)
    d = W.shape[0]
    if self_coeffs is None:
        self_coeffs = np.zeros(d)
    W, self_coeffs = _stabilize(W, self_coeffs)
    windows = sorted((int(s), int(e)) for s, e in windows)
    for (s1, e1), (s2, e2) in zip(windows, windows[1:]):
        if s2 < e1:
            raise ValueError(f"overlapping fault windows ({s1},{e1}) and ({s2},{e2})")
    if windows[0][0] < 1 or windows[-1][1] > panel.shape[0]:
        raise ValueError("fault windows must lie within [lag, T)")
    if candidates is None:
        candidates = list(range(d))

    noise = recover_noise(panel, W, self_coeffs, nonlinear)
    labels = []
    W_sched = {}
    for start, end in windows:
        mech = mechanism
        if mechanism == "mixed":
            mech = "edge" if rng.random() < 0.5 else "noise"
        if mech == "edge":
            with_parents = [j for j in candidates if W[:, j].any()]
            if not with_parents:
                mech = "noise"
        if mech == "edge":
            j = int(rng.choice(with_parents))
            i = int(rng.choice(np.flatnonzero(W[:, j])))
            W_mod = W.copy()
            factor = rng.uniform(2.0, 5.0) * (1 if rng.random() < 0.5 else -1)
            W_mod[i, j] *= factor
            for t in range(start, end):
                W_sched[t] = W_mod
        else:
            j = int(rng.choice(candidates))
            factor = rng.uniform(3.0, 10.0)
            noise[start:end, j] *= factor
        labels.append({"start": start, "end": end, "mechanism": mech,
                       "roots": [j]})

    first = windows[0][0]
    out = _propagate(lambda t: W_sched.get(t, W), self_coeffs, noise,
                     nonlinear, x0=panel, start=first)
    return out, labels


def mask_confounders(panel: np.ndarray, W: np.ndarray, k: int,
                     rng: "np.random.Generator | None" = None,
                     self_coeffs: "np.ndarray | None" = None,
                     names: "list[str] | None" = None,
                     masked: "list[int] | None" = None):
    """Drop k nodes with >= 2 children from observation.

    Returns (MetricPanel over observed nodes, GroundTruth) where B marks
    every observed pair sharing a masked parent and D is the induced binary
    subgraph over observed nodes.
    """
    rng = rng or np.random.default_rng(0)
    d_full = W.shape[0]
    if self_coeffs is None:
        self_coeffs = np.zeros(d_full)
    if names is None:
        names = [f"x{i}" for i in range(d_full)]
    if masked is None:
        eligible = [i for i in range(d_full) if (W[i] != 0).sum() >= 2]
        if len(eligible) < k:
            raise ValueError(
                f"only {len(eligible)} nodes have >= 2 children, cannot mask {k}"
            )
        masked = sorted(int(i) for i in rng.choice(eligible, size=k, replace=False))
    observed = [i for i in range(d_full) if i not in set(masked)]
    d = len(observed)
    D = (W[np.ix_(observed, observed)] != 0).astype(float)
    B = np.zeros((d, d))
    for m in masked:
        children = [observed.index(j) for j in np.flatnonzero(W[m]) if j in observed]
        for a in children:
            for b in children:
                if a != b:
                    B[a, b] = 1.0
    truth = GroundTruth(
        full_adj=W, self_coeffs=self_coeffs, masked=list(masked),
        observed=observed, names=[names[i] for i in observed], D=D, B=B,
    )
    obs_panel = MetricPanel(values=panel[:, observed], names=truth.names)
    return obs_panel, truth


def _descendants(D: np.ndarray, root: int) -> "list[int]":
    seen, stack = set(), [root]
    while stack:
        node = stack.pop()
        for child in np.flatnonzero(D[node]):
            if child not in seen:
                seen.add(int(child))
                stack.append(int(child))
    return sorted(seen)


@dataclass
class Bundle:
    panel: MetricPanel
    truth: GroundTruth
    alarms: "list[Alarm]"


def make_benchmark(d_full: int = 24, k_mask: int = 4, T: int = 1000,
                   expected_degree: float = 3.0, noise_scale: float = 1.0,
                   conf_ar: float = 0.8, n_windows: int = 5,
                   fault_fraction: float = 0.10, mechanism: str = "mixed",
                   alarms_per_window: int = 2, nonlinear: bool = False,
                   seed: int = 0) -> Bundle:
    """Default experiment protocol: sample a DAG, mark k nodes (with >= 2
    children) as future confounders and give them AR(1) self terms, roll out
    the SEM, inject faults on the to-be-observed nodes, then mask."""
    rng = np.random.default_rng(seed)
    for _ in range(64):
        W = sample_dag(d_full, expected_degree, rng=rng)
        eligible = [i for i in range(d_full) if (W[i] != 0).sum() >= 2]
        if len(eligible) >= k_mask:
            break
    else:
        raise ValueError("could not sample a DAG with enough confounder candidates")
    masked = sorted(int(i) for i in rng.choice(eligible, size=k_mask, replace=False)) \
        if k_mask else []
    self_coeffs = np.zeros(d_full)
    self_coeffs[masked] = conf_ar
    W, self_coeffs = _stabilize(W, self_coeffs)
    panel = generate_panel(W, T, noise_scale, rng, self_coeffs, nonlinear)

    observed = [i for i in range(d_full) if i not in set(masked)]
    windows = []
    if n_windows > 0 and fault_fraction > 0:
        width = max(2, int(round(T * fault_fraction / n_windows)))
        slot = T // (n_windows + 1)
        for w in range(n_windows):
            start = (w + 1) * slot - width // 2
            windows.append((max(1, start), min(T, max(1, start) + width)))
    panel, labels = inject_faults(panel, W, windows, mechanism, rng,
                                  self_coeffs, candidates=observed,
                                  nonlinear=nonlinear)

    obs_panel, truth = mask_confounders(panel, W, k_mask, rng, self_coeffs,
                                        masked=masked)
    col = {orig: idx for idx, orig in enumerate(observed)}
    for rec in labels:
        rec["roots"] = [col[j] for j in rec["roots"]]
    truth.fault_windows = labels

    alarms = []
    for rec in labels:
        root = rec["roots"][0]
        pool = _descendants(truth.D, root) or [root]
        for _ in range(alarms_per_window):
            frontend = int(rng.choice(pool))
            lo = min(rec["start"] + 3, rec["end"] - 1)
            t = int(rng.integers(lo, rec["end"]))
            alarms.append(Alarm(frontend_node=frontend, t=t))
    return Bundle(panel=obs_panel, truth=truth, alarms=alarms)
