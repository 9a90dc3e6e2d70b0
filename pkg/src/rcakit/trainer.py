"""Training loop: outer maximization of the reweighted score over the model
parameters under an augmented Lagrangian schedule, with inner scheduling
rounds after the warm-up phase."""

import json
import math
import time
from dataclasses import dataclass, field, asdict

import torch

from .model import AdmgPosterior, ScmModel, split_blocks
from .numerics import RandomSource
from .panel import MetricPanel
from .scheduler import SchedulerParams, current_weights, inner_optimize, make_scheduler
from .score import (ConstraintSchedule, SampleWeights, ScoreBreakdown,
                    confounder_kl, h_constraint, total_score)


@dataclass
class TrainConfig:
    L_outer: int = 5
    steps_per_round: int = 500
    L_inner: int = 20
    l_scheduling: int = 2
    lam: float = 5.0
    tau: float = 0.1
    lr_model: float = 1e-2
    lr_scheduler: float = 1e-3
    rho_init: float = 1.0
    alpha_init: float = 0.0
    rho_multiplier: float = 10.0
    h_progress_ratio: float = 0.25
    h_tolerance: float = 1e-8
    n_mc: int = 2
    p: int = 3
    r: int = 4
    embed: int = 8
    hidden: int = 16
    gdim: int = 8
    init_edge_prob: float = 0.1
    temperature_start: float = 1.0
    temperature_end: float = 0.2
    disable_scheduling: bool = False
    seed: int = 0

    def __post_init__(self):
        if min(self.L_outer, self.steps_per_round, self.L_inner, self.n_mc,
               self.p) < 1:
            raise ValueError("counts must be >= 1")
        if self.lr_model <= 0 or self.lr_scheduler <= 0 or self.h_tolerance <= 0:
            raise ValueError("rates and h_tolerance must be positive")


@dataclass
class TrainReport:
    posterior: AdmgPosterior
    scm: ScmModel
    scheduler: SchedulerParams
    weights: SampleWeights
    history: "list[dict]" = field(default_factory=list)
    converged: bool = False
    h_final: float = 0.0
    rounds_run: int = 0
    wall_time: float = 0.0


def lagrangian_update(sched: ConstraintSchedule, h_now: float,
                      h_prev: float, multiplier: float = 10.0,
                      progress_ratio: float = 0.25,
                      rho_cap: float = 1e16) -> ConstraintSchedule:
    """alpha <- alpha + rho * h; rho escalates when h stalls relative to the
    previous round, capped at 1e16."""
    if h_now < 0 or h_prev < 0:
        raise ValueError("constraint values must be nonnegative")
    alpha = sched.alpha + sched.rho * h_now
    rho = sched.rho
    if h_now > progress_ratio * h_prev:
        rho = min(rho * multiplier, rho_cap)
    return ConstraintSchedule(lam=sched.lam, rho=rho, alpha=alpha)


def _current_h(post: AdmgPosterior) -> float:
    with torch.no_grad():
        return float(h_constraint(*split_blocks(post.edge_probs(), post.d)))


def _frozen_per_step_scores(scm: ScmModel, post: AdmgPosterior,
                            x: torch.Tensor) -> torch.Tensor:
    """Per-timestep score contributions (log-likelihood minus confounder KL)
    with the model frozen, evaluated on the expected graph and the posterior
    mean confounder path."""
    with torch.no_grad():
        cpost = scm.encode_confounders(x)
        ll = scm.loglik_matrix(x, cpost.mu, post.edge_probs()).sum(dim=1)
        kl = 0.5 * (cpost.mu**2 + cpost.sigma**2 - 1.0
                    - 2.0 * torch.log(cpost.sigma)).sum(dim=1)
        scores = -kl
        scores[scm.p:] = scores[scm.p:] + ll
    return scores


def fit(panel: MetricPanel, config: TrainConfig,
        log_path=None) -> TrainReport:
    """Executes the full learning procedure. Deterministic given the seed."""
    start_time = time.time()
    x = torch.tensor(panel.values)
    T, d = x.shape
    if d < 2:
        raise ValueError("need at least 2 metrics")
    if T <= config.p + 10:
        raise ValueError(f"panel too short: T={T}, need > p + 10")

    rng = RandomSource(config.seed)
    post = AdmgPosterior(d, config.r, config.init_edge_prob, rng.fork("post"))
    scm = ScmModel(d, config.r, p=config.p, embed=config.embed,
                   hidden=config.hidden, gdim=config.gdim, rng=rng.fork("scm"))
    sp = make_scheduler(d, config.tau, config.L_inner, config.hidden,
                        rng.fork("sched"))
    opt_model = torch.optim.Adam(
        list(post.parameters()) + list(scm.parameters()), lr=config.lr_model)
    opt_sched = torch.optim.Adam(sp.weight_net.parameters(),
                                 lr=config.lr_scheduler)
    sched = ConstraintSchedule(lam=config.lam, rho=config.rho_init,
                               alpha=config.alpha_init)
    mc_rng = rng.fork("mc")

    total_steps = config.L_outer * config.steps_per_round
    history = []
    log_fh = open(log_path, "w") if log_path else None
    h_prev = math.inf
    prev_score = None
    converged = False
    rounds_run = 0
    breakdown = None

    try:
        for rnd in range(config.L_outer):
            rounds_run = rnd + 1
            if config.disable_scheduling:
                w_star = SampleWeights(w=torch.ones(T), tau=config.tau)
            else:
                w_star = current_weights(sp, x)
            for step in range(config.steps_per_round):
                gstep = rnd * config.steps_per_round + step
                frac = gstep / max(total_steps - 1, 1)
                temp = (config.temperature_start
                        + (config.temperature_end - config.temperature_start) * frac)
                opt_model.zero_grad()
                total, breakdown = total_score(
                    scm, post, x, sched, w_star, config.n_mc, temp, mc_rng)
                _check_finite(breakdown)
                (-total).backward()
                opt_model.step()
                rec = breakdown.as_dict()
                rec.update(round=rnd, step=step, rho=sched.rho, alpha=sched.alpha)
                history.append(rec)
                if log_fh:
                    log_fh.write(json.dumps(rec) + "\n")

            if rnd >= config.l_scheduling and not config.disable_scheduling:
                frozen = _frozen_per_step_scores(scm, post, x)
                inner_optimize(sp, x, frozen, steps=config.L_inner,
                               optimizer=opt_sched)

            h_now = _current_h(post)
            if (h_now < config.h_tolerance and prev_score is not None
                    and abs(breakdown.total - prev_score) < 1e-4):
                converged = True
                break
            prev_score = breakdown.total
            if rnd + 1 < config.L_outer:
                sched = lagrangian_update(
                    sched, h_now, h_prev, config.rho_multiplier,
                    config.h_progress_ratio)
                h_prev = h_now
    finally:
        if log_fh:
            log_fh.close()

    h_final = _current_h(post)
    if config.disable_scheduling:
        w_final = SampleWeights(w=torch.ones(T), tau=config.tau)
    else:
        w_final = current_weights(sp, x)
    return TrainReport(
        posterior=post, scm=scm, scheduler=sp, weights=w_final,
        history=history, converged=converged or h_final < config.h_tolerance,
        h_final=h_final, rounds_run=rounds_run,
        wall_time=time.time() - start_time,
    )


def _check_finite(breakdown: ScoreBreakdown) -> None:
    for name, value in breakdown.as_dict().items():
        if not math.isfinite(value):
            raise FloatingPointError(f"score term {name!r} became {value}")


def loglik_panel(scm: ScmModel, post: AdmgPosterior,
                 panel: MetricPanel) -> torch.Tensor:
    """Deterministic d x T per-node log densities for localization: expected
    graph, posterior-mean confounders, and the first p columns padded with
    each node's own later values' minimum so early alarms stay rankable."""
    x = torch.tensor(panel.values)
    with torch.no_grad():
        cpost = scm.encode_confounders(x)
        ll = scm.loglik_matrix(x, cpost.mu, post.edge_probs()).T  # (d, T-p)
        pad = ll.min(dim=1, keepdim=True).values.expand(-1, scm.p)
        return torch.cat([pad, ll], dim=1)
