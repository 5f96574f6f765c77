"""Backend-agnostic trial loop for exact sampling / exact optimization.

The loop draws candidate configurations from a proposal q that dominates the
target p (q >= p pointwise), accepts with probability p/q (sampling) or iff
the ratio certifies the maximum (optimization), and hands every rejected
configuration to a refiner that must tighten q at that point.

A proposal object must provide:
    draw(rng)   -> (config, log_q_of_config)     used in sampling mode
    argmax()    -> (config, log_q_of_config)     used in optimization mode
    mass_log()  -> float   log of the total proposal mass Q(X)
    max_log()   -> float   log of max_x q(x)

A refiner must provide:
    refine(proposal, config, log_p, log_q) -> proposal
It may mutate the proposal in place and return it.
"""

from __future__ import annotations

import csv
import enum
import math
import time
from dataclasses import dataclass, field

import numpy as np

LOG_TOL = 1e-9


class Mode(enum.Enum):
    SAMPLING = "sampling"
    OPTIMIZATION = "optimization"


class DominationViolated(RuntimeError):
    """A trial saw log p(x) > log q(x) + tolerance: the bound is not a bound."""


class RatioOutOfRange(ValueError):
    """Acceptance ratio above 1 + tolerance."""


class RefinementExhausted(RuntimeError):
    """Refinement or trial budget ran out before the stop rule was met."""


class EmptyHistory(ValueError):
    """Metrics were requested before any trial was recorded."""


@dataclass
class TrialRecord:
    config: tuple
    log_p: float
    log_q: float
    accepted: bool
    proposal_mass_log: float
    trial_cost: float

    @property
    def ratio(self) -> float:
        return math.exp(min(0.0, self.log_p - self.log_q))


@dataclass
class History:
    """Per-trial records plus refinement cost bookkeeping."""

    records: list[TrialRecord] = field(default_factory=list)
    refine_count: int = 0
    refine_cost_total: float = 0.0
    # cumulative refinement cost at the moment each trial was committed
    refine_cost_at_trial: list[float] = field(default_factory=list)

    @property
    def trial_count(self) -> int:
        return len(self.records)

    @property
    def accept_count(self) -> int:
        return sum(1 for r in self.records if r.accepted)

    def append(self, record: TrialRecord) -> None:
        self.records.append(record)
        self.refine_cost_at_trial.append(self.refine_cost_total)

    def add_refinement(self, cost: float) -> None:
        self.refine_count += 1
        self.refine_cost_total += cost

    def ar_cumulative(self) -> float:
        if not self.records:
            return 0.0
        return self.accept_count / self.trial_count

    def ar_window(self, window: int) -> float:
        if not self.records:
            return 0.0
        tail = self.records[-window:]
        return sum(1 for r in tail if r.accepted) / len(tail)


@dataclass
class StopConfig:
    ar_window: int = 100
    ar_threshold: float = 0.2
    opt_ratio_tolerance: float = 0.0
    max_refinements: int = 1_000_000
    max_trials: int = 1_000_000


@dataclass
class Metrics:
    z_hat_log: float
    pi_hat: float
    tau_samp: float
    tau_ref: float
    ar_cumulative: float
    ar_window: float
    tau_tot_est: float


@dataclass
class RunResult:
    mode: Mode
    samples: list[tuple]
    argmax: tuple | None
    final_proposal: object
    history: History
    certificate_gap_log: float | None


class UnitCosts:
    """Deterministic cost model: one unit per trial, one per refinement.

    Keeps histories and CSV output bit-identical across reruns of one seed.
    """

    def trial_cost(self, elapsed: float, proposal) -> float:
        return 1.0

    def refine_cost(self, elapsed: float, proposal) -> float:
        return 1.0


class WallClockCosts:
    """Cost model that charges measured wall time (seconds)."""

    def trial_cost(self, elapsed: float, proposal) -> float:
        return elapsed

    def refine_cost(self, elapsed: float, proposal) -> float:
        return elapsed


def accept_or_reject(mode: Mode, ratio: float, rng: np.random.Generator,
                     tolerance: float = 0.0) -> bool:
    """One accept/reject decision on a ratio r = p(x)/q(x).

    Sampling accepts with probability r; optimization accepts iff
    r >= 1 - tolerance (a ratio of 1 certifies the argmax exactly).
    """
    if ratio > 1.0 + LOG_TOL:
        raise RatioOutOfRange(f"acceptance ratio {ratio} exceeds 1")
    if ratio < 0.0:
        raise RatioOutOfRange(f"acceptance ratio {ratio} is negative")
    if mode is Mode.SAMPLING:
        return rng.random() < ratio
    return ratio >= 1.0 - tolerance - 1e-12


def should_stop(history: History, mode: Mode, stop: StopConfig) -> bool:
    if mode is Mode.OPTIMIZATION:
        return bool(history.records) and history.records[-1].accepted
    if history.trial_count < stop.ar_window:
        return False
    return history.ar_window(stop.ar_window) >= stop.ar_threshold


def metrics(history: History, current_mass_log: float, n: int = 1) -> Metrics:
    """Estimators over all trials so far.

    Z_hat averages r_t * Q_t(X) over trials (unbiased for the target mass);
    pi_hat = Z_hat / Q_now(X) predicts the acceptance rate of the current
    proposal; tau_tot_est = n * tau_samp / pi_hat + tau_ref estimates the
    total cost of obtaining n more exact samples if refinement stops now.
    """
    if not history.records:
        raise EmptyHistory("no trials recorded")
    acc = -math.inf
    for r in history.records:
        log_r = min(0.0, r.log_p - r.log_q)
        acc = np.logaddexp(acc, log_r + r.proposal_mass_log)
    z_hat_log = acc - math.log(history.trial_count)
    pi_hat = math.exp(z_hat_log - current_mass_log)
    tau_samp = sum(r.trial_cost for r in history.records) / history.trial_count
    tau_ref = history.refine_cost_total
    tau_tot = (n * tau_samp / pi_hat + tau_ref) if pi_hat > 0 else math.inf
    return Metrics(
        z_hat_log=z_hat_log,
        pi_hat=pi_hat,
        tau_samp=tau_samp,
        tau_ref=tau_ref,
        ar_cumulative=history.ar_cumulative(),
        ar_window=history.ar_window(100),
        tau_tot_est=tau_tot,
    )


def run(mode: Mode, target, proposal, refiner, stop: StopConfig, seed,
        *, cost_model=None, on_refine=None) -> RunResult:
    """Adaptive rejection loop: trial, accept-or-reject, refine on reject.

    `target` is a callable returning log p(config). `refiner` may be None to
    freeze the proposal (rejects are then recorded but trigger nothing).
    `on_refine(proposal)` runs after every refinement; tests use it to audit
    domination and mass monotonicity exhaustively.
    """
    rng = np.random.default_rng(seed)
    costs = cost_model if cost_model is not None else UnitCosts()
    history = History()

    while (history.trial_count < stop.max_trials
           and not should_stop(history, mode, stop)):
        t0 = time.perf_counter()
        if mode is Mode.SAMPLING:
            config, log_q = proposal.draw(rng)
        else:
            config, log_q = proposal.argmax()
        log_p = target(config)
        elapsed = time.perf_counter() - t0
        if log_p > log_q + LOG_TOL:
            raise DominationViolated(
                f"log p {log_p} > log q {log_q} at {config!r}")
        ratio = math.exp(min(0.0, log_p - log_q))
        accepted = accept_or_reject(mode, ratio, rng,
                                    tolerance=stop.opt_ratio_tolerance)
        history.append(TrialRecord(
            config=config, log_p=log_p, log_q=log_q, accepted=accepted,
            proposal_mass_log=proposal.mass_log(),
            trial_cost=costs.trial_cost(elapsed, proposal)))
        if not accepted and refiner is not None:
            if history.refine_count >= stop.max_refinements:
                raise RefinementExhausted(
                    f"refinement budget {stop.max_refinements} exhausted")
            t0 = time.perf_counter()
            proposal = refiner.refine(proposal, config, log_p, log_q)
            history.add_refinement(
                costs.refine_cost(time.perf_counter() - t0, proposal))
            if on_refine is not None:
                on_refine(proposal)

    samples = [r.config for r in history.records if r.accepted]
    argmax = None
    certificate = None
    if mode is Mode.OPTIMIZATION:
        if not history.records or not history.records[-1].accepted:
            raise RefinementExhausted(
                "trial budget exhausted before the optimum was certified")
        last = history.records[-1]
        argmax = last.config
        certificate = last.log_q - last.log_p
    return RunResult(mode=mode, samples=samples, argmax=argmax,
                     final_proposal=proposal, history=history,
                     certificate_gap_log=certificate)


CSV_COLUMNS = ["trial", "accepted", "log_p", "log_q", "q_mass_log",
               "ar_cum", "ar_window", "z_hat_log", "pi_hat", "tau_tot_est"]


def write_trial_csv(history: History, path, n: int = 1,
                    ar_window: int = 100) -> None:
    """One row per trial with running acceptance rates and estimators."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        acc_z = -math.inf
        accepts = 0
        window: list[bool] = []
        cost_sum = 0.0
        for t, rec in enumerate(history.records, start=1):
            log_r = min(0.0, rec.log_p - rec.log_q)
            acc_z = np.logaddexp(acc_z, log_r + rec.proposal_mass_log)
            accepts += int(rec.accepted)
            window.append(rec.accepted)
            if len(window) > ar_window:
                window.pop(0)
            cost_sum += rec.trial_cost
            z_hat_log = acc_z - math.log(t)
            pi_hat = math.exp(z_hat_log - rec.proposal_mass_log)
            tau_samp = cost_sum / t
            tau_ref = history.refine_cost_at_trial[t - 1]
            tau_tot = (n * tau_samp / pi_hat + tau_ref) if pi_hat > 0 else math.inf
            writer.writerow([
                t, int(rec.accepted), repr(rec.log_p), repr(rec.log_q),
                repr(rec.proposal_mass_log), repr(accepts / t),
                repr(sum(window) / len(window)), repr(z_hat_log),
                repr(pi_hat), repr(tau_tot),
            ])
