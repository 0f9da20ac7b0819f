"""Experiment orchestration: scenario generation, episode execution, sweeps
over experiment grids, and CSV output.

Randomness discipline: every run derives independent substreams from
``(master_seed, seed)`` - one per user for task arrivals, one per user for
fading/saving draws, one per user for measurement noise, plus a single
policy stream (posterior sampling, MH proposals).  Task timelines are
action-independent, so two policies replayed on the same seed face
identical arrivals, workloads, deadlines, and channel draws; learning
policies cannot perturb the environment they are measured on.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from fractions import Fraction
from multiprocessing import Pool
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from . import mec
from .config import ConfigError, ExperimentCell, SimConfig
from .dynamics import PenaltyFn, TaskGenerator
from .learning import (
    BayesWhittleEstimator,
    MleWhittleEstimator,
    NoiseModel,
    PriorSpec,
    PriorSwapWhittleEstimator,
    observe,
    _invgamma_logpdf,
    _normal_logpdf,
)
from .policies import PolicyKind, UserKeys, select
from .whittle import ArmChain, relaxed_upper_bound, whittle_index_array

__all__ = [
    "RunRecord",
    "EpisodeInfo",
    "Scenario",
    "build_scenario",
    "build_arm_chains",
    "run_episode",
    "run_experiment",
    "ExperimentResult",
    "CellSummary",
    "emit_csv",
    "read_csv",
    "CSV_COLUMNS",
]


@dataclass(frozen=True)
class RunRecord:
    """Metrics of one episode."""

    policy: str
    num_users: int
    num_servers: int
    alpha: float
    seed: int
    discounted_reward: float
    completion_ratio: float
    energy_saving: float
    relaxed_bound: Optional[float] = None


@dataclass(frozen=True)
class EpisodeInfo:
    """Bookkeeping facts about one episode, for tests and metadata."""

    deadline_tasks: int
    completed_tasks: int
    violated_tasks: int
    max_abs_slot_reward: float
    reward_tail_bound: float


@dataclass(frozen=True)
class Scenario:
    """Per-seed static world: user profiles and derived constants."""

    profiles: tuple[mec.UserProfile, ...]
    env: mec.ChannelEnvironment
    capacities: np.ndarray
    e_locals: np.ndarray
    noise_vars: np.ndarray


def _stream(master_seed: int, seed: int, *key: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([master_seed, seed, *key])))


def build_scenario(cfg: SimConfig, seed: int) -> Scenario:
    """Draw user profiles for one run and validate the whole configuration.

    Every validation failure is collected so the error lists all problems
    at once, before any slot executes.
    """
    errors = cfg.validation_errors()
    rng = _stream(cfg.master_seed, seed, 0)
    env = mec.ChannelEnvironment(
        pathloss_const=mec.db_to_linear(cfg.pathloss_const_db),
        ref_distance=cfg.ref_distance,
        pathloss_exp=cfg.pathloss_exp,
        noise_density=mec.dbm_to_watts(cfg.noise_density_dbm),
        server_freq=cfg.server_freq,
    )

    profiles = []
    capacities = np.zeros(cfg.num_users, dtype=np.int64)
    e_locals = np.zeros(cfg.num_users)
    noise_vars = np.zeros(cfg.num_users)
    for i in range(cfg.num_users):
        distance = rng.uniform(cfg.distance_low, cfg.distance_high)
        tx_dbm = rng.uniform(cfg.tx_power_low_dbm, cfg.tx_power_high_dbm)
        cpu = cfg.cpu_freq_choices[rng.integers(len(cfg.cpu_freq_choices))]
        cycles = cfg.cycles_per_bit_choices[rng.integers(len(cfg.cycles_per_bit_choices))]
        bits = cfg.subtask_bits_choices[rng.integers(len(cfg.subtask_bits_choices))]
        noise_vars[i] = rng.uniform(cfg.noise_var_low, cfg.noise_var_high)
        profile = mec.UserProfile(
            user_id=i,
            cpu_freq=cpu,
            cycles_per_bit=cycles,
            subtask_bits=bits,
            tx_power=mec.dbm_to_watts(tx_dbm),
            bandwidth=cfg.bandwidth,
            distance=distance,
            power_coeff=cfg.power_coeff,
            arrival_prob=cfg.arrival_prob,
        )
        profiles.append(profile)
        try:
            profile.validate(ref_distance=cfg.ref_distance)
        except ValueError as exc:
            errors.append(str(exc))
            continue
        try:
            capacities[i] = mec.offload_capacity(profile, env)
        except ValueError as exc:
            errors.append(str(exc))
            continue
        e_locals[i] = mec.local_energy_per_subtask(profile, cfg.energy_model)
        if cfg.energy_truth == "channel":
            # transmit time at unit fading must fit in the slot
            gain = mec.channel_gain(env, distance)
            rate = mec.transmission_rate(profile, gain, env)
            if rate <= 0:
                errors.append(f"user {i}: zero-rate channel at unit fading")
            else:
                tx_time = mec.offload_energy(profile, rate, int(capacities[i])).tx_time
                if tx_time > cfg.slot_length:
                    errors.append(
                        f"user {i}: nominal transmit time {tx_time:.3g}s exceeds "
                        f"slot length {cfg.slot_length:.3g}s"
                    )
    if errors:
        raise ConfigError("; ".join(errors))
    return Scenario(
        profiles=tuple(profiles),
        env=env,
        capacities=capacities,
        e_locals=e_locals,
        noise_vars=noise_vars,
    )


def _true_prior_spec(cfg: SimConfig) -> PriorSpec:
    if cfg.energy_truth == "laplace":
        return PriorSpec(kind="laplace", location=cfg.truth_location, scale=cfg.truth_spread)
    return PriorSpec(kind="gaussian", location=cfg.truth_location, scale=cfg.truth_spread)


def _size_window(cfg: SimConfig, capacity: int, duration: int) -> tuple[int, int]:
    """Inclusive size range for one drawn duration under the config's rule."""
    if cfg.task_size_rule == "uniform":
        return 1, cfg.max_task_size
    hi = min(cfg.max_task_size, capacity * duration)
    if cfg.task_size_rule == "server-feasible":
        return 1, hi
    # offload-window: needs offloading (cannot finish locally) and sized in
    # the top part of the feasible window set by task_size_load
    lo = min(hi, max(duration + 1, math.ceil(cfg.task_size_load * hi)))
    return lo, hi


def _task_generator(cfg: SimConfig, capacity: int) -> TaskGenerator:
    size_dist = None
    if cfg.task_size_rule != "uniform":

        def size_dist(rng: np.random.Generator, duration: int) -> int:
            lo, hi = _size_window(cfg, capacity, duration)
            return int(rng.integers(lo, hi + 1))

    return TaskGenerator(
        arrival_prob=cfg.arrival_prob,
        max_duration=cfg.max_task_duration,
        max_task_size=cfg.max_task_size,
        size_dist=size_dist,
    )


class _SavingDraws:
    """Per-user draws of the true per-block energy saving."""

    def __init__(self, cfg: SimConfig, scn: Scenario, fading_rngs: list[np.random.Generator]):
        self.cfg = cfg
        self.scn = scn
        self.rngs = fading_rngs

    def draw(self, i: int) -> float:
        cfg, scn = self.cfg, self.scn
        if cfg.energy_truth == "channel":
            kappa = self.rngs[i].exponential(1.0)
            env = dataclasses.replace(scn.env, fading_gain=kappa)
            profile = scn.profiles[i]
            gain = mec.channel_gain(env, profile.distance)
            rate = mec.transmission_rate(profile, gain, env)
            e_off = mec.offload_energy(profile, rate, int(scn.capacities[i])).energy
            return mec.energy_saving(float(scn.e_locals[i]), e_off, int(scn.capacities[i]))
        if cfg.energy_truth == "gaussian":
            return float(
                self.rngs[i].normal(cfg.truth_location, math.sqrt(cfg.truth_spread))
            )
        return float(self.rngs[i].laplace(cfg.truth_location, cfg.truth_spread))


class _PsblBatch:
    """Advances all users' prior-swapping MH chains in lockstep.

    Chains are independent across users, so one vectorized sweep per slot
    is exact; proposals come from the shared policy stream.
    """

    def __init__(self, estimators: list[PriorSwapWhittleEstimator], cfg: SimConfig):
        self.estimators = estimators
        self.cfg = cfg
        self.true_prior = _true_prior_spec(cfg)
        fp = estimators[0].false_prior
        self.fp_lam, self.fp_mu = fp.lam, fp.mu

    def _target(self, sav, logvar, lam, mu, phi, nu):
        var = np.exp(logvar)
        dens = _normal_logpdf(sav, mu, var / lam) + _invgamma_logpdf(var, nu, phi)
        dens += self.true_prior.logpdf(sav)
        dens -= _normal_logpdf(sav, self.fp_mu, var / self.fp_lam)
        return dens + logvar  # log-variance Jacobian

    def refresh(self, rng: np.random.Generator) -> np.ndarray:
        ests = self.estimators
        n = len(ests)
        lam = np.array([e.posterior.lam for e in ests])
        mu = np.array([e.posterior.mu for e in ests])
        phi = np.array([e.posterior.phi for e in ests])
        nu = np.array([e.posterior.nu for e in ests])
        sav = np.array([e.theta[0] for e in ests])
        logvar = np.log(np.array([e.theta[1] for e in ests]))
        s_sav = self.cfg.mh_proposal_factor * np.sqrt(phi / (lam * nu))
        s_lv = self.cfg.mh_proposal_factor / np.sqrt(nu)

        cur = self._target(sav, logvar, lam, mu, phi, nu)
        total = np.zeros(n)
        steps = self.cfg.mh_burn_in + self.cfg.mh_samples
        for step in range(steps):
            prop_sav = sav + s_sav * rng.standard_normal(n)
            prop_lv = logvar + s_lv * rng.standard_normal(n)
            cand = self._target(prop_sav, prop_lv, lam, mu, phi, nu)
            accept = np.log(rng.random(n)) < cand - cur
            sav = np.where(accept, prop_sav, sav)
            logvar = np.where(accept, prop_lv, logvar)
            cur = np.where(accept, cand, cur)
            if step >= self.cfg.mh_burn_in:
                total += sav
        for i, e in enumerate(ests):
            e.theta = (float(sav[i]), float(math.exp(logvar[i])))
        return total / self.cfg.mh_samples


def _penalty_values(penalty: PenaltyFn, x: np.ndarray) -> np.ndarray:
    xf = x.astype(np.float64)
    return np.where(x > 0, penalty.base + penalty.quad_coeff * xf * xf, 0.0)


def _run_episode_full(cfg: SimConfig, seed: int) -> tuple[RunRecord, EpisodeInfo]:
    scn = build_scenario(cfg, seed)
    kind = PolicyKind.parse(cfg.policy)
    penalty = cfg.penalty_fn()
    n, m, horizon, beta = cfg.num_users, cfg.num_servers, cfg.horizon, cfg.discount
    caps = scn.capacities

    task_rngs = [_stream(cfg.master_seed, seed, 1, i) for i in range(n)]
    fading_rngs = [_stream(cfg.master_seed, seed, 2, i) for i in range(n)]
    noise_rngs = [_stream(cfg.master_seed, seed, 3, i) for i in range(n)]
    policy_rng = _stream(cfg.master_seed, seed, 4)
    gens = [_task_generator(cfg, int(caps[i])) for i in range(n)]
    savings = _SavingDraws(cfg, scn, fading_rngs)

    estimators: Optional[list] = None
    psbl: Optional[_PsblBatch] = None
    if cfg.estimator == "mle":
        estimators = [MleWhittleEstimator() for _ in range(n)]
    elif cfg.estimator == "bl":
        estimators = [
            BayesWhittleEstimator(variant=cfg.nig_variant, mode=cfg.bl_estimate)
            for _ in range(n)
        ]
    elif cfg.estimator == "psbl":
        estimators = [
            PriorSwapWhittleEstimator(
                true_prior=_true_prior_spec(cfg),
                chain_len=cfg.mh_samples,
                proposal_factor=cfg.mh_proposal_factor,
                variant=cfg.nig_variant,
            )
            for _ in range(n)
        ]
        psbl = _PsblBatch(estimators, cfg)

    tau = np.zeros(n, dtype=np.int64)
    backlog = np.zeros(n, dtype=np.int64)
    esav_true = np.full(n, np.nan)
    if cfg.fading_period_slots > 0:
        # block savings exist from the start, even before the first task
        esav_true = np.array([savings.draw(i) for i in range(n)])

    discounted = 0.0
    realized_saving = 0.0
    deadline_tasks = 0
    completed_tasks = 0
    max_abs_slot_reward = 0.0
    need_slack = kind in (PolicyKind.LST, PolicyKind.STLW_WI)
    trace_lines: Optional[list[str]] = None
    if cfg.estimate_trace_path and estimators is not None:
        trace_lines = ["slot,user,estimate,true_saving"]

    for t in range(horizon):
        if cfg.fading_period_slots > 0 and t > 0 and t % cfg.fading_period_slots == 0:
            esav_true = np.array([savings.draw(i) for i in range(n)])
            if estimators is not None:
                for e in estimators:
                    e.reset()

        active = tau > 0
        esav_ranking = np.where(active, np.nan_to_num(esav_true), 0.0)
        if estimators is not None:
            if psbl is not None:
                est_vals = psbl.refresh(policy_rng)
            else:
                est_vals = np.array([e.estimate() for e in estimators])
            esav_ranking = np.where(active, est_vals, 0.0)
            if trace_lines is not None:
                truth = np.nan_to_num(esav_true)
                trace_lines.extend(
                    f"{t},{i},{est_vals[i]:.17g},{truth[i]:.17g}" for i in range(n)
                )

        wi = whittle_index_array(tau, backlog, esav_ranking, caps, beta, penalty)
        # immediate advantage of acting: reward(s,1) - reward(s,0)
        leftover_act = np.maximum(backlog - caps, 0)
        leftover_pas = np.maximum(backlog - 1, 0)
        gain = np.where(
            (backlog > 0) & (tau > 1),
            esav_ranking,
            np.where(
                (backlog > 0) & (tau == 1),
                esav_ranking - _penalty_values(penalty, leftover_act) + _penalty_values(penalty, leftover_pas),
                0.0,
            ),
        )
        keys = [
            UserKeys(
                user=i,
                idle=not bool(active[i]),
                tau=int(tau[i]) if active[i] else None,
                backlog=int(backlog[i]),
                slack=(
                    Fraction(int(tau[i]) * int(caps[i]) - int(backlog[i]), int(caps[i]))
                    if (need_slack and active[i])
                    else None
                ),
                wi=float(wi[i]),
                greedy_gain=float(gain[i]),
                capacity=int(caps[i]),
            )
            for i in range(n)
        ]
        action = select(kind, keys, m)
        sel = np.zeros(n, dtype=np.int64)
        sel[list(action.selected)] = 1

        # rewards use the true savings regardless of what the policy knows
        esav_reward = np.nan_to_num(esav_true)
        leftover = np.maximum(backlog - caps * sel - (1 - sel), 0)
        pen_vals = _penalty_values(penalty, leftover)
        r = np.where(
            backlog > 0,
            np.where(tau > 1, esav_reward * sel, esav_reward * sel - pen_vals),
            0.0,
        )
        slot_reward = float(r.sum())
        discounted += beta**t * slot_reward
        max_abs_slot_reward = max(max_abs_slot_reward, abs(slot_reward))
        offloading = (sel == 1) & (backlog > 0)
        realized_saving += float(esav_reward[offloading].sum())

        ended = tau == 1
        deadline_tasks += int(ended.sum())
        completed_tasks += int((ended & (leftover == 0)).sum())

        if estimators is not None:
            for i in np.nonzero(offloading)[0]:
                obs = observe(
                    NoiseModel(float(esav_true[i]), float(scn.noise_vars[i])), noise_rngs[i]
                )
                if cfg.estimator == "bl":
                    estimators[i].update(obs, policy_rng)
                else:
                    estimators[i].update(obs)

        # state transition: countdown while running, arrival draw at the end
        running = tau >= 2
        backlog = np.where(running, np.maximum(backlog - np.where(sel == 1, caps, 1), 0), backlog)
        tau = np.where(running, tau - 1, tau)
        for i in np.nonzero(~running)[0]:
            if gens[i].maybe_arrival(task_rngs[i]):
                spec = gens[i].draw(task_rngs[i], current_slot=t + 1)
                tau[i] = spec.duration
                backlog[i] = spec.total_subtasks
                if cfg.fading_period_slots == 0:
                    esav_true[i] = savings.draw(i)
                    if estimators is not None:
                        estimators[i].reset()
            else:
                tau[i] = 0
                backlog[i] = 0

    if trace_lines is not None:
        trace_path = Path(cfg.estimate_trace_path.format(seed=seed))
        trace_path.write_text("\n".join(trace_lines) + "\n", encoding="utf-8")

    ratio = completed_tasks / deadline_tasks if deadline_tasks else 0.0
    record = RunRecord(
        policy=cfg.policy_label(),
        num_users=n,
        num_servers=m,
        alpha=cfg.penalty_alpha,
        seed=seed,
        discounted_reward=discounted,
        completion_ratio=ratio,
        energy_saving=realized_saving,
    )
    tail = (
        max_abs_slot_reward * beta**horizon / (1.0 - beta) if beta < 1.0 else math.inf
    )
    info = EpisodeInfo(
        deadline_tasks=deadline_tasks,
        completed_tasks=completed_tasks,
        violated_tasks=deadline_tasks - completed_tasks,
        max_abs_slot_reward=max_abs_slot_reward,
        reward_tail_bound=tail,
    )
    return record, info


def run_episode(cfg: SimConfig, seed: int) -> RunRecord:
    """Run one episode; deterministic given (cfg, seed)."""
    record, _ = _run_episode_full(cfg, seed)
    return record


# ---------------------------------------------------------------------------
# Relaxed bound construction
# ---------------------------------------------------------------------------


def _esav_quantile_samples(cfg: SimConfig, scn: Scenario, i: int) -> np.ndarray:
    """Equiprobable per-task saving values for the bound's arm chain."""
    n_q = cfg.bound_esav_samples
    q = (np.arange(n_q) + 0.5) / n_q
    if cfg.energy_truth == "channel":
        kappa = -np.log1p(-q)
        profile = scn.profiles[i]
        base_gain = mec.channel_gain(scn.env, profile.distance)
        noise_power = scn.env.noise_density * profile.bandwidth
        rate = profile.bandwidth * np.log2(1.0 + profile.tx_power * kappa * base_gain / noise_power)
        cap = int(scn.capacities[i])
        e_off = cap * profile.subtask_bits / rate * profile.tx_power
        return cap * float(scn.e_locals[i]) - e_off
    if cfg.energy_truth == "gaussian":
        from scipy.stats import norm

        return norm.ppf(q, loc=cfg.truth_location, scale=math.sqrt(cfg.truth_spread))
    # laplace quantile function
    return cfg.truth_location - cfg.truth_spread * np.sign(q - 0.5) * np.log1p(-2.0 * np.abs(q - 0.5))


def _size_matrix(cfg: SimConfig, capacity: int) -> np.ndarray:
    """P(size | duration) rows matching the task generator's rule."""
    out = np.zeros((cfg.max_task_duration, cfg.max_task_size))
    for d in range(1, cfg.max_task_duration + 1):
        lo, hi = _size_window(cfg, capacity, d)
        out[d - 1, lo - 1 : hi] = 1.0 / (hi - lo + 1)
    return out


def build_arm_chains(cfg: SimConfig, seed: int, scn: Optional[Scenario] = None) -> list[ArmChain]:
    """Per-user decoupled chains matching the scenario of (cfg, seed)."""
    if scn is None:
        scn = build_scenario(cfg, seed)
    penalty = cfg.penalty_fn()
    dur = np.full(cfg.max_task_duration, 1.0 / cfg.max_task_duration)
    return [
        ArmChain(
            capacity=int(scn.capacities[i]),
            penalty=penalty,
            arrival_prob=cfg.arrival_prob,
            duration_probs=dur,
            size_probs=_size_matrix(cfg, int(scn.capacities[i])),
            esav_values=_esav_quantile_samples(cfg, scn, i),
        )
        for i in range(cfg.num_users)
    ]


def compute_relaxed_bound(cfg: SimConfig, seed: int, horizon: Optional[int] = -1) -> float:
    """Relaxed bound for the scenario of (cfg, seed).

    By default the bound matches the run's finite horizon so it dominates
    the truncated rewards in the records; pass ``horizon=None`` for the
    stationary infinite-horizon value.
    """
    chains = build_arm_chains(cfg, seed)
    if horizon == -1:
        horizon = cfg.horizon
    return relaxed_upper_bound(
        chains,
        cfg.num_servers,
        cfg.discount,
        horizon=horizon,
        literal_penalty=cfg.relaxed_bound_literal,
    )


# ---------------------------------------------------------------------------
# Experiment sweeps
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CellSummary:
    """Mean and normal-approximation 95% CI per metric for one cell."""

    cell: str
    n_runs: int
    reward_mean: float
    reward_ci: float
    completion_mean: float
    completion_ci: float
    saving_mean: float
    saving_ci: float


@dataclass
class ExperimentResult:
    records: list[RunRecord]
    summaries: list[CellSummary]
    failures: list[tuple[str, int, str]]
    metadata: dict

    @property
    def ok(self) -> bool:
        return not self.failures


def _mean_ci(values: Sequence[float]) -> tuple[float, float]:
    arr = np.asarray(values, dtype=np.float64)
    mean = float(arr.mean())
    if arr.size < 2:
        return mean, 0.0
    half = 1.96 * float(arr.std(ddof=1)) / math.sqrt(arr.size)
    return mean, half


def _episode_task(
    args: tuple[SimConfig, int]
) -> Union[tuple[RunRecord, EpisodeInfo], Exception]:
    cfg, seed = args
    try:
        return _run_episode_full(cfg, seed)
    except Exception as exc:  # noqa: BLE001 - failures isolate per cell-seed
        return exc


def run_experiment(
    cells: Sequence[ExperimentCell],
    seeds: Sequence[int],
    compute_bound: bool = False,
    jobs: int = 1,
) -> ExperimentResult:
    """Run every (cell, seed) pair and aggregate.

    Failures are isolated per cell-seed and reported, never silently
    dropped.  The relaxed bound, when requested, is computed once per
    scenario (it does not depend on the policy) and attached to every
    record of that scenario.
    """
    if not cells:
        raise ValueError("empty experiment grid")
    records: list[RunRecord] = []
    failures: list[tuple[str, int, str]] = []
    metadata: dict = {"seeds": list(seeds), "tail_bound": {}}
    bounds: dict = {}

    tasks = [(cell, s) for cell in cells for s in seeds]
    if jobs > 1:
        with Pool(jobs) as pool:
            outcomes = pool.map(_episode_task, [(c.config, s) for c, s in tasks])
    else:
        outcomes = [_episode_task((cell.config, s)) for cell, s in tasks]

    for (cell, s), outcome in zip(tasks, outcomes):
        if isinstance(outcome, Exception):
            failures.append((cell.name, s, f"{type(outcome).__name__}: {outcome}"))
            continue
        record, info = outcome
        if compute_bound:
            key = (
                dataclasses.replace(cell.config, policy="wi", estimator="known"),
                s,
            )
            if key not in bounds:
                bounds[key] = compute_relaxed_bound(cell.config, s)
            record = dataclasses.replace(record, relaxed_bound=bounds[key])
        records.append(record)
        prev = metadata["tail_bound"].get(cell.name, 0.0)
        metadata["tail_bound"][cell.name] = max(prev, info.reward_tail_bound)

    summaries = []
    for cell in cells:
        cell_records = [r for r in records if _cell_of(r, cell)]
        if not cell_records:
            continue
        rm, rc = _mean_ci([r.discounted_reward for r in cell_records])
        cm, cc = _mean_ci([r.completion_ratio for r in cell_records])
        sm, sc = _mean_ci([r.energy_saving for r in cell_records])
        summaries.append(
            CellSummary(
                cell=cell.name,
                n_runs=len(cell_records),
                reward_mean=rm,
                reward_ci=rc,
                completion_mean=cm,
                completion_ci=cc,
                saving_mean=sm,
                saving_ci=sc,
            )
        )
    return ExperimentResult(records=records, summaries=summaries, failures=failures, metadata=metadata)


def _cell_of(record: RunRecord, cell: ExperimentCell) -> bool:
    cfg = cell.config
    return (
        record.policy == cfg.policy_label()
        and record.num_users == cfg.num_users
        and record.num_servers == cfg.num_servers
        and record.alpha == cfg.penalty_alpha
    )


# ---------------------------------------------------------------------------
# CSV output
# ---------------------------------------------------------------------------

CSV_COLUMNS = (
    "policy",
    "N",
    "M",
    "alpha",
    "seed",
    "discounted_reward",
    "completion_ratio",
    "energy_saving",
    "relaxed_bound",
)


def _fmt(x: float) -> str:
    # 17 significant digits: exact float round-trip
    return format(x, ".17g")


def emit_csv(records: Sequence[RunRecord], path: str | Path) -> None:
    """Write records as UTF-8 CSV with a stable column order.

    Errors on an empty record list before creating any file; I/O failures
    carry the path in the message.
    """
    if not records:
        raise ValueError(f"no records to write to {path}")
    lines = [",".join(CSV_COLUMNS)]
    for r in records:
        lines.append(
            ",".join(
                (
                    r.policy,
                    str(r.num_users),
                    str(r.num_servers),
                    _fmt(r.alpha),
                    str(r.seed),
                    _fmt(r.discounted_reward),
                    _fmt(r.completion_ratio),
                    _fmt(r.energy_saving),
                    "" if r.relaxed_bound is None else _fmt(r.relaxed_bound),
                )
            )
        )
    try:
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    except OSError as exc:
        raise OSError(f"failed writing {path}: {exc}") from exc


def read_csv(path: str | Path) -> list[RunRecord]:
    """Parse a CSV produced by :func:`emit_csv` back into records."""
    text = Path(path).read_text(encoding="utf-8")
    lines = [ln for ln in text.splitlines() if ln]
    if not lines or lines[0] != ",".join(CSV_COLUMNS):
        raise ValueError(f"{path}: unrecognized header")
    out = []
    for ln in lines[1:]:
        parts = ln.split(",")
        out.append(
            RunRecord(
                policy=parts[0],
                num_users=int(parts[1]),
                num_servers=int(parts[2]),
                alpha=float(parts[3]),
                seed=int(parts[4]),
                discounted_reward=float(parts[5]),
                completion_ratio=float(parts[6]),
                energy_saving=float(parts[7]),
                relaxed_bound=float(parts[8]) if parts[8] else None,
            )
        )
    return out
