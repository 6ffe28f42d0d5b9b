"""Stage-synchronous simulation of the full mining network.

Time advances in stages (one training stage each). Every miner is in exactly
one activity per stage: training a useful stage, redundant re-training,
recomputing a stage for block verification, recomputing a stage for task
verification, or downloading/idle (uncounted). The per-stage partition is
asserted every step.

Model notes, matching the protocol's latency accounting:

* A block generation opportunity per trained stage is realized as a coin
  toss with success probability p; all successes within one stage broadcast
  simultaneously, the first seen (random order) extends the chain and the
  rest are orphans (fork events).
* After a block, every other miner pauses: the producer's appointed verifier
  committee for 2 stages, the rest of the network for 4 (they must fetch the
  dataset first). One stage of each pause is the actual recomputation
  (counted c_bv); the remainder is download latency. No tosses while paused,
  and the stage a miner just trained is never lost.
* Verifier task audits are spread one recomputation per stage and may
  overlap block-verification download latency.
* A finished prover waits for its committee to finalize the task, then its
  fresh deposit rides the next block; while waiting it re-trains completed
  stages to keep tossing (redundant work). Retired verifiers do the same.

Consensus-layer events (blocks, ranks, groups) run through the real chain
and roles modules; only the per-miner stage work uses the statistical
surrogate. ``run_protocol_check`` is the complementary small-scale loop that
runs real training, real threshold tests and real proof verification end to
end.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from collections import deque

import numpy as np

from . import chain as chain_mod
from . import roles
from .chain import ChainState, encode_ledger, make_genesis
from .hashing import sha256

# appointment codes
NONE, PROVER, VERIFIER = 0, 1, 2


@dataclass(frozen=True)
class Latencies:
    """Stage-denominated latencies.

    The block-verification totals already include the weight transfer and
    the one-stage recomputation: 2 for the producer's committee (which holds
    the dataset) and 4 for the rest of the network.
    """

    dataset_download: int = 2
    weight_transfer: int = 1
    committee_block_verify: int = 2
    network_block_verify: int = 4
    verify_stage_cost: int = 1


@dataclass(frozen=True)
class AdversaryConfig:
    fraction: float = 0.0
    honest_ratio: float = 1.0
    strategy: str = "random-subset"


@dataclass(frozen=True)
class SimConfig:
    n: int = 1000
    g: int = 25
    g_v: int = 5
    p: float = 1e-4
    mean_epochs: int = 4000
    epoch_jitter: float = 0.1
    tau: int = 4
    alpha: int = 10
    gamma: float = 0.05
    xi: float = 0.2
    ctf: bool = False
    latencies: Latencies = field(default_factory=Latencies)
    adversary: AdversaryConfig = field(default_factory=AdversaryConfig)
    seed: int = 0
    horizon: int = 20_000
    warmup: int = 6_000
    task_reward_per_stage: float = 1.0
    block_reward: float = 10.0
    # Fraction of a stage's wall time a fabricated stage still costs the
    # cheater (0 = the idealization used by the closed-form analysis).
    dishonest_stage_cost: float = 0.0

    def validate(self) -> list[str]:
        errors = []
        if self.n < 2:
            errors.append("n: need at least two miners")
        if not 0 < self.g_v < self.g:
            errors.append("g_v: need 0 < g_v < g")
        if self.g > self.n:
            errors.append("g: group size exceeds miner count")
        if not 0.0 < self.p <= 1.0:
            errors.append("p: block probability must be in (0, 1]")
        if self.tau < 1:
            errors.append("tau: epochs per stage must be >= 1")
        if self.mean_epochs % self.tau != 0:
            errors.append("mean_epochs: must be a multiple of tau")
        if not 0.0 <= self.epoch_jitter < 1.0:
            errors.append("epoch_jitter: must be in [0, 1)")
        if self.alpha < 1:
            errors.append("alpha: must be >= 1")
        min_stages = int(round(self.mean_epochs * (1 - self.epoch_jitter))) // self.tau
        if self.alpha > max(min_stages, 1):
            errors.append("alpha: cannot audit more stages than a task has")
        if self.gamma < 0:
            errors.append("gamma: must be non-negative")
        if not 0.0 <= self.xi <= 1.0:
            errors.append("xi: flag ratio must be in [0, 1]")
        if not 0.0 <= self.adversary.fraction <= 1.0:
            errors.append("adversary.fraction: must be in [0, 1]")
        if not 0.0 <= self.adversary.honest_ratio <= 1.0:
            errors.append("adversary.honest_ratio: must be in [0, 1]")
        if self.warmup >= self.horizon:
            errors.append("warmup: must be below horizon")
        if self.task_reward_per_stage < 0 or self.block_reward < 0:
            errors.append("rewards: must be non-negative")
        if not 0.0 <= self.dishonest_stage_cost <= 1.0:
            errors.append("dishonest_stage_cost: must be in [0, 1]")
        return errors

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "g": self.g,
            "g_v": self.g_v,
            "p": self.p,
            "mean_epochs": self.mean_epochs,
            "epoch_jitter": self.epoch_jitter,
            "tau": self.tau,
            "alpha": self.alpha,
            "gamma": self.gamma,
            "xi": self.xi,
            "ctf": self.ctf,
            "latencies": {
                "dataset_download": self.latencies.dataset_download,
                "weight_transfer": self.latencies.weight_transfer,
                "committee_block_verify": self.latencies.committee_block_verify,
                "network_block_verify": self.latencies.network_block_verify,
                "verify_stage_cost": self.latencies.verify_stage_cost,
            },
            "adversary": {
                "fraction": self.adversary.fraction,
                "honest_ratio": self.adversary.honest_ratio,
                "strategy": self.adversary.strategy,
            },
            "seed": self.seed,
            "horizon": self.horizon,
            "warmup": self.warmup,
            "task_reward_per_stage": self.task_reward_per_stage,
            "block_reward": self.block_reward,
            "dishonest_stage_cost": self.dishonest_stage_cost,
        }


@dataclass
class TaskRecord:
    task_id: int
    prover: int
    total_stages: int
    committee: list[int]
    reward: float
    dishonest: np.ndarray | None = None   # bool per stage; None = fully honest
    flag_zero: np.ndarray | None = None   # flag-0 stages (CTF cost accounting)
    block_stages: list[int] = field(default_factory=list)
    reports_pending: int = 0
    detected: bool = False


@dataclass
class SimMetrics:
    c_u: int
    c_r: int
    c_bv: int
    c_tv: int
    canonical_blocks: int
    fork_events: int
    mean_block_interval: float
    fork_rate: float
    ubgr: float
    uwr: float
    verifier_pop_mean: float
    useful_pop_mean: float
    redundant_pop_mean: float
    strategic_reward_rate: float | None
    strategic_tasks: int
    strategic_passes: int
    strategic_stages: int
    strategic_task_net: float
    series: dict[str, np.ndarray]
    config: dict


class World:
    """Mutable simulation state for one replica."""

    def __init__(self, config: SimConfig):
        errors = config.validate()
        if errors:
            raise ValueError("; ".join(errors))
        self.cfg = config
        self.rng = np.random.default_rng(np.random.SeedSequence(config.seed))
        n = config.n

        self.appointment = np.zeros(n, dtype=np.int8)
        self.pause_left = np.zeros(n, dtype=np.int32)
        self.bv_jobs = np.zeros(n, dtype=np.int32)
        self.download_left = np.zeros(n, dtype=np.int32)
        self.stages_left = np.zeros(n, dtype=np.int32)
        self.fake_left = np.zeros(n, dtype=np.int32)
        self.has_weight = np.zeros(n, dtype=bool)
        self.last_stage = np.ones(n, dtype=np.int32)
        self.cur_tv_units = np.zeros(n, dtype=np.int32)
        self.duty_left = np.zeros(n, dtype=np.int32)
        self.held_rewards = np.zeros(n, dtype=np.float64)
        self.balance = np.zeros(n, dtype=np.float64)
        self.task_net = np.zeros(n, dtype=np.float64)

        adv_count = int(round(config.adversary.fraction * n))
        self.is_strategic = np.zeros(n, dtype=bool)
        self.is_strategic[:adv_count] = True

        self.tv_queue: dict[int, deque] = {i: deque() for i in range(n)}
        self.assigned_task: dict[int, TaskRecord] = {}
        self.committee_of: list[list[int]] = [[] for _ in range(n)]
        self.tasks: dict[int, TaskRecord] = {}
        self._task_counter = 0
        self._sd_counter = 0

        self.queued_sds: list[roles.SecurityDeposit] = []
        self.buffer: list[roles.SecurityDeposit] = []

        self.audit: list[dict] = []

        # Post-warmup accumulators.
        self.c_u = 0
        self.c_r = 0
        self.c_bv = 0
        self.c_tv = 0
        self.block_stages: list[int] = []
        self.fork_events = 0
        self.strategic_stages = 0
        self.strategic_tasks = 0
        self.strategic_passes = 0

        horizon = config.horizon
        self.series_useful = np.zeros(horizon, dtype=np.int32)
        self.series_redundant = np.zeros(horizon, dtype=np.int32)
        self.series_verifier = np.zeros(horizon, dtype=np.int32)
        self.series_blocks = np.zeros(horizon, dtype=np.int16)

        self.t = 0
        self._measuring = config.warmup == 0

        genesis_deposits = self._new_deposits(list(range(n)), height=0)
        self.chain = ChainState(
            make_genesis(
                {"p": config.p, "g": config.g, "g_v": config.g_v, "xi": config.xi},
                deposits=[
                    {"sd_id": sd.sd_id.hex(), "amount": sd.amount, "owner": sd.owner}
                    for sd in genesis_deposits
                ],
            )
        )
        self._form_groups(genesis_deposits, self.chain.genesis.summary(), height=0)

    # ------------------------------------------------------------------
    # Deposits, groups, tasks
    # ------------------------------------------------------------------

    def _new_deposits(self, miners: list[int], height: int) -> list[roles.SecurityDeposit]:
        out = []
        for m in miners:
            self._sd_counter += 1
            out.append(
                roles.SecurityDeposit(
                    sd_id=f"sd-{m}-{self._sd_counter}".encode(),
                    owner=m,
                    recorded_height=height,
                )
            )
        return out

    def _draw_task_stages(self) -> int:
        cfg = self.cfg
        lo = int(round(cfg.mean_epochs * (1 - cfg.epoch_jitter)))
        hi = int(round(cfg.mean_epochs * (1 + cfg.epoch_jitter)))
        epochs = int(self.rng.integers(lo // cfg.tau, hi // cfg.tau + 1)) * cfg.tau
        return max(epochs // cfg.tau, 1)

    def _assign_task(self, miner: int) -> TaskRecord:
        cfg = self.cfg
        total = self._draw_task_stages()
        rho = cfg.adversary.honest_ratio if self.is_strategic[miner] else 1.0
        honest = int(round(rho * total))
        dishonest_mask = None
        flag_zero = None
        if honest < total:
            dishonest_mask = np.zeros(total, dtype=bool)
            fake = self.rng.choice(total, size=total - honest, replace=False)
            dishonest_mask[fake] = True
            if cfg.dishonest_stage_cost > 0:
                # Bernoulli realization of the fractional fabrication cost.
                self.fake_left[miner] = int(
                    self.rng.binomial(total - honest, cfg.dishonest_stage_cost)
                )
        if cfg.ctf:
            flag_zero = self.rng.random(total) < (1.0 - cfg.xi)
            if dishonest_mask is not None:
                # A strategic prover flags its fabricated stages 1 or 2, the
                # worst case for detection.
                flag_zero[dishonest_mask] = False
        self._task_counter += 1
        record = TaskRecord(
            task_id=self._task_counter,
            prover=miner,
            total_stages=total,
            committee=[],
            reward=cfg.task_reward_per_stage * total,
            dishonest=dishonest_mask,
            flag_zero=flag_zero,
        )
        self.tasks[record.task_id] = record
        self.assigned_task[miner] = record
        self.stages_left[miner] = honest
        return record

    def _form_groups(self, new_deposits: list[roles.SecurityDeposit], block_summary: bytes, height: int):
        cfg = self.cfg
        groups, self.buffer = roles.form_groups(
            new_deposits, self.buffer, block_summary, cfg.g, cfg.g_v, formed_at_height=height
        )
        for group in groups:
            verifier_ids = [sd.owner for sd in group.verifiers]
            for sd in group.verifiers:
                m = sd.owner
                self.appointment[m] = VERIFIER
                self.download_left[m] += cfg.latencies.dataset_download
                self.duty_left[m] = len(group.provers)
                self.cur_tv_units[m] = 0
            for sd in group.provers:
                m = sd.owner
                self.appointment[m] = PROVER
                record = self._assign_task(m)
                record.committee = verifier_ids
                self.committee_of[m] = verifier_ids
                if self.stages_left[m] > 0:
                    self.download_left[m] += cfg.latencies.dataset_download
            if self._measuring:
                self.audit.append(
                    {
                        "type": "group",
                        "stage": self.t,
                        "height": height,
                        "verifiers": verifier_ids,
                        "provers": [sd.owner for sd in group.provers],
                    }
                )

    # ------------------------------------------------------------------
    # Verification pipeline
    # ------------------------------------------------------------------

    def _enqueue_audits(self, record: TaskRecord):
        """A completed task hands each committee verifier its audit workload."""
        cfg = self.cfg
        total = record.total_stages
        blocked = record.block_stages if cfg.ctf else []
        eligible = (
            np.setdiff1d(np.arange(total), np.array(blocked, dtype=int))
            if blocked
            else np.arange(total)
        )
        alpha = min(cfg.alpha, len(eligible))
        record.reports_pending = len(record.committee)
        for v in record.committee:
            picked = self.rng.choice(eligible, size=alpha, replace=False)
            if record.dishonest is None:
                bad = np.zeros(alpha, dtype=bool)
            else:
                bad = record.dishonest[picked]
            if cfg.ctf:
                units = int(np.sum(np.where(record.flag_zero[picked] & ~bad, 1, 2)))
                found = bool(np.any(bad & (self.rng.random(alpha) < 0.5)))
            else:
                units = alpha * cfg.latencies.verify_stage_cost
                found = bool(np.any(bad))
            self.tv_queue[v].append((record.task_id, units, found))
            if self.cur_tv_units[v] == 0:
                tid, u, f = self.tv_queue[v][0]
                self.cur_tv_units[v] = u

    def _finalize_task(self, record: TaskRecord):
        cfg = self.cfg
        prover = record.prover
        if self._measuring and self.is_strategic[prover]:
            self.strategic_tasks += 1
            self.strategic_passes += not record.detected
        if record.detected:
            penalty = cfg.gamma * record.reward
            self.balance[prover] -= penalty
            if self._measuring:
                self.task_net[prover] -= penalty
            self.held_rewards[prover] = 0.0
            verdict = "fail"
        else:
            self.balance[prover] += record.reward + self.held_rewards[prover]
            if self._measuring:
                self.task_net[prover] += record.reward
            self.held_rewards[prover] = 0.0
            verdict = "pass"
        if self._measuring:
            self.audit.append(
                {
                    "type": "verification",
                    "stage": self.t,
                    "task_id": record.task_id,
                    "prover": prover,
                    "verdict": verdict,
                }
            )
        del self.tasks[record.task_id]

    def _process_tv(self, do_tv: np.ndarray):
        self.cur_tv_units[do_tv] -= 1
        for v in np.flatnonzero(do_tv & (self.cur_tv_units == 0)):
            v = int(v)
            queue = self.tv_queue[v]
            task_id, _, found = queue.popleft()
            record = self.tasks.get(task_id)
            if record is not None:
                record.detected = record.detected or found
                record.reports_pending -= 1
                if record.reports_pending == 0:
                    self._finalize_task(record)
            self.duty_left[v] -= 1
            if queue:
                self.cur_tv_units[v] = queue[0][1]
            elif self.duty_left[v] <= 0:
                # Duty complete: retire, re-deposit, keep mining redundantly.
                self.appointment[v] = NONE
                self.has_weight[v] = True
                self.queued_sds.extend(
                    self._new_deposits([v], height=self.chain.canonical_height)
                )

    # ------------------------------------------------------------------
    # Blocks
    # ------------------------------------------------------------------

    def _block_stage_index(self, producer: int) -> int:
        """1-based index of the stage the producer just (re-)trained."""
        record = self.assigned_task.get(producer)
        if record is not None:
            done = record.total_stages - int(self.stages_left[producer])
            return max(done, 1)
        return max(int(self.last_stage[producer]), 1)

    def _make_block(
        self,
        producer: int,
        sd_snapshot: list[roles.SecurityDeposit],
        prev_summary: bytes,
    ):
        cfg = self.cfg
        flag = None
        if cfg.ctf:
            record = self.assigned_task.get(producer)
            if record is not None and record.flag_zero is not None:
                stage_idx = min(self._block_stage_index(producer) - 1, record.total_stages - 1)
                flag = 0 if record.flag_zero[stage_idx] else int(1 + self.rng.integers(0, 2))
            else:
                flag = 0 if self.rng.random() < 1 - cfg.xi else int(1 + self.rng.integers(0, 2))
        ledger = encode_ledger(
            {
                "sd": [
                    {"sd_id": sd.sd_id.hex(), "amount": sd.amount, "owner": sd.owner}
                    for sd in sd_snapshot
                ]
            }
        )
        return self.chain.make_template(
            prev_summary=prev_summary,
            sd_id=f"sd-{producer}".encode(),
            ledger=ledger,
            work_summary=self.rng.bytes(32),
            stage=self._block_stage_index(producer),
            flag=flag,
        )

    def _on_blocks(self, winners: np.ndarray, useful_mask: np.ndarray, sd_snapshot):
        """Broadcast all same-stage winners; first seen extends the chain."""
        cfg = self.cfg
        order = self.rng.permutation(winners)

        # Templates were all built against the tip as it stood when the
        # stage's training began; the first seen extends it, rivals fork.
        prev_tip = self.chain.canonical_tip
        for rank, producer in enumerate(order):
            producer = int(producer)
            block = self._make_block(producer, sd_snapshot if rank == 0 else [], prev_tip)
            result = self.chain.accept_block(block)
            if rank == 0:
                self.held_rewards[producer] += cfg.block_reward
                canonical_block = block
                record = self.assigned_task.get(producer)
                if record is not None and useful_mask[producer]:
                    record.block_stages.append(self._block_stage_index(producer) - 1)
            else:
                # Orphaned: the stage that mined it is re-counted as redundant.
                if self._measuring and useful_mask[producer]:
                    self.c_u -= 1
                    self.c_r += 1
            if self._measuring:
                self.fork_events += result.fork_event
                self.audit.append(
                    {
                        "type": "block",
                        "stage": self.t,
                        "height": block.height,
                        "producer": producer,
                        "orphaned": rank > 0,
                    }
                )

            # Everyone but the producer pauses to verify this block.
            pause = np.full(cfg.n, cfg.latencies.network_block_verify, dtype=np.int32)
            committee = self.committee_of[producer]
            if committee:
                pause[committee] = cfg.latencies.committee_block_verify
            pause[producer] = 0
            self.pause_left += pause
            self.bv_jobs += pause > 0

        if self._measuring:
            self.block_stages.append(self.t)
        self.series_blocks[self.t] = len(order)

        # The canonical block's ledger activates queued deposits.
        if sd_snapshot:
            del self.queued_sds[: len(sd_snapshot)]
            height = canonical_block.height
            for sd in sd_snapshot:
                sd.recorded_height = height
            self._form_groups(sd_snapshot, canonical_block.summary(), height=height)

    # ------------------------------------------------------------------
    # One synchronized stage
    # ------------------------------------------------------------------

    def step(self):
        cfg = self.cfg
        t = self.t
        if t == cfg.warmup:
            self._measuring = True

        sd_snapshot = list(self.queued_sds)

        paused = self.pause_left > 0
        do_bv = paused & (self.bv_jobs > 0)
        self.bv_jobs[do_bv] -= 1

        do_tv = (self.cur_tv_units > 0) & ~do_bv

        ready = ~paused & (self.download_left == 0)
        downloading = ~paused & (self.download_left > 0)
        self.download_left[downloading] -= 1

        proving = ready & (self.appointment == PROVER)
        fake_burn = proving & (self.fake_left > 0)
        train_useful = proving & ~fake_burn & (self.stages_left > 0)
        train_redundant = ready & (self.appointment == NONE) & self.has_weight

        # Per-stage activity partition (every miner in exactly one class).
        counted = (
            do_bv.astype(np.int8)
            + do_tv.astype(np.int8)
            + fake_burn.astype(np.int8)
            + train_useful.astype(np.int8)
            + train_redundant.astype(np.int8)
        )
        assert np.max(counted) <= 1, "activity classes overlap"

        if self._measuring:
            self.c_bv += int(np.sum(do_bv))
            self.c_tv += int(np.sum(do_tv))
            self.c_u += int(np.sum(train_useful))
            # Fabrication burn is wasted compute: counted with redundant work.
            self.c_r += int(np.sum(train_redundant)) + int(np.sum(fake_burn))
            self.strategic_stages += int(
                np.sum(self.is_strategic & (self.appointment != VERIFIER))
            )

        self.series_useful[t] = np.sum(self.appointment == PROVER)
        self.series_redundant[t] = np.sum((self.appointment == NONE) & self.has_weight)
        self.series_verifier[t] = np.sum(self.appointment == VERIFIER)

        # Task-verification progress (may retire verifiers / finalize tasks).
        if np.any(do_tv):
            self._process_tv(do_tv)

        # Training progress.
        self.fake_left[fake_burn] -= 1
        self.stages_left[train_useful] -= 1
        self.has_weight |= train_useful

        # Block generation opportunities.
        tossers = train_useful | train_redundant
        winners = np.flatnonzero(tossers & (self.rng.random(cfg.n) < cfg.p))

        # Completions: provers whose honest stages are done (including
        # zero-work strategic tasks that complete as soon as the miner is
        # free) hand their task to the committee and start waiting.
        completing = (
            ready
            & (self.appointment == PROVER)
            & (self.stages_left == 0)
            & (self.fake_left == 0)
        )
        for m in np.flatnonzero(completing):
            m = int(m)
            record = self.assigned_task.pop(m)
            self.appointment[m] = NONE
            self.last_stage[m] = max(record.total_stages, 1)
            self._enqueue_audits(record)
            # A finished prover lodges its next deposit right away and keeps
            # mining redundantly while the committee audits the task.
            self.queued_sds.extend(
                self._new_deposits([m], height=self.chain.canonical_height)
            )

        if len(winners):
            self._on_blocks(winners, train_useful, sd_snapshot)

        # Consume one stage of the pauses that were already running when the
        # stage began; pauses assigned this stage start counting next stage.
        self.pause_left[paused] -= 1
        self.t += 1

    # ------------------------------------------------------------------

    def run(self) -> SimMetrics:
        for _ in range(self.cfg.horizon):
            self.step()
        return self.metrics()

    def metrics(self) -> SimMetrics:
        cfg = self.cfg
        stages = self.block_stages
        if len(stages) >= 2:
            mean_interval = float((stages[-1] - stages[0]) / (len(stages) - 1))
        else:
            mean_interval = float("inf")
        canonical = len(stages)
        fork_rate = self.fork_events / canonical if canonical else 0.0
        denom_u = self.c_u + self.c_r
        ubgr = self.c_u / denom_u if denom_u else 0.0
        denom_w = denom_u + self.c_bv + self.c_tv
        uwr = self.c_u / denom_w if denom_w else 0.0
        w = cfg.warmup
        strategic_rate = None
        if np.any(self.is_strategic) and self.strategic_stages:
            strategic_rate = float(
                np.sum(self.task_net[self.is_strategic]) / self.strategic_stages
            )
        return SimMetrics(
            c_u=self.c_u,
            c_r=self.c_r,
            c_bv=self.c_bv,
            c_tv=self.c_tv,
            canonical_blocks=canonical,
            fork_events=self.fork_events,
            mean_block_interval=mean_interval,
            fork_rate=fork_rate,
            ubgr=ubgr,
            uwr=uwr,
            verifier_pop_mean=float(np.mean(self.series_verifier[w:])),
            useful_pop_mean=float(np.mean(self.series_useful[w:])),
            redundant_pop_mean=float(np.mean(self.series_redundant[w:])),
            strategic_reward_rate=strategic_rate,
            strategic_tasks=self.strategic_tasks,
            strategic_passes=self.strategic_passes,
            strategic_stages=self.strategic_stages,
            strategic_task_net=float(np.sum(self.task_net[self.is_strategic])),
            series={
                "useful": self.series_useful,
                "redundant": self.series_redundant,
                "verifier": self.series_verifier,
                "blocks": self.series_blocks,
            },
            config=cfg.to_dict(),
        )


def run(config: SimConfig) -> SimMetrics:
    """Run one replica to completion."""
    return World(config).run()


def run_replicas(config: SimConfig, replicas: int) -> list[SimMetrics]:
    """Independent replicas with per-replica seeds derived from the master seed.

    POLSIM_MAX_WORKERS > 1 runs replicas in parallel processes; results are
    merged in replica order either way, so outputs are identical.
    """
    import os

    configs = [replace(config, seed=config.seed + 1_000_003 * i) for i in range(replicas)]
    workers = int(os.environ.get("POLSIM_MAX_WORKERS", "1"))
    if workers > 1 and replicas > 1:
        import multiprocessing

        with multiprocessing.Pool(min(workers, replicas)) as pool:
            return pool.map(run, configs)
    return [run(c) for c in configs]


def run_dishonesty_sweep(
    config: SimConfig,
    rho_grid: list[float],
    alpha_set: list[int],
    gamma_set: list[float],
    adversary_fraction: float = 0.05,
) -> list[dict]:
    """Measured task-reward rate of strategic provers per (rho, alpha, gamma).

    Runs the flag-game protocol (per-audit detection 1/2) with a strategic
    minority training a ``rho`` share of each task. The reward rate is net
    task rewards per stage spent in the prover pipeline (verifier duty time
    excluded from both sides of the ratio).
    """
    rows = []
    for alpha in alpha_set:
        for gamma in gamma_set:
            for rho in rho_grid:
                cfg = replace(
                    config,
                    alpha=alpha,
                    gamma=gamma,
                    ctf=True,
                    adversary=AdversaryConfig(
                        fraction=adversary_fraction,
                        honest_ratio=rho,
                        strategy="random-subset",
                    ),
                )
                metrics = run(cfg)
                rows.append(
                    {
                        "rho": rho,
                        "alpha": alpha,
                        "gamma": gamma,
                        "reward_rate": metrics.strategic_reward_rate,
                        "ubgr": metrics.ubgr,
                        "uwr": metrics.uwr,
                    }
                )
    return rows


@dataclass
class ProtocolCheckReport:
    """Outcome of the small-scale end-to-end run with real crypto and training."""

    stages_run: int
    blocks_accepted: int
    blocks_rejected: int
    fork_events: int
    full_verifications: int
    tasks_finalized: int
    tasks_passed: int
    flag_bonuses: int
    settlement_conserved: bool
    escrow_never_overdrawn: bool
    chain_height: int
    ok: bool


def run_protocol_check(
    seed: int = 0,
    n: int = 6,
    g: int = 3,
    g_v: int = 1,
    p: float = 0.25,
    stages_per_task: int = 3,
    ctf: bool = True,
    xi: float = 0.4,
    sim_stages: int = 120,
    alpha: int = 2,
) -> ProtocolCheckReport:
    """Drive the full protocol with the real trainer and real hash thresholds.

    A handful of miners deposit, get appointed, really train their stages,
    really test the block-generation condition on weight digests, and every
    broadcast block goes through both verification phases network-wide.
    Completed tasks are audited by their committee (flag game when ``ctf``)
    and settled through the real finalization path; the report aggregates
    correctness counters the caller can assert on.
    """
    from .hashing import Prng, Threshold, derive_seed
    from .proofs import (
        FlagVector,
        RewardSchedule,
        build_stage_package,
        capture_flag,
        finalize_task,
        plain_stage_report,
        sample_flags,
        select_stages,
        VerifierReport,
    )
    from .store import ContentStore
    from .training import make_reference_task, weight_summary, weights_to_bytes

    rng = np.random.default_rng(np.random.SeedSequence(seed))
    threshold = Threshold.from_probability(p)
    store = ContentStore()
    ref = make_reference_task(
        epochs=2 * stages_per_task, epochs_per_stage=2, n_samples=32, batches=4
    )
    store.put(ref.dataset.to_bytes())

    deposits = [
        roles.SecurityDeposit(sd_id=f"sd-{m}-0".encode(), owner=m) for m in range(n)
    ]
    state = ChainState(
        make_genesis(
            {"p": p, "g": g, "g_v": g_v, "xi": xi},
            deposits=[{"sd_id": d.sd_id.hex(), "amount": d.amount, "owner": d.owner} for d in deposits],
        )
    )

    sd_serial = [1] * n
    balances: dict[str, float] = {}
    report = dict(
        blocks_accepted=0,
        blocks_rejected=0,
        full_verifications=0,
        tasks_finalized=0,
        tasks_passed=0,
        flag_bonuses=0,
    )
    conserved = True
    escrow_ok = True

    class Miner:
        def __init__(self, idx):
            self.idx = idx
            self.role = "idle"
            self.committee: list[int] = []
            self.group_provers: list[int] = []
            self.stage = 1
            self.w = np.array(ref.spec.w0)
            self.flags: FlagVector | None = None
            self.packages = []
            self.block_stages: set[int] = set()
            self.deposit: roles.SecurityDeposit | None = None
            self.redundant_w = None
            self.tasks_done = 0

    miners = [Miner(m) for m in range(n)]
    queued: list[roles.SecurityDeposit] = []
    buffer: list[roles.SecurityDeposit] = []

    def appoint(groups):
        for group in groups:
            verifier_ids = [sd.owner for sd in group.verifiers]
            for sd in group.provers:
                m = miners[sd.owner]
                m.role = "prover"
                m.stage = 1
                m.w = np.array(ref.spec.w0) + 0.001 * sd.owner
                m.flags = (
                    sample_flags(stages_per_task, xi, int(rng.integers(0, 2 ** 63)))
                    if ctf
                    else None
                )
                m.packages = []
                m.block_stages = set()
                m.committee = verifier_ids
                m.deposit = sd
            for v_id in verifier_ids:
                v = miners[v_id]
                v.role = "verifier"
                v.group_provers = [sd.owner for sd in group.provers]

    groups, buffer = roles.form_groups(deposits, buffer, state.genesis.summary(), g, g_v)
    appoint(groups)

    def apply_transfers(transfers):
        nonlocal conserved
        for t in transfers:
            balances[t.src] = balances.get(t.src, 0.0) - t.amount
            balances[t.dst] = balances.get(t.dst, 0.0) + t.amount
        if abs(sum(balances.values())) > 1e-6:
            conserved = False

    def finalize(m: Miner):
        nonlocal escrow_ok
        task_id = sha256(f"task-{m.idx}-{m.tasks_done}".encode())
        commitment = m.flags.commitment if ctf else None
        reports = []
        for v_id in m.committee:
            picked = select_stages(
                stages_per_task,
                min(alpha, stages_per_task - len(m.block_stages)),
                m.block_stages if ctf else set(),
                int(rng.integers(0, 2 ** 63)),
            )
            stage_reports = []
            for s in picked:
                pkg, template_summary = m.packages[s - 1]
                if ctf:
                    stage_reports.append(
                        capture_flag(
                            pkg,
                            ref.spec,
                            derive_seed(template_summary, s),
                            store,
                            Prng(int(rng.integers(0, 2 ** 63))),
                            ref.dataset,
                        )
                    )
                else:
                    stage_reports.append(
                        plain_stage_report(pkg, ref.spec, template_summary, store, ref.dataset)
                    )
            reports.append(VerifierReport(verifier=v_id, stage_reports=tuple(stage_reports)))
        schedule = RewardSchedule(
            task_reward=float(stages_per_task),
            verifier_reward=1.0,
            ctf_flag_reward=1.0,
            held_block_rewards=0.0,
        )
        locked = schedule.task_reward + len(m.committee) * (
            schedule.verifier_reward + alpha * schedule.ctf_flag_reward
        )
        contract = finalize_task(
            task_id=task_id,
            prover=m.idx,
            reports=reports,
            flags_revealed=m.flags,
            expected_commitment=commitment,
            schedule=schedule,
            gamma=0.05,
            deposit=m.deposit,
            escrow_locked=locked,
        )
        balances[f"escrow:{task_id.hex()[:16]}"] = balances.get(
            f"escrow:{task_id.hex()[:16]}", 0.0
        ) + locked
        balances["requester-pool"] = balances.get("requester-pool", 0.0) - locked
        apply_transfers(contract.transfers)
        if balances[f"escrow:{task_id.hex()[:16]}"] < -1e-9:
            escrow_ok = False
        report["tasks_finalized"] += 1
        report["tasks_passed"] += contract.verdict == "pass"
        if ctf:
            report["flag_bonuses"] += sum(
                1
                for r in contract.reports
                for sr in r.stage_reports
                if sr.reported_flag == m.flags.flag_of(sr.stage) and sr.reported_flag in (1, 2)
            )
        m.tasks_done += 1
        m.role = "waiting"
        m.redundant_w = m.w.copy()
        sd_serial[m.idx] += 1
        queued.append(
            roles.SecurityDeposit(
                sd_id=f"sd-{m.idx}-{sd_serial[m.idx]}".encode(), owner=m.idx
            )
        )

    for t in range(sim_stages):
        tip_at_stage_start = state.canonical_tip
        sd_snapshot = list(queued)
        blocks_this_stage = []
        for m in miners:
            training_redundant = m.role == "waiting" and m.redundant_w is not None
            if m.role != "prover" and not training_redundant:
                continue
            w_prev = m.w if m.role == "prover" else m.redundant_w
            stage = m.stage if m.role == "prover" else stages_per_task
            flag = m.flags.flag_of(stage) if (ctf and m.role == "prover") else (0 if ctf else None)
            ledger = encode_ledger(
                {
                    "sd": [
                        {"sd_id": sd.sd_id.hex(), "amount": sd.amount, "owner": sd.owner}
                        for sd in sd_snapshot
                    ]
                }
            )
            template = state.make_template(
                prev_summary=tip_at_stage_start,
                sd_id=f"sd-{m.idx}".encode(),
                ledger=ledger,
                work_summary=weight_summary(w_prev),
                stage=stage,
                flag=flag,
            )
            pkg, w_out = build_stage_package(
                ref.spec, w_prev, template.summary(), stage, store, ref.dataset, flag=flag
            )
            if m.role == "prover":
                m.packages.append((pkg, template.summary()))
                m.w = w_out
                if chain_mod.check_bgo(pkg.result_summary, template.prev_summary, threshold):
                    blocks_this_stage.append((m.idx, template, pkg))
                    m.block_stages.add(stage)
                m.stage += 1
                if m.stage > stages_per_task:
                    finalize(m)
            else:
                if chain_mod.check_bgo(pkg.result_summary, template.prev_summary, threshold):
                    blocks_this_stage.append((m.idx, template, pkg))

        consumed_snapshot = False
        for producer, template, pkg in blocks_this_stage:
            verdicts = []
            for other in miners:
                if other.idx == producer:
                    continue
                quick = chain_mod.quick_verify(template, pkg.result_summary, threshold, state)
                full = chain_mod.full_verify(
                    template, pkg, ref.spec, threshold, store, ref.dataset
                )
                report["full_verifications"] += 1
                verdicts.append(bool(quick) and full is chain_mod.FullVerdict.ACCEPT)
            if all(verdicts):
                state.accept_block(template)
                report["blocks_accepted"] += 1
                if not consumed_snapshot and sd_snapshot:
                    del queued[: len(sd_snapshot)]
                    groups, buffer = roles.form_groups(
                        sd_snapshot, buffer, template.summary(), g, g_v,
                        formed_at_height=template.height,
                    )
                    appoint(groups)
                    consumed_snapshot = True
            else:
                report["blocks_rejected"] += 1

    return ProtocolCheckReport(
        stages_run=sim_stages,
        blocks_accepted=report["blocks_accepted"],
        blocks_rejected=report["blocks_rejected"],
        fork_events=state.fork_events,
        full_verifications=report["full_verifications"],
        tasks_finalized=report["tasks_finalized"],
        tasks_passed=report["tasks_passed"],
        flag_bonuses=report["flag_bonuses"],
        settlement_conserved=conserved,
        escrow_never_overdrawn=escrow_ok,
        chain_height=state.canonical_height,
        ok=(
            conserved
            and escrow_ok
            and report["blocks_rejected"] == 0
            and report["tasks_finalized"] > 0
            and report["tasks_passed"] == report["tasks_finalized"]
            and report["blocks_accepted"] > 0
        ),
    )


def run_private_fork(
    config: SimConfig,
    adversary_fraction: float = 0.3,
    horizon: int = 100_000,
    replicas: int = 100,
) -> list[tuple[int, int]]:
    """Race the canonical chain against a private branch.

    Both sides produce blocks as renewal processes at stage granularity: a
    side with A active tossers succeeds per stage with 1-(1-p)^A, and the
    honest network additionally pauses for the full verification latency
    after each of its blocks. The adversary is modeled favorably: it skips
    all verification pauses and never forks internally. Redundant training
    keeps both sides' tosser counts at their full populations.
    """
    p = config.p
    pause = config.latencies.network_block_verify
    n_adv = int(round(config.n * adversary_fraction))
    n_honest = config.n - n_adv
    p_honest = 1.0 - (1.0 - p) ** n_honest
    p_adv = 1.0 - (1.0 - p) ** n_adv
    results = []
    for i in range(replicas):
        rng = np.random.default_rng(np.random.SeedSequence(entropy=config.seed, spawn_key=(i,)))
        t, honest_blocks = 0, 0
        while True:
            t += int(rng.geometric(p_honest))
            if t > horizon:
                break
            honest_blocks += 1
            t += pause
        t, adv_blocks = 0, 0
        while True:
            t += int(rng.geometric(p_adv))
            if t > horizon:
                break
            adv_blocks += 1
        results.append((honest_blocks, adv_blocks))
    return results
