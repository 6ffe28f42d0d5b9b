"""Per-stage proof packages, committee verification, the flag game, settlement.

A completed task is audited probabilistically: each committee verifier
recomputes a few randomly chosen stages from the prover's uploaded packages.
In flag mode (the capture-the-flag incentive game) the prover trains every
stage under one of three secret seed variants, committing to the flag vector
up front; verifiers must actually recompute stages to discover which variant
was used, and earn a bonus for reporting correct nonzero flags. Detection of
a fabricated stage is therefore probabilistic (worst case 1/2 per audit)
instead of certain, which the penalty schedule compensates for.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .hashing import Prng, derive_ctf_seed, derive_seed, sha256
from .store import ContentStore, MissingBlobError
from .training import (
    Dataset,
    MLTaskSpec,
    train_stage,
    weight_summary,
    weights_from_bytes,
    weights_to_bytes,
)

DEFAULT_VERIFIER_TIMEOUT = 50  # stages a committee waits before declaring a report missing

PASS = "pass"
FAIL = "fail"


class UnavailableProofError(RuntimeError):
    """A blob needed for verification is missing from the content store."""


class ParameterError(ValueError):
    """Verification parameters are inconsistent (e.g. sample larger than eligible set)."""


# ---------------------------------------------------------------------------
# Packages and flags
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ProofPackage:
    """Material to recompute one stage: prior weights, stage seed, output digest."""

    stage: int
    w_prev_id: bytes | None
    seed: int
    result_summary: bytes


@dataclass(frozen=True)
class FlagVector:
    """Secret per-stage flags, committed by hash before verification starts."""

    flags: bytes  # one byte per stage, values in {0, 1, 2}

    def __post_init__(self):
        if any(b not in (0, 1, 2) for b in self.flags):
            raise ValueError("flags must be 0, 1 or 2")

    @property
    def commitment(self) -> bytes:
        return sha256(self.flags)

    def flag_of(self, stage: int) -> int:
        return self.flags[stage - 1]


def sample_flags(stage_count: int, xi: float, seed: int) -> FlagVector:
    """Draw i.i.d. flags: 0 with probability 1-xi, 1 and 2 with xi/2 each."""
    if not 0.0 <= xi <= 1.0:
        raise ParameterError(f"flag ratio out of range: {xi}")
    prng = Prng(seed)
    out = bytearray(stage_count)
    for i in range(stage_count):
        u = prng.uniform()
        if u < 1.0 - xi:
            out[i] = 0
        elif u < 1.0 - xi / 2.0:
            out[i] = 1
        else:
            out[i] = 2
    return FlagVector(flags=bytes(out))


def select_stages(
    stage_count: int, alpha: int, block_stages: frozenset[int] | set[int], seed: int
) -> list[int]:
    """Uniformly sample alpha distinct stages to audit, skipping block stages.

    Stages that produced a block were already verified by the whole network
    (their flag is public in flag mode), so they are excluded from the
    eligible set. Returns sorted 1-based stage indices.
    """
    eligible = [s for s in range(1, stage_count + 1) if s not in block_stages]
    if alpha > len(eligible):
        raise ParameterError(
            f"cannot audit {alpha} stages, only {len(eligible)} eligible"
        )
    return sorted(Prng(seed).sample(eligible, alpha))


# ---------------------------------------------------------------------------
# Prover side
# ---------------------------------------------------------------------------

def build_stage_package(
    spec: MLTaskSpec,
    w_prev: np.ndarray,
    template_summary: bytes,
    stage: int,
    store: ContentStore,
    dataset: Dataset,
    flag: int | None = None,
) -> tuple[ProofPackage, np.ndarray]:
    """Honestly train one stage and upload its proof package.

    Returns the package and the stage's output weights. ``flag`` switches the
    effective seed to the flagged variant without exposing it in the package.
    """
    base_seed = derive_seed(template_summary, stage)
    effective = base_seed if flag is None else derive_ctf_seed(base_seed, flag)
    w_out = train_stage(spec, w_prev, effective, dataset)
    w_prev_id = store.put(weights_to_bytes(w_prev))
    pkg = ProofPackage(
        stage=stage,
        w_prev_id=w_prev_id,
        seed=base_seed,
        result_summary=weight_summary(w_out),
    )
    return pkg, w_out


def verify_package_chain(packages: list[ProofPackage], store: ContentStore) -> bool:
    """Consecutive packages must link: hash of package s+1's input weights
    equals package s's committed output digest."""
    for prev, nxt in zip(packages, packages[1:]):
        try:
            raw = store.get(nxt.w_prev_id)
        except MissingBlobError:
            raise UnavailableProofError(f"weights for stage {nxt.stage} missing")
        if sha256(raw) != prev.result_summary:
            return False
    return True


# ---------------------------------------------------------------------------
# Verifier side
# ---------------------------------------------------------------------------

def _recompute_matches(
    pkg: ProofPackage,
    spec: MLTaskSpec,
    seed: int,
    store: ContentStore,
    dataset: Dataset,
) -> bool:
    try:
        w_prev = weights_from_bytes(store.get(pkg.w_prev_id))
    except MissingBlobError:
        raise UnavailableProofError(f"weights for stage {pkg.stage} missing")
    w_out = train_stage(spec, w_prev, seed, dataset)
    return weight_summary(w_out) == pkg.result_summary


def verify_stage_plain(
    pkg: ProofPackage,
    spec: MLTaskSpec,
    template_summary: bytes,
    store: ContentStore,
    dataset: Dataset | None = None,
) -> bool:
    """Recompute a stage with the template-derived seed and compare digests."""
    if dataset is None:
        dataset = Dataset.from_bytes(store.get(bytes.fromhex(spec.dataset_id)))
    seed = derive_seed(template_summary, pkg.stage)
    if pkg.seed != seed:
        return False
    return _recompute_matches(pkg, spec, seed, store, dataset)


@dataclass(frozen=True)
class StageReport:
    """One verifier's audit of one stage.

    ``attempts`` lists (flag, matched) pairs in the order tried; plain-mode
    audits use a single attempt with flag None. ``reported_flag`` is the flag
    the verifier claims was used (None in plain mode).
    """

    stage: int
    reported_flag: int | None
    attempts: tuple[tuple[int | None, bool], ...]
    recomputations: int

    @property
    def plain_passed(self) -> bool:
        return self.attempts[0][1]


def plain_stage_report(
    pkg: ProofPackage,
    spec: MLTaskSpec,
    template_summary: bytes,
    store: ContentStore,
    dataset: Dataset | None = None,
) -> StageReport:
    ok = verify_stage_plain(pkg, spec, template_summary, store, dataset)
    return StageReport(
        stage=pkg.stage, reported_flag=None, attempts=((None, ok),), recomputations=1
    )


def capture_flag(
    pkg: ProofPackage,
    spec: MLTaskSpec,
    base_seed: int,
    store: ContentStore,
    coin: Prng,
    dataset: Dataset | None = None,
) -> StageReport:
    """Identify the secret flag of a stage by recomputing under candidate seeds.

    Try flag 0 first; if it reproduces the committed digest, report 0. If
    not, recompute under a coin-chosen flag in {1, 2}: report it on a match,
    otherwise report the remaining flag, assuming cheating is rare. Costs one
    or two stage recomputations.
    """
    if dataset is None:
        dataset = Dataset.from_bytes(store.get(bytes.fromhex(spec.dataset_id)))
    attempts: list[tuple[int | None, bool]] = []

    matched0 = _recompute_matches(pkg, spec, derive_ctf_seed(base_seed, 0), store, dataset)
    attempts.append((0, matched0))
    if matched0:
        return StageReport(pkg.stage, 0, tuple(attempts), recomputations=1)

    guess = 1 + coin.randbelow(2)
    matched = _recompute_matches(pkg, spec, derive_ctf_seed(base_seed, guess), store, dataset)
    attempts.append((guess, matched))
    reported = guess if matched else 3 - guess
    return StageReport(pkg.stage, reported, tuple(attempts), recomputations=2)


@dataclass(frozen=True)
class VerifierReport:
    verifier: int
    stage_reports: tuple[StageReport, ...]
    timed_out: bool = False


def resolve_stage_verdict(report: StageReport, true_flag: int | None) -> bool:
    """Stage verdict once flags are revealed.

    Plain mode (no flag): the single recomputation decides. Flag mode: the
    stage is proven dishonest exactly when the verifier recomputed under the
    true flag and the digest did not match; an untried true flag leaves the
    stage passing by default.
    """
    if true_flag is None:
        return report.plain_passed
    for flag, matched in report.attempts:
        if flag == true_flag:
            return matched
    return True


# ---------------------------------------------------------------------------
# Finalization and settlement
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Transfer:
    """One credit movement; settlements are lists of these, so value is conserved."""

    src: str
    dst: str
    amount: float


@dataclass(frozen=True)
class RewardSchedule:
    task_reward: float
    verifier_reward: float = 1.0
    ctf_flag_reward: float = 1.0  # cost of one stage recomputation
    held_block_rewards: float = 0.0


@dataclass(frozen=True)
class VerificationContract:
    task_id: bytes
    prover: int
    verdict: str
    failed_stages: tuple[int, ...]
    reports: tuple[VerifierReport, ...]
    flags_revealed: FlagVector | None
    transfers: tuple[Transfer, ...]
    reason: str = ""

    def to_ledger_entry(self) -> dict:
        return {
            "kind": "verification",
            "task_id": self.task_id.hex(),
            "prover": self.prover,
            "verdict": self.verdict,
            "failed_stages": list(self.failed_stages),
            "reason": self.reason,
            "transfers": [[t.src, t.dst, t.amount] for t in self.transfers],
        }


def finalize_task(
    *,
    task_id: bytes,
    prover: int,
    reports: list[VerifierReport],
    flags_revealed: FlagVector | None,
    expected_commitment: bytes | None,
    schedule: RewardSchedule,
    gamma: float,
    deposit,
    escrow_locked: float,
) -> VerificationContract:
    """Aggregate committee reports, decide the task verdict, settle credits.

    Flag mode is active when ``expected_commitment`` is set; then a withheld
    or forged flag vector fails the task outright. Otherwise the verdict
    fails iff any verifier's audited stage resolves dishonest. Verifiers who
    reported are paid regardless of the verdict, plus the flag bonus for each
    correct nonzero flag; a failing prover is charged ``gamma * task_reward``
    from its security deposit (capped at the deposit), which also voids any
    later refund of that deposit.
    """
    ctf = expected_commitment is not None
    transfers: list[Transfer] = []
    escrow = f"escrow:{task_id.hex()[:16]}"
    failed_stages: list[int] = []
    reason = ""

    if ctf and flags_revealed is None:
        verdict, reason = FAIL, "flags-withheld"
    elif ctf and flags_revealed.commitment != expected_commitment:
        verdict, reason = FAIL, "flag-commitment-mismatch"
    else:
        for report in reports:
            if report.timed_out:
                continue
            for sr in report.stage_reports:
                true_flag = flags_revealed.flag_of(sr.stage) if ctf else None
                if not resolve_stage_verdict(sr, true_flag):
                    failed_stages.append(sr.stage)
        verdict = FAIL if failed_stages else PASS
        if failed_stages:
            reason = "invalid-stage"

    paid = 0.0
    for report in reports:
        if report.timed_out:
            continue
        transfers.append(Transfer(escrow, f"miner:{report.verifier}", schedule.verifier_reward))
        paid += schedule.verifier_reward
        if ctf and flags_revealed is not None:
            correct_nonzero = sum(
                1
                for sr in report.stage_reports
                if sr.reported_flag == flags_revealed.flag_of(sr.stage)
                and sr.reported_flag in (1, 2)
            )
            if correct_nonzero:
                bonus = correct_nonzero * schedule.ctf_flag_reward
                transfers.append(Transfer(escrow, f"miner:{report.verifier}", bonus))
                paid += bonus

    if verdict == PASS:
        transfers.append(Transfer(escrow, f"miner:{prover}", schedule.task_reward))
        paid += schedule.task_reward
        if schedule.held_block_rewards:
            transfers.append(
                Transfer("subsidy", f"miner:{prover}", schedule.held_block_rewards)
            )
    else:
        penalty = min(gamma * schedule.task_reward, float(deposit.amount))
        if penalty > 0:
            transfers.append(Transfer(f"sd:{prover}", "burn", penalty))
        deposit.forfeit()

    refund = escrow_locked - paid
    if refund < -1e-9:
        raise ParameterError("escrow overdrawn: locked amount too small for schedule")
    if refund > 1e-12:
        transfers.append(Transfer(escrow, f"requester:{task_id.hex()[:16]}", refund))

    return VerificationContract(
        task_id=task_id,
        prover=prover,
        verdict=verdict,
        failed_stages=tuple(sorted(set(failed_stages))),
        reports=tuple(reports),
        flags_revealed=flags_revealed,
        transfers=tuple(transfers),
        reason=reason,
    )


# ---------------------------------------------------------------------------
# Statistical model of subset cheating (verification-game Monte Carlo)
# ---------------------------------------------------------------------------

def subset_cheat_pass_rate(
    stage_count: int,
    rho: float,
    kappa: float,
    alpha: int,
    trials: int,
    seed: int,
) -> tuple[float, float]:
    """Empirical pass probability for a prover that fakes a random stage subset.

    The prover cheats on round((1-rho)*S) uniformly chosen stages; one
    verifier audits alpha stages without replacement and detects each audited
    fake independently with probability kappa. Returns (estimate, stderr).
    """
    dishonest = round((1.0 - rho) * stage_count)
    rng = np.random.default_rng(seed)
    if dishonest == 0:
        return 1.0, 0.0
    bad_in_sample = rng.hypergeometric(dishonest, stage_count - dishonest, alpha, size=trials)
    detections = rng.binomial(bad_in_sample, kappa)
    passes = detections == 0
    estimate = float(np.mean(passes))
    stderr = float(np.sqrt(max(estimate * (1 - estimate), 1e-12) / trials))
    return estimate, stderr
