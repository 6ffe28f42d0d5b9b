"""Security-deposit lifecycle, hash-sorted group appointment, task assignment.

Roles are a lottery over on-chain randomness: every new deposit (and every
unassigned task contract) is ranked by hashing it together with the summary
of the block that recorded it, so nobody can predict or grind their rank
before the block exists. Sorted deposits are chunked into groups; within a
group the lowest-ranked members become the verifier committee.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .hashing import sha256

DEFAULT_DEPOSIT_AMOUNT = 100
DEFAULT_REFUND_WINDOW = 6

STATUS_PENDING = "pending"
STATUS_ACTIVE = "active"
STATUS_REFUND_CLAIMED = "refund-claimed"
STATUS_FORFEITED = "forfeited"


@dataclass
class SecurityDeposit:
    """Locked credit that doubles as miner identity and lottery ticket."""

    sd_id: bytes
    owner: int
    amount: int = DEFAULT_DEPOSIT_AMOUNT
    recorded_height: int = 0
    status: str = STATUS_PENDING

    def __post_init__(self):
        if self.amount <= 0:
            raise ValueError("deposit amount must be positive")

    def serialize(self) -> bytes:
        return (
            len(self.sd_id).to_bytes(4, "big")
            + self.sd_id
            + self.owner.to_bytes(8, "big", signed=False)
            + self.amount.to_bytes(8, "big")
            + self.recorded_height.to_bytes(8, "big")
        )

    def forfeit(self):
        self.status = STATUS_FORFEITED

    def claim_refund(self) -> bool:
        if self.status == STATUS_FORFEITED:
            return False
        self.status = STATUS_REFUND_CLAIMED
        return True


@dataclass(frozen=True)
class TaskContract:
    """On-chain stub of a useful-work task with its locked reward."""

    sc_id: bytes
    reward: int
    task_summary: bytes

    def serialize(self) -> bytes:
        return (
            len(self.sc_id).to_bytes(4, "big")
            + self.sc_id
            + self.reward.to_bytes(8, "big")
            + len(self.task_summary).to_bytes(4, "big")
            + self.task_summary
        )


@dataclass(frozen=True)
class Group:
    """g appointed miners; the g_v lowest-ranked are the verifier committee."""

    members: tuple[SecurityDeposit, ...]
    verifiers: tuple[SecurityDeposit, ...]
    provers: tuple[SecurityDeposit, ...]
    formed_at_height: int

    def __post_init__(self):
        assert set(id(m) for m in self.verifiers).isdisjoint(id(m) for m in self.provers)
        assert len(self.verifiers) + len(self.provers) == len(self.members)


def rank_deposit(block_summary: bytes, deposit: SecurityDeposit) -> bytes:
    """Lottery rank of a deposit under a given block: hash(summary || deposit)."""
    return sha256(block_summary + deposit.serialize())


def rank_task(block_summary: bytes, contract: TaskContract) -> bytes:
    """Lottery rank of an unassigned task contract under a given block."""
    return sha256(block_summary + contract.serialize())


def form_groups(
    new_deposits: list[SecurityDeposit],
    buffer: list[SecurityDeposit],
    block_summary: bytes,
    g: int,
    g_v: int,
    formed_at_height: int = 0,
) -> tuple[list[Group], list[SecurityDeposit]]:
    """Chunk ranked deposits into groups of g; the remainder waits in the buffer.

    Buffered deposits are re-ranked under the latest block's summary together
    with the new arrivals, keeping appointments unpredictable. Rank ties are
    broken by deposit id bytes so the ordering is total.
    """
    if not 0 < g_v < g:
        raise ValueError("need 0 < g_v < g")
    pool = list(buffer) + list(new_deposits)
    ranked = sorted(pool, key=lambda sd: (rank_deposit(block_summary, sd), sd.sd_id))
    groups = []
    for start in range(0, len(ranked) - g + 1, g):
        chunk = ranked[start : start + g]
        group = Group(
            members=tuple(chunk),
            verifiers=tuple(chunk[:g_v]),
            provers=tuple(chunk[g_v:]),
            formed_at_height=formed_at_height,
        )
        for sd in chunk:
            sd.status = STATUS_ACTIVE
        groups.append(group)
    leftover = ranked[len(ranked) - (len(ranked) % g) :] if len(ranked) % g else []
    return groups, leftover


@dataclass
class TaskPool:
    """Unassigned task contracts; a task is handed to at most one prover."""

    unassigned: dict[bytes, TaskContract] = field(default_factory=dict)

    def add(self, contract: TaskContract):
        self.unassigned[contract.sc_id] = contract

    def __len__(self) -> int:
        return len(self.unassigned)


def assign_tasks(
    provers_by_rank: list[SecurityDeposit],
    pool: TaskPool,
    block_summary: bytes,
) -> tuple[list[tuple[SecurityDeposit, TaskContract]], list[SecurityDeposit]]:
    """Zip rank-sorted provers with rank-sorted tasks until either side runs out.

    Mutates the pool: assigned contracts leave it. Returns the assignments and
    the provers left waiting for future tasks.
    """
    ranked_tasks = sorted(
        pool.unassigned.values(),
        key=lambda sc: (rank_task(block_summary, sc), sc.sc_id),
    )
    assignments = []
    for prover, contract in zip(provers_by_rank, ranked_tasks):
        assignments.append((prover, contract))
        del pool.unassigned[contract.sc_id]
    return assignments, list(provers_by_rank[len(assignments) :])
