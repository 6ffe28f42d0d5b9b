"""Block construction, two-phase verification and longest-chain state.

A block commits to its parent's summary, the producer's deposit identity, a
ledger payload, the digest of the stage's input (prior weights for training
tasks, the task summary for masked multiplication) and the stage index. The
stage seed is derived from the block's own summary, so any post-hoc edit to
any field changes the seed and invalidates the recorded work; that is the
tamper-evidence the whole protocol rests on.

Verification is two-phase: a cheap threshold test on downloaded digests
(``quick_verify``) gates the expensive full recomputation (``full_verify``).

Serialization is fixed-order and length-prefixed:

    u64be height | 32B prev_summary | u32be len + sd_id | u32be len + ledger
    | 32B work_summary | u64be stage | u8 flag_present [| u8 flag]
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum

from .hashing import (
    DIGEST_LEN,
    ZERO_DIGEST,
    Threshold,
    derive_ctf_seed,
    derive_seed,
    meets_threshold,
    sha256,
)
from .matmul import MatMulTaskSpec, matmul_trace
from .proofs import ProofPackage
from .store import ContentStore
from .training import (
    Dataset,
    MLTaskSpec,
    train_stage,
    weight_summary,
    weights_from_bytes,
)


class UnknownParentError(KeyError):
    """Template references a parent block this node has never seen."""


class QuickVerdict(Enum):
    PASS = "pass"
    FAIL = "fail"
    ORPHANED = "orphaned"

    def __bool__(self) -> bool:
        return self is QuickVerdict.PASS


class FullVerdict(Enum):
    ACCEPT = "accept"
    REJECT_INVALID_WORK = "reject-invalid-work"
    REJECT_SEMANTIC = "reject-semantic"


@dataclass(frozen=True)
class Block:
    height: int
    prev_summary: bytes
    sd_id: bytes
    ledger: bytes
    work_summary: bytes
    stage: int
    flag: int | None = None

    def __post_init__(self):
        if len(self.prev_summary) != DIGEST_LEN or len(self.work_summary) != DIGEST_LEN:
            raise ValueError("summaries must be 32-byte digests")
        if self.flag is not None and self.flag not in (0, 1, 2):
            raise ValueError("flag must be 0, 1 or 2")

    def serialize(self) -> bytes:
        parts = [
            self.height.to_bytes(8, "big"),
            self.prev_summary,
            len(self.sd_id).to_bytes(4, "big"),
            self.sd_id,
            len(self.ledger).to_bytes(4, "big"),
            self.ledger,
            self.work_summary,
            self.stage.to_bytes(8, "big"),
        ]
        if self.flag is None:
            parts.append(b"\x00")
        else:
            parts.append(b"\x01" + bytes([self.flag]))
        return b"".join(parts)

    @classmethod
    def deserialize(cls, raw: bytes) -> "Block":
        pos = 0
        height = int.from_bytes(raw[pos : pos + 8], "big"); pos += 8
        prev_summary = raw[pos : pos + DIGEST_LEN]; pos += DIGEST_LEN
        n = int.from_bytes(raw[pos : pos + 4], "big"); pos += 4
        sd_id = raw[pos : pos + n]; pos += n
        n = int.from_bytes(raw[pos : pos + 4], "big"); pos += 4
        ledger = raw[pos : pos + n]; pos += n
        work_summary = raw[pos : pos + DIGEST_LEN]; pos += DIGEST_LEN
        stage = int.from_bytes(raw[pos : pos + 8], "big"); pos += 8
        flag = raw[pos + 1] if raw[pos] == 1 else None
        return cls(height, prev_summary, sd_id, ledger, work_summary, stage, flag)

    def summary(self) -> bytes:
        return sha256(self.serialize())


# ---------------------------------------------------------------------------
# Ledger payload codec (canonical JSON)
# ---------------------------------------------------------------------------

def encode_ledger(entries: dict) -> bytes:
    return json.dumps(entries, sort_keys=True, separators=(",", ":")).encode()


def decode_ledger(raw: bytes) -> dict:
    return json.loads(raw.decode()) if raw else {}


def validate_ledger(raw: bytes) -> bool:
    """Structural check of a ledger payload.

    Deposits need an id, a positive amount and an owner; task contracts need
    an id, a locked reward and a task summary; verification entries need a
    verdict. Deeper transaction semantics are out of scope here.
    """
    try:
        entries = decode_ledger(raw)
    except (ValueError, UnicodeDecodeError):
        return False
    if not isinstance(entries, dict):
        return False
    for sd in entries.get("sd", []):
        if not isinstance(sd.get("sd_id"), str):
            return False
        if not isinstance(sd.get("amount"), int) or sd["amount"] <= 0:
            return False
        if "owner" not in sd:
            return False
    for sc in entries.get("contracts", []):
        if not isinstance(sc.get("sc_id"), str) or "reward" not in sc:
            return False
        if not isinstance(sc.get("task_summary"), str):
            return False
    for vc in entries.get("verifications", []):
        if vc.get("verdict") not in ("pass", "fail"):
            return False
    return True


def make_genesis(params: dict, deposits: list[dict] | None = None) -> Block:
    """All-zero-parent block embedding the shared protocol parameters.

    Every node derives the same genesis from the same configuration, so the
    whole network agrees on (p, g, g_v, flag ratio, ...) by construction.
    """
    ledger = encode_ledger({"params": params, "sd": deposits or []})
    return Block(
        height=0,
        prev_summary=ZERO_DIGEST,
        sd_id=b"genesis",
        ledger=ledger,
        work_summary=ZERO_DIGEST,
        stage=0,
    )


# ---------------------------------------------------------------------------
# Chain state
# ---------------------------------------------------------------------------

@dataclass
class AcceptResult:
    inserted: bool
    fork_event: bool
    reorged: bool
    released_orphans: list = field(default_factory=list)


class ChainState:
    """Block store plus longest-chain head tracking with first-seen tie-break."""

    def __init__(self, genesis: Block):
        self.genesis = genesis
        g_summary = genesis.summary()
        self.blocks: dict[bytes, Block] = {g_summary: genesis}
        self.arrival: dict[bytes, int] = {g_summary: 0}
        self.canonical_tip: bytes = g_summary
        self.heads: set[bytes] = {g_summary}
        self.fork_events: int = 0
        self._arrival_counter: int = 0
        self._orphans: dict[bytes, list] = {}

    def __contains__(self, summary: bytes) -> bool:
        return summary in self.blocks

    @property
    def canonical_height(self) -> int:
        return self.blocks[self.canonical_tip].height

    def tip_block(self) -> Block:
        return self.blocks[self.canonical_tip]

    def make_template(
        self,
        prev_summary: bytes,
        sd_id: bytes,
        ledger: bytes,
        work_summary: bytes,
        stage: int,
        flag: int | None = None,
    ) -> Block:
        """Build the next-height block candidate on a known parent."""
        parent = self.blocks.get(prev_summary)
        if parent is None:
            raise UnknownParentError(prev_summary.hex())
        return Block(
            height=parent.height + 1,
            prev_summary=prev_summary,
            sd_id=sd_id,
            ledger=ledger,
            work_summary=work_summary,
            stage=stage,
            flag=flag,
        )

    def buffer_orphan(self, block: Block, result_summary: bytes):
        self._orphans.setdefault(block.prev_summary, []).append((block, result_summary))

    def accept_block(self, block: Block, arrival_order: int | None = None) -> AcceptResult:
        """Insert a fully verified block and re-evaluate the canonical tip.

        The canonical tip only changes when the new block is strictly higher
        than the current tip (first-seen wins ties); a verified block at or
        below the canonical height is a fork event. Duplicate inserts are
        no-ops. Returns any buffered orphans whose parent just arrived so the
        caller can resume their verification.
        """
        summary = block.summary()
        if summary in self.blocks:
            return AcceptResult(inserted=False, fork_event=False, reorged=False)
        if block.prev_summary not in self.blocks:
            raise UnknownParentError(block.prev_summary.hex())

        self._arrival_counter += 1
        order = self._arrival_counter if arrival_order is None else arrival_order
        self.blocks[summary] = block
        self.arrival[summary] = order
        self.heads.discard(block.prev_summary)
        self.heads.add(summary)

        fork_event = block.height <= self.canonical_height
        if fork_event:
            self.fork_events += 1

        reorged = False
        if block.height > self.canonical_height:
            reorged = block.prev_summary != self.canonical_tip
            self.canonical_tip = summary

        released = self._orphans.pop(summary, [])
        return AcceptResult(
            inserted=True, fork_event=fork_event, reorged=reorged, released_orphans=released
        )

    def canonical_chain(self) -> list[Block]:
        out = []
        cursor = self.canonical_tip
        while True:
            block = self.blocks[cursor]
            out.append(block)
            if block.height == 0:
                break
            cursor = block.prev_summary
        return list(reversed(out))

    def dump_lines(self) -> list[str]:
        """Audit dump: one JSON line per canonical block."""
        lines = []
        for block in self.canonical_chain():
            lines.append(
                json.dumps(
                    {
                        "height": block.height,
                        "summary": block.summary().hex(),
                        "prev": block.prev_summary.hex(),
                        "sd_id": block.sd_id.hex(),
                        "work": block.work_summary.hex(),
                        "stage": block.stage,
                        "flag": block.flag,
                    },
                    sort_keys=True,
                )
            )
        return lines


# ---------------------------------------------------------------------------
# Verification
# ---------------------------------------------------------------------------

def check_bgo(result_summary: bytes, prev_summary: bytes, threshold: Threshold) -> bool:
    """Block-generation test: hash the stage-output digest with the parent
    summary and compare against the difficulty threshold."""
    return meets_threshold(sha256(result_summary + prev_summary), threshold)


def quick_verify(
    block: Block, result_summary: bytes, threshold: Threshold, state: ChainState
) -> QuickVerdict:
    """Phase one: parent known and the threshold test passes.

    Costs one digest download and two hashes; an unknown parent buffers the
    block for re-evaluation instead of rejecting it.
    """
    if block.prev_summary not in state.blocks:
        state.buffer_orphan(block, result_summary)
        return QuickVerdict.ORPHANED
    parent = state.blocks[block.prev_summary]
    if block.height != parent.height + 1:
        return QuickVerdict.FAIL
    if check_bgo(result_summary, block.prev_summary, threshold):
        return QuickVerdict.PASS
    return QuickVerdict.FAIL


def full_verify(
    block: Block,
    proof: ProofPackage,
    task: MLTaskSpec | MatMulTaskSpec,
    threshold: Threshold,
    store: ContentStore,
    dataset: Dataset | None = None,
) -> FullVerdict:
    """Phase two: recompute the committed stage and validate the ledger.

    The stage seed is re-derived from the block's own summary (and the block
    flag when present), so work recorded under any other block, height or
    ledger cannot reproduce the committed digest.
    """
    base_seed = derive_seed(block.summary(), block.stage)
    seed = base_seed if block.flag is None else derive_ctf_seed(base_seed, block.flag)

    if isinstance(task, MLTaskSpec):
        w_prev_raw = store.get(proof.w_prev_id)
        if sha256(w_prev_raw) != block.work_summary:
            return FullVerdict.REJECT_INVALID_WORK
        if dataset is None:
            dataset = Dataset.from_bytes(store.get(bytes.fromhex(task.dataset_id)))
        w_out = train_stage(task, weights_from_bytes(w_prev_raw), seed, dataset)
        if weight_summary(w_out) != proof.result_summary:
            return FullVerdict.REJECT_INVALID_WORK
    else:
        if task.summary() != block.work_summary:
            return FullVerdict.REJECT_INVALID_WORK
        trace = matmul_trace(task, seed)
        if trace.summary() != proof.result_summary:
            return FullVerdict.REJECT_INVALID_WORK

    if not check_bgo(proof.result_summary, block.prev_summary, threshold):
        return FullVerdict.REJECT_INVALID_WORK
    if not validate_ledger(block.ledger):
        return FullVerdict.REJECT_SEMANTIC
    return FullVerdict.ACCEPT
