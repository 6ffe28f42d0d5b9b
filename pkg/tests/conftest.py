import numpy as np
import pytest

from polsim.chain import ChainState, encode_ledger, make_genesis
from polsim.hashing import Threshold, derive_ctf_seed, derive_seed
from polsim.proofs import ProofPackage
from polsim.store import ContentStore
from polsim.training import make_reference_task, train_stage, weight_summary, weights_to_bytes


@pytest.fixture()
def store():
    return ContentStore()


@pytest.fixture()
def genesis_state():
    return ChainState(make_genesis({"p": 1.0, "g": 4, "g_v": 1, "xi": 0.2}))


@pytest.fixture(scope="session")
def reference_task():
    return make_reference_task()


def mine_honest_block(
    state: ChainState,
    ref,
    w_prev: np.ndarray,
    stage: int,
    store: ContentStore,
    sd_id: bytes = b"sd-test",
    ledger: bytes | None = None,
    flag: int | None = None,
    prev_summary: bytes | None = None,
):
    """Train one stage against a fresh template and package the proof.

    Returns (block, package, w_out). With threshold p=1 the block is always
    BGO-valid; callers at lower p must test the threshold themselves.
    """
    if ledger is None:
        ledger = encode_ledger({})
    prev = state.canonical_tip if prev_summary is None else prev_summary
    block = state.make_template(
        prev_summary=prev,
        sd_id=sd_id,
        ledger=ledger,
        work_summary=weight_summary(w_prev),
        stage=stage,
        flag=flag,
    )
    base_seed = derive_seed(block.summary(), stage)
    seed = base_seed if flag is None else derive_ctf_seed(base_seed, flag)
    w_out = train_stage(ref.spec, w_prev, seed, ref.dataset)
    pkg = ProofPackage(
        stage=stage,
        w_prev_id=store.put(weights_to_bytes(w_prev)),
        seed=base_seed,
        result_summary=weight_summary(w_out),
    )
    return block, pkg, w_out


@pytest.fixture()
def p_one():
    return Threshold.from_probability(1.0)
