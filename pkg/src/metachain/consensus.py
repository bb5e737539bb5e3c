"""Pluggable consensus engines (PoW, PoA, TDPoS) and the hot-plug
replacement protocol.

Engines are pure state machines: the network simulator owns scheduling and
message passing, this module owns leader selection, proof production and
block validation, and the switch-proposal lifecycle.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Optional

from metachain import crypto, ledger
from metachain._kernels import leading_zero_bits, pow_scan


class ConsensusError(Exception):
    pass


class NotFound(ConsensusError):
    pass


class MalformedMeta(ConsensusError):
    pass


class EmptyAuthorities(ConsensusError):
    pass


class NoVoters(ConsensusError):
    pass


class NotMyTurn(ConsensusError):
    pass


class SameKind(ConsensusError):
    pass


class HeightInPast(ConsensusError):
    pass


class AlreadyResolved(ConsensusError):
    pass


class ConsensusKind(Enum):
    POW = "PoW"
    POA = "PoA"
    TDPOS = "TDPoS"

    @classmethod
    def parse(cls, name: str) -> "ConsensusKind":
        for kind in cls:
            if kind.value.lower() == name.lower():
                return kind
        raise ValueError(f"unknown consensus kind: {name!r}")


# delegates are re-elected every this many blocks
TDPOS_EPOCH_BLOCKS = 12


@dataclass
class EngineConfig:
    kind: ConsensusKind
    block_interval_ticks: int = 40
    difficulty: int = 9                      # PoW leading-zero bits
    authorities: tuple[str, ...] = ()        # PoA, rotation order
    delegate_count: int = 4                  # TDPoS
    votes: dict[str, int] = field(default_factory=dict)  # TDPoS stake ledger
    max_block_txs: int = 100

    def __post_init__(self):
        if self.kind is ConsensusKind.POA and not self.authorities:
            raise ValueError("PoA requires a non-empty authority list")
        if self.kind is ConsensusKind.TDPOS and self.delegate_count < 1:
            raise ValueError("TDPoS requires delegate_count >= 1")
        if self.block_interval_ticks < 1:
            raise ValueError("block_interval_ticks must be positive")


class SwitchStatus(Enum):
    PENDING = "Pending"
    SUCCESS = "Success"
    FAILURE = "Failure"


@dataclass
class SwitchProposal:
    proposal_id: bytes
    from_kind: ConsensusKind
    to_kind: ConsensusKind
    vote_collect_height: int
    trigger_threshold: float
    effective_height: int
    status: SwitchStatus = SwitchStatus.PENDING
    votes: set[str] = field(default_factory=set)


# ----------------------------------------------------------------- PoW

def pow_header(height: int, parents: tuple[bytes, ...], proposer: str) -> bytes:
    """Grinding header: commits to position and proposer, not to the tx set,
    so a tip change is the only event that restarts a miner's scan."""
    parts = [height.to_bytes(8, "big"), len(parents).to_bytes(4, "big")]
    parts.extend(parents)
    parts.append(proposer.encode())
    return crypto.sha256(*parts)


def pow_mine(header: bytes, difficulty: int, max_iters: int) -> Optional[int]:
    """Deterministic scan from nonce 0; None after max_iters misses
    (caller retries next tick)."""
    nonce = pow_scan(header, difficulty, 0, max_iters)
    return None if nonce < 0 else nonce


def pow_validate(block: ledger.Block, difficulty: int) -> bool:
    if len(block.consensus_meta) != 8:
        raise MalformedMeta(f"expected 8-byte nonce, got {len(block.consensus_meta)}")
    header = pow_header(block.height, block.parents, block.proposer)
    digest = crypto.sha256(header, block.consensus_meta)
    return leading_zero_bits(digest) >= difficulty


# ----------------------------------------------------------------- PoA

def poa_leader(round_index: int, authorities: tuple[str, ...]) -> str:
    if not authorities:
        raise EmptyAuthorities()
    return authorities[round_index % len(authorities)]


# --------------------------------------------------------------- TDPoS

def tdpos_elect(votes: dict[str, int], delegate_count: int) -> list[str]:
    """Top-stake delegates, ties by smallest node id."""
    if not votes:
        raise NoVoters()
    ranked = sorted(votes, key=lambda n: (-votes[n], n))
    return ranked[:delegate_count]


def tdpos_slot_owner(height: int, delegates: list[str]) -> str:
    """Proposer for a given block height within the current epoch."""
    return delegates[(height - 1) % len(delegates)]


# ----------------------------------------------------------- proposals

def proposer_signature(keystore: crypto.KeyStore, proposer: str,
                       height: int, parents: tuple[bytes, ...]) -> bytes:
    return keystore.sign(proposer, pow_header(height, parents, proposer))


def verify_proposer_signature(block: ledger.Block, public_bytes: bytes) -> bool:
    message = pow_header(block.height, block.parents, block.proposer)
    return crypto.verify(public_bytes, message, block.consensus_meta)


def propose_block(
    engine: EngineConfig,
    node: str,
    view: ledger.LedgerView,
    pending_txs: list[ledger.Transaction],
    round_index: Optional[int] = None,
    tick: int = 0,
    keystore: Optional[crypto.KeyStore] = None,
    mined_nonce: Optional[int] = None,
) -> ledger.Block:
    """Assemble the next block for `node`, or raise NotMyTurn.

    PoW expects a nonce from a successful pow_mine; PoA/TDPoS expect the
    caller to be the round leader / slot delegate. Parents come from the
    view's fork-choice rule. Empty blocks are permitted.
    """
    if view.mode is ledger.Mode.CHAIN:
        tip = ledger.longest_chain_tip(view)
        parents = (tip,)
        height = view.block(tip).height + 1
    else:
        live_tips = sorted(h for h in view.tips if h not in view.discarded)
        parents = tuple(live_tips) or (view.conversion_leader,)
        height = max(view.block(p).height for p in parents) + 1
    if round_index is None:
        round_index = height

    kind = engine.kind
    if kind is ConsensusKind.POW:
        if mined_nonce is None:
            header = pow_header(height, parents, node)
            mined_nonce = pow_mine(header, engine.difficulty, 1 << (engine.difficulty + 6))
            if mined_nonce is None:
                raise NotFound("mining budget exhausted")
        meta = mined_nonce.to_bytes(8, "big")
    elif kind is ConsensusKind.POA:
        if poa_leader(round_index, engine.authorities) != node:
            raise NotMyTurn(node)
        meta = proposer_signature(keystore, node, height, parents) if keystore else b"\x00" * 64
    else:
        delegates = tdpos_elect(engine.votes, engine.delegate_count)
        if tdpos_slot_owner(height, delegates) != node:
            raise NotMyTurn(node)
        meta = proposer_signature(keystore, node, height, parents) if keystore else b"\x00" * 64

    txs = tuple(pending_txs[: engine.max_block_txs])
    return ledger.make_block(height, parents, node, txs, tick, meta)


def validate_block(engine: EngineConfig, block: ledger.Block,
                   keystore: Optional[crypto.KeyStore] = None,
                   check_signature: bool = False) -> bool:
    """Engine-level validity: proof-of-work meets difficulty, or the
    proposer is the scheduled leader/delegate (with optional signature
    verification against the proposer's key)."""
    kind = engine.kind
    if kind is ConsensusKind.POW:
        try:
            return pow_validate(block, engine.difficulty)
        except MalformedMeta:
            return False
    if kind is ConsensusKind.POA:
        expected = poa_leader(block.height, engine.authorities)
    else:
        expected = tdpos_slot_owner(block.height, tdpos_elect(engine.votes, engine.delegate_count))
    if block.proposer != expected:
        return False
    if check_signature and keystore is not None:
        return verify_proposer_signature(block, keystore.public_bytes(block.proposer))
    return True


# -------------------------------------------------------------- switch

def propose_switch(
    from_kind: ConsensusKind,
    to_kind: ConsensusKind,
    vote_collect_height: int,
    trigger_threshold: float,
    effective_height: int,
    current_height: int = 0,
) -> SwitchProposal:
    if to_kind is from_kind:
        raise SameKind(to_kind.value)
    if not (effective_height > vote_collect_height > current_height):
        raise HeightInPast(
            f"need effective {effective_height} > collect {vote_collect_height} > current {current_height}"
        )
    pid = crypto.sha256(
        from_kind.value.encode(), to_kind.value.encode(),
        vote_collect_height.to_bytes(8, "big"), effective_height.to_bytes(8, "big"),
        str(trigger_threshold).encode(),
    )
    return SwitchProposal(pid, from_kind, to_kind, vote_collect_height,
                          trigger_threshold, effective_height)


def tally_and_apply(proposal: SwitchProposal, votes: set[str],
                    live_nodes: int, current_height: int) -> SwitchProposal:
    """Resolve a pending proposal once the collect height is reached.

    Success means every honest node replaces its engine at the effective
    height (the simulator performs the swap); failure means no action."""
    if proposal.status is not SwitchStatus.PENDING:
        raise AlreadyResolved(proposal.status.value)
    if current_height < proposal.vote_collect_height:
        raise HeightInPast(
            f"tally at {current_height} before collect height {proposal.vote_collect_height}"
        )
    quorum = len(votes) / live_nodes if live_nodes else 0.0
    status = SwitchStatus.SUCCESS if quorum >= proposal.trigger_threshold else SwitchStatus.FAILURE
    return replace(proposal, status=status, votes=set(votes))
