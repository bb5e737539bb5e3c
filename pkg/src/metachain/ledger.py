"""Blocks, transactions, chain/DAG ledger views, fork choice, and the two
ledger-conversion procedures.

A LedgerView is single-writer: operations mutate it in place and return it.
Replicas in the network simulator each own their view; nothing here locks.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Optional

from metachain import crypto


class LedgerError(Exception):
    pass


class UnknownParent(LedgerError):
    pass


class WrongParentArity(LedgerError):
    pass


class DuplicateBlock(LedgerError):
    pass


class ConvertHeightTooLow(LedgerError):
    pass


class NoCandidateAtHeight(LedgerError):
    pass


class EmptyCandidates(LedgerError):
    pass


class Mode(Enum):
    CHAIN = "Chain"
    DAG = "Dag"


def _enc_str(s: str) -> bytes:
    raw = s.encode()
    return len(raw).to_bytes(4, "big") + raw


def _enc_bytes(b: bytes) -> bytes:
    return len(b).to_bytes(4, "big") + b


def tx_digest(sender: str, payload: bytes, nonce: int) -> bytes:
    return crypto.sha256(_enc_str(sender), _enc_bytes(payload), nonce.to_bytes(8, "big"))


@dataclass(frozen=True)
class Transaction:
    txid: bytes
    sender: str
    payload: bytes
    nonce: int
    signature: bytes

    def verify(self, public_bytes: bytes) -> bool:
        if self.txid != tx_digest(self.sender, self.payload, self.nonce):
            return False
        return crypto.verify(public_bytes, self.txid, self.signature)

    def to_json(self) -> dict:
        return {
            "txid": self.txid.hex(),
            "sender": self.sender,
            "payload": self.payload.hex(),
            "nonce": self.nonce,
            "signature": self.signature.hex(),
        }


def make_transaction(sender: str, payload: bytes, nonce: int, keystore: crypto.KeyStore) -> Transaction:
    txid = tx_digest(sender, payload, nonce)
    return Transaction(txid, sender, payload, nonce, keystore.sign(sender, txid))


def block_digest(
    height: int,
    parents: tuple[bytes, ...],
    proposer: str,
    txs: tuple[Transaction, ...],
    tick: int,
    consensus_meta: bytes,
) -> bytes:
    parts = [height.to_bytes(8, "big"), len(parents).to_bytes(4, "big")]
    parts.extend(parents)
    parts.append(_enc_str(proposer))
    parts.append(len(txs).to_bytes(4, "big"))
    parts.extend(tx.txid for tx in txs)
    parts.append(tick.to_bytes(8, "big"))
    parts.append(_enc_bytes(consensus_meta))
    return crypto.sha256(*parts)


@dataclass(frozen=True)
class Block:
    height: int
    parents: tuple[bytes, ...]
    proposer: str
    txs: tuple[Transaction, ...]
    tick: int
    consensus_meta: bytes
    blockhash: bytes

    def to_json(self) -> dict:
        return {
            "height": self.height,
            "parents": [p.hex() for p in self.parents],
            "proposer": self.proposer,
            "txs": [t.to_json() for t in self.txs],
            "tick": self.tick,
            "consensusMeta": self.consensus_meta.hex(),
            "blockhash": self.blockhash.hex(),
        }


def make_block(
    height: int,
    parents: Iterable[bytes],
    proposer: str,
    txs: Iterable[Transaction] = (),
    tick: int = 0,
    consensus_meta: bytes = b"",
) -> Block:
    parents = tuple(parents)
    txs = tuple(txs)
    h = block_digest(height, parents, proposer, txs, tick, consensus_meta)
    return Block(height, parents, proposer, txs, tick, consensus_meta, h)


GENESIS = make_block(0, (), "genesis")


class LedgerView:
    """Mutable block store plus committed-prefix bookkeeping.

    `blocks` preserves insertion order (the dump format requires it).
    `discarded` holds fork blocks evicted from the committed set at a
    conversion; they stay inspectable but never re-enter fork choice.
    """

    def __init__(self, mode: Mode = Mode.CHAIN, genesis: Block = GENESIS):
        self.mode = mode
        self.blocks: dict[bytes, Block] = {genesis.blockhash: genesis}
        self.children: dict[bytes, list[bytes]] = {genesis.blockhash: []}
        self.tips: set[bytes] = {genesis.blockhash}
        self.committed_height = 0
        self.convert_height: Optional[int] = None
        self.committed_chain: list[bytes] = [genesis.blockhash]
        self.conversion_leader: bytes = genesis.blockhash
        self.discarded: set[bytes] = set()
        self.recalled_txs: list[Transaction] = []
        self.genesis_hash = genesis.blockhash

    def __contains__(self, blockhash: bytes) -> bool:
        return blockhash in self.blocks

    def block(self, blockhash: bytes) -> Block:
        return self.blocks[blockhash]

    def heights(self) -> dict[int, list[bytes]]:
        by_height: dict[int, list[bytes]] = {}
        for h, b in self.blocks.items():
            by_height.setdefault(b.height, []).append(h)
        return by_height

    def max_height(self) -> int:
        return max(b.height for b in self.blocks.values())

    def path_to(self, blockhash: bytes) -> list[bytes]:
        """Hashes from genesis to `blockhash`, following first parents."""
        path = []
        cur = blockhash
        while True:
            path.append(cur)
            parents = self.blocks[cur].parents
            if not parents:
                break
            cur = parents[0]
        path.reverse()
        return path

    def descendants(self, blockhash: bytes) -> set[bytes]:
        seen: set[bytes] = set()
        stack = list(self.children.get(blockhash, ()))
        while stack:
            h = stack.pop()
            if h in seen:
                continue
            seen.add(h)
            stack.extend(self.children.get(h, ()))
        return seen


def append_block(ledger: LedgerView, block: Block) -> LedgerView:
    if block.blockhash in ledger.blocks:
        raise DuplicateBlock(block.blockhash.hex())
    if ledger.mode is Mode.CHAIN and len(block.parents) != 1:
        raise WrongParentArity(f"chain block with {len(block.parents)} parents")
    if ledger.mode is Mode.DAG and len(block.parents) < 1:
        raise WrongParentArity("dag block with no parents")
    for p in block.parents:
        if p not in ledger.blocks:
            raise UnknownParent(p.hex())
        if ledger.blocks[p].height >= block.height:
            raise WrongParentArity(
                f"parent at height {ledger.blocks[p].height} not below {block.height}"
            )
    ledger.blocks[block.blockhash] = block
    ledger.children[block.blockhash] = []
    for p in block.parents:
        ledger.children[p].append(block.blockhash)
        ledger.tips.discard(p)
    ledger.tips.add(block.blockhash)
    return ledger


def longest_chain_tip(ledger: LedgerView) -> bytes:
    """Tip of the maximal-length root path; ties go to the smallest hash."""
    best = None
    for h in ledger.tips:
        if h in ledger.discarded:
            continue
        key = (-ledger.blocks[h].height, h)
        if best is None or key < best:
            best = key
    if best is None:  # all tips discarded: fall back to the committed tip
        return ledger.committed_chain[-1]
    return best[1]


def subtree_sizes(ledger: LedgerView) -> dict[bytes, int]:
    """Number of non-discarded blocks in each block's subtree (self included)."""
    sizes: dict[bytes, int] = {}
    order = sorted(
        (h for h in ledger.blocks if h not in ledger.discarded),
        key=lambda h: ledger.blocks[h].height,
        reverse=True,
    )
    for h in order:
        sizes[h] = 1 + sum(sizes.get(c, 0) for c in ledger.children[h] if c not in ledger.discarded)
    return sizes


def ghost_tip(ledger: LedgerView) -> bytes:
    """Greedy heaviest-subtree descent from genesis; ties to smallest hash."""
    sizes = subtree_sizes(ledger)
    cur = ledger.genesis_hash
    while True:
        live = [c for c in ledger.children[cur] if c not in ledger.discarded]
        if not live:
            return cur
        cur = min(live, key=lambda c: (-sizes[c], c))


def beacon_elect(seed: bytes, candidates: list[bytes]) -> bytes:
    """Deterministic leader among sorted candidates: hash(seed || all) mod n."""
    if not candidates:
        raise EmptyCandidates()
    ordered = sorted(candidates)
    digest = crypto.sha256(seed, *ordered)
    return ordered[int.from_bytes(digest, "big") % len(ordered)]


def beacon_seed_for(ledger: LedgerView, convert_height: int) -> bytes:
    """Shared beacon seed: hash of the committed block at height max(Ĥ-2, 0)."""
    anchor = max(convert_height - 2, 0)
    anchor = min(anchor, len(ledger.committed_chain) - 1)
    return crypto.sha256(b"beacon:", ledger.committed_chain[anchor])


def chain_to_dag(ledger: LedgerView, convert_height: int, beacon_seed: bytes) -> LedgerView:
    """Switch to DAG mode at Ĥ, electing one block at Ĥ-1 as the committed
    leader when the chain is forked there. Evicted branches keep their blocks
    in the store but leave the committed set; their transactions are recalled
    for the pending pools (ledger.recalled_txs)."""
    if ledger.mode is not Mode.CHAIN:
        raise LedgerError("chain_to_dag requires Chain mode")
    if convert_height <= ledger.committed_height:
        raise ConvertHeightTooLow(f"{convert_height} <= {ledger.committed_height}")
    candidates = sorted(h for h, b in ledger.blocks.items()
                        if b.height == convert_height - 1 and h not in ledger.discarded)
    if not candidates:
        raise NoCandidateAtHeight(str(convert_height - 1))
    leader = candidates[0] if len(candidates) == 1 else beacon_elect(beacon_seed, candidates)

    committed = ledger.path_to(leader)
    keep = set(committed) | ledger.descendants(leader)
    recalled: list[Transaction] = []
    kept_txids = {t.txid for h in keep for t in ledger.blocks[h].txs}
    for h, b in ledger.blocks.items():
        if h in keep or h in ledger.discarded:
            continue
        ledger.discarded.add(h)
        ledger.tips.discard(h)
        recalled.extend(t for t in b.txs if t.txid not in kept_txids)

    ledger.mode = Mode.DAG
    ledger.committed_chain = committed
    ledger.committed_height = convert_height - 1
    ledger.conversion_leader = leader
    ledger.convert_height = convert_height
    ledger.recalled_txs = recalled
    if not ledger.tips:
        ledger.tips = {leader}
    return ledger


def dag_to_chain(ledger: LedgerView, convert_height: int) -> LedgerView:
    """Linearize the canonical DAG prefix below Ĥ into a single-parent chain.

    Order is (height, blockhash); blocks whose parent link and height are
    unchanged are reused verbatim, others are rebuilt (and re-hashed) with
    duplicate transactions dropped. Blocks at or above Ĥ are recalled."""
    if ledger.mode is not Mode.DAG:
        raise LedgerError("dag_to_chain requires Dag mode")
    if convert_height <= ledger.committed_height:
        raise ConvertHeightTooLow(f"{convert_height} <= {ledger.committed_height}")

    canonical = set(ledger.committed_chain) | {
        h for h in ledger.descendants(ledger.conversion_leader) if h not in ledger.discarded
    }
    order = sorted(
        (h for h in canonical if ledger.blocks[h].height < convert_height),
        key=lambda h: (ledger.blocks[h].height, h),
    )
    recalled: list[Transaction] = []
    seen_txids: set[bytes] = set()
    new_chain: list[Block] = []
    prev: Optional[Block] = None
    for i, h in enumerate(order):
        old = ledger.blocks[h]
        want_parents = () if i == 0 else (prev.blockhash,)
        txs = tuple(t for t in old.txs if t.txid not in seen_txids)
        seen_txids.update(t.txid for t in txs)
        if old.height == i and old.parents == want_parents and txs == old.txs:
            new = old
        else:
            new = make_block(i, want_parents, old.proposer, txs, old.tick, old.consensus_meta)
        new_chain.append(new)
        prev = new

    for h, b in ledger.blocks.items():
        if h in ledger.discarded:
            continue  # already recalled when the branch was evicted
        if h not in canonical or b.height >= convert_height:
            recalled.extend(t for t in b.txs if t.txid not in seen_txids)

    ledger.mode = Mode.CHAIN
    ledger.blocks = {b.blockhash: b for b in new_chain}
    ledger.children = {b.blockhash: [] for b in new_chain}
    for i in range(1, len(new_chain)):
        ledger.children[new_chain[i - 1].blockhash].append(new_chain[i].blockhash)
    ledger.tips = {new_chain[-1].blockhash}
    ledger.committed_chain = [b.blockhash for b in new_chain]
    ledger.committed_height = new_chain[-1].height
    ledger.conversion_leader = new_chain[-1].blockhash
    ledger.genesis_hash = new_chain[0].blockhash
    ledger.discarded = set()
    ledger.convert_height = None
    ledger.recalled_txs = recalled
    return ledger


def committed_sequence(ledger: LedgerView) -> list[Block]:
    return [ledger.blocks[h] for h in ledger.committed_chain]


def advance_commit(ledger: LedgerView, tip: bytes, depth: int) -> list[Block]:
    """Extend the committed prefix along the path to `tip`, leaving the last
    `depth` blocks uncommitted. Returns newly committed blocks in order."""
    path = ledger.path_to(tip)
    cutoff = len(path) - depth
    newly: list[Block] = []
    for i in range(len(ledger.committed_chain), cutoff):
        h = path[i]
        if ledger.committed_chain and path[i - 1] != ledger.committed_chain[-1]:
            raise LedgerError("commit path diverges from committed prefix")
        ledger.committed_chain.append(h)
        ledger.committed_height = ledger.blocks[h].height
        newly.append(ledger.blocks[h])
    return newly


def is_acyclic(ledger: LedgerView) -> bool:
    """Topological-sort check over parent edges."""
    indeg = {h: len(b.parents) for h, b in ledger.blocks.items()}
    queue = [h for h, d in indeg.items() if d == 0]
    seen = 0
    while queue:
        h = queue.pop()
        seen += 1
        for c in ledger.children.get(h, ()):
            indeg[c] -= 1
            if indeg[c] == 0:
                queue.append(c)
    return seen == len(ledger.blocks)


def dump_json(ledger: LedgerView) -> str:
    """Canonical one-document dump: mode, blocks in insertion order,
    committedHeight. Bit-exact for equal seeds."""
    doc = {
        "mode": ledger.mode.value,
        "blocks": [b.to_json() for b in ledger.blocks.values()],
        "committedHeight": ledger.committed_height,
    }
    return json.dumps(doc, sort_keys=True, separators=(",", ":"))
