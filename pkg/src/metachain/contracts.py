"""Gas-metered native contracts executed during block application.

The runtime hosts four contracts plus the trust registry as Python state
machines behind a uniform call envelope. Gas is charged per primitive
touch (base 50, read 5, write 20, hash 30, signature-verify 100); any
error leaves state bit-identical to before the call.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Optional

from metachain import crypto

GAS_BASE = 50
GAS_READ = 5
GAS_WRITE = 20
GAS_HASH = 30
GAS_SIGVERIFY = 100

UNMETERED = 1 << 62


class ContractError(Exception):
    """Base for revert reasons; the class name is the reason string."""


class OutOfGas(ContractError):
    pass


class Revert(ContractError):
    pass


class AlreadyVoted(ContractError):
    pass


class ThresholdNotMet(ContractError):
    pass


class HeightInPast(ContractError):
    pass


class ZeroPrice(ContractError):
    pass


class UnknownToken(ContractError):
    pass


class TokenUnproven(ContractError):
    pass


class AlreadyRented(ContractError):
    pass


class InsufficientDeposit(ContractError):
    pass


class InsufficientFunds(ContractError):
    pass


class NoActiveRental(ContractError):
    pass


class NotRenterBeforeTimeout(ContractError):
    pass


class NotOwner(ContractError):
    pass


class ActiveRentalExists(ContractError):
    pass


class TooFewParticipants(ContractError):
    pass


class ZeroDeposit(ContractError):
    pass


class RentalFailed(ContractError):
    pass


class WrongState(ContractError):
    pass


class MissingSignature(ContractError):
    pass


class NotEvaluated(ContractError):
    pass


class GasMeter:
    __slots__ = ("limit", "used")

    def __init__(self, limit: int):
        self.limit = limit
        self.used = 0

    def charge(self, amount: int) -> None:
        if self.used + amount > self.limit:
            self.used = self.limit
            raise OutOfGas()
        self.used += amount

    def base(self) -> None:
        self.charge(GAS_BASE)

    def read(self) -> None:
        self.charge(GAS_READ)

    def write(self) -> None:
        self.charge(GAS_WRITE)

    def hash(self) -> None:
        self.charge(GAS_HASH)

    def sig_verify(self) -> None:
        self.charge(GAS_SIGVERIFY)


def _free_meter() -> GasMeter:
    return GasMeter(UNMETERED)


# ------------------------------------------------------------- state

class ConversionDirection(Enum):
    CHAIN_TO_DAG = "ChainToDAG"
    DAG_TO_CHAIN = "DAGToChain"


@dataclass
class PendingConversion:
    direction: ConversionDirection
    convert_height: int
    consensus_name: str


@dataclass
class LedgerConversionState:
    threshold: int
    is_vote: dict[str, bool] = field(default_factory=dict)
    vote_count: int = 0
    pending: Optional[PendingConversion] = None


class ResourceType(Enum):
    CPU = "CPU"
    GPU = "GPU"
    DISK = "Disk"


class Validity(Enum):
    PROVEN = "Proven"
    UNPROVEN = "Unproven"
    UNRENTABLE = "Unrentable"


@dataclass
class Rental:
    renter: str
    deposit: int
    start_height: int
    rent_blocks: int


@dataclass
class NfrRecord:
    token_id: int
    resource_owner: str
    resource_type: ResourceType
    price: int
    rental: Optional[Rental] = None
    validity: Validity = Validity.UNPROVEN
    cancelled: bool = False


@dataclass
class NfrState:
    next_token_id: int = 1
    tokens: dict[int, NfrRecord] = field(default_factory=dict)


class OtmcStage(Enum):
    OPEN = "Open"
    RUN = "Run"
    CLOSE = "Close"


@dataclass
class RentalRequest:
    renter: str
    token_id: int
    rent_blocks: int
    deposit: int


@dataclass
class OtmcState:
    cid: bytes
    stage: OtmcStage
    participants: tuple[str, ...]
    deadline_height: int
    nfr: list[tuple[str, int]]              # (renter, token_id) borrowing records
    results: Optional[bytes]
    deposits: dict[str, int]


@dataclass
class TrustRecord:
    task_id: str
    members: tuple[str, ...]
    algorithm: str
    trust_values: dict[str, float]


class ContractsState:
    """World state for the native contracts: account balances, escrows,
    the burn pool, and per-contract stores."""

    def __init__(self, conversion_threshold: int = 1):
        self.balances: dict[str, int] = {}
        self.accounts: dict[str, bytes] = {}     # address -> ed25519 public key
        self.escrow: dict[tuple, int] = {}
        self.burned = 0
        self.lc = LedgerConversionState(threshold=conversion_threshold)
        self.nfr = NfrState()
        self.otmc: dict[bytes, OtmcState] = {}
        self.channels: dict[bytes, Any] = {}     # channel_id -> channels.ChannelState
        self.trust_records: dict[str, TrustRecord] = {}

    def register_account(self, address: str, public_bytes: bytes, balance: int = 0) -> None:
        self.accounts[address] = public_bytes
        if balance:
            self.balances[address] = self.balances.get(address, 0) + balance

    def balance(self, address: str) -> int:
        return self.balances.get(address, 0)

    def debit(self, address: str, amount: int) -> None:
        if self.balance(address) < amount:
            raise InsufficientFunds(f"{address} holds {self.balance(address)} < {amount}")
        self.balances[address] -= amount

    def credit(self, address: str, amount: int) -> None:
        self.balances[address] = self.balances.get(address, 0) + amount

    def escrow_add(self, key: tuple, amount: int) -> None:
        self.escrow[key] = self.escrow.get(key, 0) + amount

    def escrow_take(self, key: tuple) -> int:
        return self.escrow.pop(key, 0)

    def total_value(self) -> int:
        return sum(self.balances.values()) + sum(self.escrow.values()) + self.burned


# ------------------------------------------------- LedgerConversion

def lc_vote(state: ContractsState, caller: str, meter: Optional[GasMeter] = None) -> ContractsState:
    meter = meter or _free_meter()
    meter.read()
    if state.lc.is_vote.get(caller, False):
        raise AlreadyVoted(caller)
    meter.write()
    state.lc.is_vote[caller] = True
    meter.write()
    state.lc.vote_count += 1
    meter.read()
    return state


def lc_threshold_reached(state: ContractsState) -> bool:
    return state.lc.vote_count >= state.lc.threshold


def lc_convert(
    state: ContractsState,
    direction: ConversionDirection,
    convert_height: int,
    consensus_name: str,
    current_height: int,
    meter: Optional[GasMeter] = None,
) -> ContractsState:
    meter = meter or _free_meter()
    meter.read()
    meter.read()
    if not lc_threshold_reached(state):
        raise ThresholdNotMet(f"{state.lc.vote_count} < {state.lc.threshold}")
    if convert_height <= current_height:
        raise HeightInPast(f"{convert_height} <= {current_height}")
    meter.write()
    state.lc.pending = PendingConversion(direction, convert_height, consensus_name)
    return state


def lc_clear(state: ContractsState) -> None:
    """Reset the vote round after a conversion executes."""
    state.lc.is_vote = {}
    state.lc.vote_count = 0
    state.lc.pending = None


# ----------------------------------------------------------- NFR

def nfr_registration(
    state: ContractsState,
    caller: str,
    resource_type: ResourceType,
    price: int,
    meter: Optional[GasMeter] = None,
) -> int:
    meter = meter or _free_meter()
    if price <= 0:
        raise ZeroPrice(str(price))
    meter.read()
    token_id = state.nfr.next_token_id
    meter.write()
    state.nfr.tokens[token_id] = NfrRecord(token_id, caller, resource_type, price)
    meter.write()
    state.nfr.next_token_id += 1
    return token_id


def _token(state: ContractsState, token_id: int) -> NfrRecord:
    rec = state.nfr.tokens.get(token_id)
    if rec is None or rec.cancelled:
        raise UnknownToken(str(token_id))
    return rec


def nfr_rental(
    state: ContractsState,
    caller: str,
    token_id: int,
    rent_blocks: int,
    deposit: int,
    current_height: int,
    meter: Optional[GasMeter] = None,
) -> ContractsState:
    meter = meter or _free_meter()
    meter.read()
    rec = _token(state, token_id)
    if rec.validity is not Validity.PROVEN:
        raise TokenUnproven(f"token {token_id} is {rec.validity.value}")
    if rec.rental is not None:
        raise AlreadyRented(str(token_id))
    if rent_blocks < 1:
        raise Revert("rent_blocks must be positive")
    if deposit < rec.price * rent_blocks:
        raise InsufficientDeposit(f"{deposit} < {rec.price * rent_blocks}")
    meter.read()
    state.debit(caller, deposit)
    meter.write()
    state.escrow_add(("nfr", token_id), deposit)
    meter.write()
    rec.rental = Rental(caller, deposit, current_height, rent_blocks)
    meter.write()
    return state


def nfr_liquidation(
    state: ContractsState,
    caller: str,
    token_id: int,
    current_height: int,
    meter: Optional[GasMeter] = None,
) -> ContractsState:
    """On-time return settles price x blocks-used to the owner and refunds
    the rest; past the timeout anyone may trigger full forfeiture."""
    meter = meter or _free_meter()
    meter.read()
    rec = _token(state, token_id)
    rental = rec.rental
    if rental is None:
        raise NoActiveRental(str(token_id))
    timeout_height = rental.start_height + rental.rent_blocks
    escrowed = state.escrow.get(("nfr", token_id), 0)
    if current_height > timeout_height:
        meter.write()
        state.escrow_take(("nfr", token_id))
        meter.write()
        state.credit(rec.resource_owner, escrowed)
    else:
        if caller != rental.renter:
            raise NotRenterBeforeTimeout(caller)
        used = max(0, min(current_height - rental.start_height, rental.rent_blocks))
        owed = rec.price * used
        meter.write()
        state.escrow_take(("nfr", token_id))
        meter.write()
        state.credit(rec.resource_owner, owed)
        meter.write()
        state.credit(rental.renter, escrowed - owed)
    meter.write()
    rec.rental = None
    return state


def nfr_cancellation(
    state: ContractsState,
    caller: str,
    token_id: int,
    meter: Optional[GasMeter] = None,
) -> ContractsState:
    meter = meter or _free_meter()
    meter.read()
    rec = _token(state, token_id)
    if rec.resource_owner != caller:
        raise NotOwner(caller)
    if rec.rental is not None:
        raise ActiveRentalExists(str(token_id))
    meter.write()
    rec.cancelled = True
    rec.validity = Validity.UNRENTABLE
    return state


# ---------------------------------------------------------- OTMC

def otmc_open_message(participants: tuple[str, ...], delta_blocks: int,
                      deposits: dict[str, int], rentals: list[RentalRequest]) -> bytes:
    parts = [b"otmc-open:"]
    for p in participants:
        parts.append(p.encode())
    parts.append(delta_blocks.to_bytes(8, "big"))
    for p in participants:
        parts.append(deposits.get(p, 0).to_bytes(8, "big"))
    for r in rentals:
        parts.append(r.renter.encode())
        parts.append(r.token_id.to_bytes(8, "big"))
        parts.append(r.rent_blocks.to_bytes(8, "big"))
        parts.append(r.deposit.to_bytes(8, "big"))
    return crypto.sha256(*parts)


def otmc_results_message(cid: bytes, results_digest: bytes) -> bytes:
    return crypto.sha256(b"otmc-results:", cid, results_digest)


def otmc_open(
    state: ContractsState,
    participants: list[str],
    delta_blocks: int,
    deposits: dict[str, int],
    nfr_rentals: list[RentalRequest],
    signatures: dict[str, bytes],
    current_height: int,
    nonce: bytes,
    meter: Optional[GasMeter] = None,
) -> OtmcState:
    """Open a cluster: escrow every participant's deposit and execute the
    embedded rentals atomically (any failure reverts the whole open).
    `nonce` is the opening transaction's txid, making CIDs unique."""
    meter = meter or _free_meter()
    group = tuple(sorted(participants))
    if len(group) < 2:
        raise TooFewParticipants(str(len(group)))
    for p in group:
        if deposits.get(p, 0) <= 0:
            raise ZeroDeposit(p)

    work = copy.deepcopy(state)

    message = otmc_open_message(group, delta_blocks, deposits, nfr_rentals)
    for p in group:
        meter.sig_verify()
        if not crypto.verify(work.accounts.get(p, b""), message, signatures.get(p, b"")):
            raise MissingSignature(p)

    meter.hash()
    cid = crypto.sha256(b"otmc-cid:", *[p.encode() for p in group],
                        current_height.to_bytes(8, "big"), nonce)

    for p in group:
        meter.read()
        work.debit(p, deposits[p])
        meter.write()
        work.escrow_add(("otmc", cid, p), deposits[p])

    refs: list[tuple[str, int]] = []
    for req in nfr_rentals:
        try:
            nfr_rental(work, req.renter, req.token_id, req.rent_blocks,
                       req.deposit, current_height, meter)
        except OutOfGas:
            raise
        except ContractError as exc:
            raise RentalFailed(f"{type(exc).__name__}: {exc}") from exc
        meter.write()
        refs.append((req.renter, req.token_id))

    meter.write()
    cluster = OtmcState(cid, OtmcStage.OPEN, group, current_height + delta_blocks,
                        refs, None, dict(deposits))
    work.otmc[cid] = cluster
    state.__dict__.update(work.__dict__)
    return cluster


def otmc_run(state: ContractsState, cid: bytes, meter: Optional[GasMeter] = None) -> OtmcState:
    meter = meter or _free_meter()
    meter.read()
    cluster = state.otmc.get(cid)
    if cluster is None or cluster.stage is not OtmcStage.OPEN:
        raise WrongState("Open required")
    meter.write()
    cluster.stage = OtmcStage.RUN
    return cluster


def otmc_close(
    state: ContractsState,
    cid: bytes,
    results_digest: bytes,
    signatures: dict[str, bytes],
    current_height: int,
    meter: Optional[GasMeter] = None,
) -> OtmcState:
    """Cooperative close (all participants sign the results) settles the
    rentals and refunds deposits; past the deadline anyone may force-close,
    which slashes the cluster deposits to the burn pool."""
    meter = meter or _free_meter()
    meter.read()
    cluster = state.otmc.get(cid)
    if cluster is None or cluster.stage is not OtmcStage.RUN:
        raise WrongState("Run required")

    forced = current_height > cluster.deadline_height
    work = copy.deepcopy(state)
    wcluster = work.otmc[cid]
    if not forced:
        if not results_digest:
            raise MissingSignature("empty results digest")
        message = otmc_results_message(cid, results_digest)
        for p in cluster.participants:
            meter.sig_verify()
            if not crypto.verify(work.accounts.get(p, b""), message, signatures.get(p, b"")):
                raise MissingSignature(p)

    for renter, token_id in cluster.nfr:
        rec = work.nfr.tokens.get(token_id)
        if rec is not None and rec.rental is not None:
            nfr_liquidation(work, renter, token_id, current_height, meter)

    for p in cluster.participants:
        meter.write()
        held = work.escrow_take(("otmc", cid, p))
        if forced:
            work.burned += held
        else:
            work.credit(p, held)

    meter.write()
    wcluster.results = results_digest if not forced else b""
    meter.write()
    wcluster.stage = OtmcStage.CLOSE
    state.__dict__.update(work.__dict__)
    return state.otmc[cid]


# -------------------------------------------------- trust registry

def trust_record(
    state: ContractsState,
    task_id: str,
    members: tuple[str, ...],
    algorithm: str,
    trust_values: dict[str, float],
    meter: Optional[GasMeter] = None,
) -> TrustRecord:
    meter = meter or _free_meter()
    meter.hash()
    meter.write()
    rec = TrustRecord(task_id, tuple(members), algorithm, dict(trust_values))
    state.trust_records[task_id] = rec
    return rec


# ------------------------------------------------- call envelope

class ContractKind(Enum):
    LEDGER_CONVERSION = "LedgerConversion"
    NFR = "NFR"
    OTMC = "OTMC"
    CHANNEL = "Channel"
    TRUST_REGISTRY = "TrustRegistry"


@dataclass(frozen=True)
class ContractCall:
    contract: ContractKind
    function: str
    args: tuple
    caller: str
    gas_limit: int
    value: int = 0


@dataclass(frozen=True)
class Result:
    ok: bool
    value: Any = None
    error: str = ""


def _dispatch(state: ContractsState, meter: GasMeter, call: ContractCall,
              current_height: int) -> Any:
    from metachain import channels as ch

    c, f, a = call.contract, call.function, call.args
    if c is ContractKind.LEDGER_CONVERSION:
        if f == "vote":
            lc_vote(state, call.caller, meter)
            return state.lc.vote_count
        if f in ("ChainToDAG", "DAGToChain"):
            direction = ConversionDirection(f)
            lc_convert(state, direction, a[0], a[1], current_height, meter)
            return None
    elif c is ContractKind.NFR:
        if f == "Registration":
            return nfr_registration(state, call.caller, ResourceType(a[0]), a[1], meter)
        if f == "Rental":
            nfr_rental(state, call.caller, a[0], a[1], a[2], current_height, meter)
            return None
        if f == "Liquidation":
            nfr_liquidation(state, call.caller, a[0], current_height, meter)
            return None
        if f == "Cancellation":
            nfr_cancellation(state, call.caller, a[0], meter)
            return None
    elif c is ContractKind.OTMC:
        if f == "Open":
            participants, delta, deposits, rentals, signatures, nonce = a
            cluster = otmc_open(state, list(participants), delta, dict(deposits),
                                [r if isinstance(r, RentalRequest) else RentalRequest(*r) for r in rentals],
                                dict(signatures), current_height, nonce, meter)
            return cluster.cid
        if f == "Run":
            otmc_run(state, a[0], meter)
            return None
        if f == "Close":
            otmc_close(state, a[0], a[1], dict(a[2]), current_height, meter)
            return None
    elif c is ContractKind.CHANNEL:
        return ch.contract_dispatch(state, meter, call, current_height)
    elif c is ContractKind.TRUST_REGISTRY:
        if f == "Record":
            trust_record(state, a[0], tuple(a[1]), a[2], dict(a[3]), meter)
            return None
    raise Revert(f"unknown function {c.value}.{f}")


def execute_call(
    state: ContractsState,
    call: ContractCall,
    current_height: int,
) -> tuple[ContractsState, int, Result]:
    """Run one call with gas metering. Returns (new state, gas used,
    result); on any error the returned state is the untouched original."""
    if call.gas_limit <= 0:
        raise ValueError("gasLimit must be positive")
    meter = GasMeter(call.gas_limit)
    work = copy.deepcopy(state)
    try:
        meter.base()
        value = _dispatch(work, meter, call, current_height)
    except OutOfGas:
        return state, call.gas_limit, Result(False, None, "OutOfGas")
    except ContractError as exc:
        return state, meter.used, Result(False, None, type(exc).__name__)
    except (TypeError, ValueError, IndexError, KeyError) as exc:
        return state, meter.used, Result(False, None, f"Revert:{type(exc).__name__}")
    return work, meter.used, Result(True, value, "")


def trace_line(height: int, call: ContractCall, gas_used: int, result: Result) -> dict:
    return {
        "height": height,
        "contract": call.contract.value,
        "function": call.function,
        "caller": call.caller,
        "gas_used": gas_used,
        "result": "ok" if result.ok else result.error,
    }


# ------------------------------------------- payload (de)serialization

def _encode_obj(value: Any) -> Any:
    if isinstance(value, bytes):
        return {"__bytes__": value.hex()}
    if isinstance(value, RentalRequest):
        return {"__rental__": [value.renter, value.token_id, value.rent_blocks, value.deposit]}
    if isinstance(value, (list, tuple)):
        return [_encode_obj(v) for v in value]
    if isinstance(value, dict):
        return {k: _encode_obj(v) for k, v in value.items()}
    return value


def _decode_obj(value: Any) -> Any:
    if isinstance(value, dict):
        if "__bytes__" in value and len(value) == 1:
            return bytes.fromhex(value["__bytes__"])
        if "__rental__" in value and len(value) == 1:
            return RentalRequest(*value["__rental__"])
        return {k: _decode_obj(v) for k, v in value.items()}
    if isinstance(value, list):
        return [_decode_obj(v) for v in value]
    return value


def encode_call(call: ContractCall) -> bytes:
    doc = {
        "kind": "contract-call",
        "contract": call.contract.value,
        "function": call.function,
        "args": _encode_obj(list(call.args)),
        "caller": call.caller,
        "gas_limit": call.gas_limit,
        "value": call.value,
    }
    return json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()


def decode_call(payload: bytes) -> Optional[ContractCall]:
    try:
        doc = json.loads(payload.decode())
    except (UnicodeDecodeError, json.JSONDecodeError):
        return None
    if not isinstance(doc, dict) or doc.get("kind") != "contract-call":
        return None
    return ContractCall(
        ContractKind(doc["contract"]),
        doc["function"],
        tuple(_decode_obj(doc["args"])),
        doc["caller"],
        doc["gas_limit"],
        doc.get("value", 0),
    )
