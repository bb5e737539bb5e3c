"""Off-chain payment channels with dual-signed certificates and an
on-chain dispute window.

Transfers are pure off-chain state updates; only open, close, appeal and
finalize touch contract state. Certificates serialize to a fixed 192-byte
wire format (32B id, 8B seq, 2x8B balances, 8B timestamp, 2x64B
signatures) so signatures stay stable bit for bit.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from enum import Enum
from typing import Optional

from metachain import crypto
from metachain.contracts import ContractError, Revert

DISPUTE_WINDOW_BLOCKS = 10

WIRE_LEN = 32 + 8 + 8 + 8 + 8 + 64 + 64


class ChannelError(ContractError):
    """Subclasses ContractError so on-chain calls revert atomically."""


class ZeroDeposit(ChannelError):
    pass


class BadSignature(ChannelError):
    pass


class WrongPhase(ChannelError):
    pass


class DisputeWindowOpen(WrongPhase):
    """Finalize attempted while appeals are still allowed."""


class InsufficientBalance(ChannelError):
    pass


class DisputeWindowClosed(ChannelError):
    pass


class NotNewer(ChannelError):
    pass


class Phase(Enum):
    OPENING = "Opening"
    OPEN = "Open"
    CLOSING = "Closing"
    CLOSED = "Closed"


@dataclass(frozen=True)
class Certificate:
    channel_id: bytes
    seq: int
    balances: tuple[int, int]
    timestamp: int
    signatures: tuple[bytes, bytes]

    def signing_bytes(self) -> bytes:
        return cert_signing_bytes(self.channel_id, self.seq, self.balances, self.timestamp)

    def serialize(self) -> bytes:
        return self.signing_bytes() + self.signatures[0] + self.signatures[1]


def cert_signing_bytes(channel_id: bytes, seq: int, balances: tuple[int, int], timestamp: int) -> bytes:
    return channel_id + struct.pack(">QQQQ", seq, balances[0], balances[1], timestamp)


def parse_certificate(data: bytes) -> Certificate:
    if len(data) != WIRE_LEN:
        raise ValueError(f"certificate must be {WIRE_LEN} bytes, got {len(data)}")
    channel_id = data[:32]
    seq, bal_a, bal_b, ts = struct.unpack(">QQQQ", data[32:64])
    return Certificate(channel_id, seq, (bal_a, bal_b), ts, (data[64:128], data[128:192]))


@dataclass
class ChannelState:
    channel_id: bytes
    parties: tuple[str, str]
    balances: tuple[int, int]
    seq: int
    phase: Phase
    deposits: tuple[int, int]
    dispute_deadline: Optional[int] = None
    proposed: Optional[Certificate] = None


def open_message(a: str, b: str, deposit_a: int, deposit_b: int, nonce: bytes) -> bytes:
    return crypto.sha256(b"channel-open:", a.encode(), b.encode(),
                         deposit_a.to_bytes(8, "big"), deposit_b.to_bytes(8, "big"), nonce)


def channel_id_for(a: str, b: str, nonce: bytes) -> bytes:
    return crypto.sha256(b"channel-id:", a.encode(), b.encode(), nonce)


def verify_certificate(cert: Certificate, pub_a: bytes, pub_b: bytes) -> bool:
    msg = cert.signing_bytes()
    return crypto.verify(pub_a, msg, cert.signatures[0]) and crypto.verify(pub_b, msg, cert.signatures[1])


def ch_open(
    a: str,
    b: str,
    deposit_a: int,
    deposit_b: int,
    sig_a: bytes,
    sig_b: bytes,
    accounts: dict[str, bytes],
    nonce: bytes = b"",
) -> ChannelState:
    """Verify both parties' signed opening requests and start the channel
    with balances equal to the deposits."""
    if deposit_a <= 0 or deposit_b <= 0:
        raise ZeroDeposit(f"{deposit_a},{deposit_b}")
    msg = open_message(a, b, deposit_a, deposit_b, nonce)
    if not crypto.verify(accounts.get(a, b""), msg, sig_a):
        raise BadSignature(a)
    if not crypto.verify(accounts.get(b, b""), msg, sig_b):
        raise BadSignature(b)
    return ChannelState(
        channel_id=channel_id_for(a, b, nonce),
        parties=(a, b),
        balances=(deposit_a, deposit_b),
        seq=0,
        phase=Phase.OPEN,
        deposits=(deposit_a, deposit_b),
    )


def ch_transfer(
    state: ChannelState,
    amount: int,
    direction: str,
    keystore: crypto.KeyStore,
    timestamp: int = 0,
) -> Certificate:
    """Move `amount` between the parties off-chain ("a->b" or "b->a") and
    return the dual-signed certificate for the new state."""
    if state.phase is not Phase.OPEN:
        raise WrongPhase(state.phase.value)
    if direction not in ("a->b", "b->a"):
        raise ValueError(f"direction must be 'a->b' or 'b->a', got {direction!r}")
    if amount <= 0:
        raise InsufficientBalance("amount must be positive")
    payer = 0 if direction == "a->b" else 1
    if state.balances[payer] < amount:
        raise InsufficientBalance(f"{state.balances[payer]} < {amount}")
    bal = list(state.balances)
    bal[payer] -= amount
    bal[1 - payer] += amount
    state.balances = (bal[0], bal[1])
    state.seq += 1
    msg = cert_signing_bytes(state.channel_id, state.seq, state.balances, timestamp)
    cert = Certificate(
        state.channel_id, state.seq, state.balances, timestamp,
        (keystore.sign(state.parties[0], msg), keystore.sign(state.parties[1], msg)),
    )
    return cert


def ch_close(
    state: ChannelState,
    cert: Certificate,
    closer: str,
    current_height: int,
    accounts: dict[str, bytes],
) -> ChannelState:
    """Either party proposes a settlement; the dispute window opens."""
    if state.phase is not Phase.OPEN:
        raise WrongPhase(state.phase.value)
    a, b = state.parties
    if cert.channel_id != state.channel_id or not verify_certificate(
        cert, accounts.get(a, b""), accounts.get(b, b"")
    ):
        raise BadSignature(closer)
    state.phase = Phase.CLOSING
    state.dispute_deadline = current_height + DISPUTE_WINDOW_BLOCKS
    state.proposed = cert
    return state


def ch_appeal(
    state: ChannelState,
    better: Certificate,
    current_height: int,
    accounts: dict[str, bytes],
) -> ChannelState:
    """Replace a stale proposed settlement with a higher-seq certificate
    inside the dispute window."""
    if state.phase is not Phase.CLOSING:
        raise WrongPhase(state.phase.value)
    if current_height > state.dispute_deadline:
        raise DisputeWindowClosed(str(state.dispute_deadline))
    if better.seq <= state.proposed.seq:
        raise NotNewer(f"{better.seq} <= {state.proposed.seq}")
    a, b = state.parties
    if better.channel_id != state.channel_id or not verify_certificate(
        better, accounts.get(a, b""), accounts.get(b, b"")
    ):
        raise BadSignature("appeal")
    state.proposed = better
    return state


def ch_finalize(state: ChannelState, current_height: int) -> ChannelState:
    """Pay out the proposed settlement once the dispute window has passed."""
    if state.phase is not Phase.CLOSING:
        raise WrongPhase(state.phase.value)
    if current_height <= state.dispute_deadline:
        raise DisputeWindowOpen(str(state.dispute_deadline))
    state.balances = state.proposed.balances
    state.phase = Phase.CLOSED
    return state


# ------------------------------------------------- on-chain dispatch

def contract_dispatch(cstate, meter, call, current_height):
    """Channel contract functions hosted by the contracts runtime; moves
    deposits into escrow at open and pays out at finalize."""
    f, a = call.function, call.args
    if f == "Open":
        party_a, party_b, dep_a, dep_b, sig_a, sig_b, nonce = a
        for p in (party_a, party_b):
            meter.sig_verify()
        channel = ch_open(party_a, party_b, dep_a, dep_b, sig_a, sig_b,
                          cstate.accounts, nonce)
        meter.read()
        cstate.debit(party_a, dep_a)
        meter.read()
        cstate.debit(party_b, dep_b)
        meter.write()
        cstate.escrow_add(("channel", channel.channel_id), dep_a + dep_b)
        meter.write()
        cstate.channels[channel.channel_id] = channel
        return channel.channel_id
    if f == "Close":
        channel = _channel(cstate, a[0], meter)
        meter.sig_verify()
        meter.sig_verify()
        meter.write()
        ch_close(channel, parse_certificate(a[1]), call.caller, current_height, cstate.accounts)
        return None
    if f == "Appeal":
        channel = _channel(cstate, a[0], meter)
        meter.sig_verify()
        meter.sig_verify()
        meter.write()
        ch_appeal(channel, parse_certificate(a[1]), current_height, cstate.accounts)
        return None
    if f == "Finalize":
        channel = _channel(cstate, a[0], meter)
        meter.write()
        ch_finalize(channel, current_height)
        held = cstate.escrow_take(("channel", channel.channel_id))
        payout = channel.proposed.balances
        if held != payout[0] + payout[1]:
            raise ChannelError("escrow does not match settlement")
        meter.write()
        cstate.credit(channel.parties[0], payout[0])
        meter.write()
        cstate.credit(channel.parties[1], payout[1])
        return None
    raise Revert(f"unknown function Channel.{f}")


def _channel(cstate, channel_id, meter):
    meter.read()
    channel = cstate.channels.get(channel_id)
    if channel is None:
        raise WrongPhase("unknown channel")
    return channel
