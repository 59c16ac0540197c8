"""In-process blockchain hosting the data-exchange contract.

The ledger is a single serialization point: callers invoke operations one at
a time and every metered invocation is appended to the gas log. Gas amounts
for deploy, initialize, accept, revealKey, checkKey, and noComplain are
calibrated constants; query and challenge have no published measurement and
carry model-estimated figures that reports must flag as such.

Contract flow per buyer session (one session per seller node):

    QUERIED -> ACCEPTED -> KEY_OUT -> SETTLED | REFUNDED

A key reveal opens a dispute window of ``timeout_blocks``; within it the
buyer may settle early (noComplain) or submit a challenge. Sessions whose
window lapses settle automatically; accepted sessions whose node never
reveals are refunded on the same clock.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from enum import Enum

from . import wire
from .crypto import (
    Commitment,
    InconsistentSharesError,
    KeyMaterial,
    MerkleRoot,
    SecretShare,
    ShamirError,
    commit,
    open_commitment,
    reconstruct,
)

# ---------------------------------------------------------------- errors


class LedgerError(Exception):
    pass


class InvalidParamsError(LedgerError):
    pass


class UnknownContractError(LedgerError):
    pass


class UnknownPathError(LedgerError):
    pass


class UnauthorizedCallerError(LedgerError):
    pass


class DoubleInitializeError(LedgerError):
    pass


class NotInitializedError(LedgerError):
    pass


class NotQueriedError(LedgerError):
    pass


class WrongPaymentError(LedgerError):
    pass


class InsufficientBalanceError(LedgerError):
    pass


class BadKeyError(LedgerError):
    pass


class NoAcceptedBuyerError(LedgerError):
    pass


class NotBuyerError(LedgerError):
    pass


class PendingDisputeError(LedgerError):
    pass


class BadMerkleProofError(LedgerError):
    pass


class WindowClosedError(LedgerError):
    pass


class SharesInconsistentError(LedgerError):
    pass


# ---------------------------------------------------------------- gas model


@dataclass(frozen=True)
class GasSchedule:
    deployment: int = 2_325_998
    initialize: int = 74_248
    no_complain_base: int = 37_194
    no_complain_per_source: int = 5_735
    accept: int = 74_843
    reveal_key: int = 84_334
    check_key: int = 3_457
    # no published measurements exist for these two; modeled, never compared
    # against the calibrated constants above
    query: int = 74_843
    challenge_base: int = 120_000
    challenge_per_share: int = 8_000


MODEL_ESTIMATED_FUNCTIONS = frozenset({"query", "challenge"})


@dataclass(frozen=True)
class GasEntry:
    block: int
    caller: str
    function: str
    gas: int


# ---------------------------------------------------------------- state


class SessionStatus(Enum):
    QUERIED = "QUERIED"
    ACCEPTED = "ACCEPTED"
    KEY_OUT = "KEY_OUT"
    SETTLED = "SETTLED"
    DISPUTED = "DISPUTED"
    REFUNDED = "REFUNDED"


TERMINAL_REFUND = (SessionStatus.REFUNDED, SessionStatus.DISPUTED)


@dataclass(frozen=True)
class DataDescription:
    """Advertised listing terms; the dispute predicate checks data against it."""

    datum_size: int
    value_min: int
    value_max: int
    providers: int
    n_nodes: int
    threshold: int
    timeout_blocks: int
    format_width: int = 1

    def __post_init__(self):
        if self.value_min > self.value_max:
            raise InvalidParamsError("value_min exceeds value_max")
        if self.datum_size < 1 or self.datum_size % self.format_width:
            raise InvalidParamsError("datum_size must be a positive multiple of width")


def conforms_to_description(datum: bytes, desc: DataDescription) -> bool:
    """The on-chain validity predicate over reconstructed data."""
    if len(datum) != desc.datum_size:
        return False
    w = desc.format_width
    for i in range(0, len(datum), w):
        value = int.from_bytes(datum[i : i + w], "big")
        if not desc.value_min <= value <= desc.value_max:
            return False
    return True


@dataclass
class BuyerRecord:
    account: str
    status: dict[int, SessionStatus]
    deposits: dict[int, int] = field(default_factory=dict)
    accept_block: dict[int, int] = field(default_factory=dict)
    no_complain_called: bool = False

    def escrow(self) -> int:
        return sum(self.deposits.values())


@dataclass
class ContractState:
    cid: str
    tid: str
    seller_nodes: list[str]
    data_sources: list[str]
    price: int
    node_fee: int
    desc: DataDescription
    delta: dict[int, MerkleRoot] = field(default_factory=dict)
    commitment: dict[int, Commitment] = field(default_factory=dict)
    buyers: dict[str, BuyerRecord] = field(default_factory=dict)
    key_revealed: dict[int, KeyMaterial] = field(default_factory=dict)
    reveal_block: dict[int, int] = field(default_factory=dict)
    flagged_nodes: set[int] = field(default_factory=set)

    @property
    def n_nodes(self) -> int:
        return len(self.seller_nodes)

    @property
    def session_price(self) -> int:
        return self.price // self.n_nodes

    def node_index_of(self, account: str) -> int:
        return self.seller_nodes.index(account) + 1

    def escrow_total(self) -> int:
        return sum(b.escrow() for b in self.buyers.values())

    def nonce(self) -> bytes:
        return self.tid.encode()

    def dump(self) -> str:
        """Deterministic structured-text dump for golden-file tests."""
        lines = [f"contract {self.cid} tid={self.tid}"]
        lines.append(f"  price={self.price} node_fee={self.node_fee}")
        lines.append(
            "  desc datum_size={0.datum_size} range=[{0.value_min},{0.value_max}]"
            " providers={0.providers} nodes={0.n_nodes} threshold={0.threshold}"
            " timeout={0.timeout_blocks}".format(self.desc)
        )
        lines.append("  sellers=" + ",".join(self.seller_nodes))
        lines.append("  sources=" + ",".join(self.data_sources))
        for j in sorted(self.delta):
            lines.append(f"  delta[{j}]={self.delta[j].digest.hex()}/{self.delta[j].leaf_count}")
        for j in sorted(self.commitment):
            lines.append(f"  com[{j}]={self.commitment[j].digest.hex()}")
        for j in sorted(self.key_revealed):
            lines.append(f"  key[{j}]={self.key_revealed[j].key.hex()}")
        for account in sorted(self.buyers):
            rec = self.buyers[account]
            per = " ".join(
                f"{j}:{rec.status[j].value}:{rec.deposits.get(j, 0)}"
                for j in sorted(rec.status)
            )
            lines.append(f"  buyer {account} noComplain={rec.no_complain_called} {per}")
        if self.flagged_nodes:
            lines.append("  flagged=" + ",".join(map(str, sorted(self.flagged_nodes))))
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class ChallengeResult:
    accepted: bool
    reason: str
    refunded_nodes: tuple[int, ...] = ()
    refund_amount: int = 0


# ---------------------------------------------------------------- ledger


class Ledger:
    def __init__(self, schedule: GasSchedule | None = None):
        self.schedule = schedule or GasSchedule()
        self.contracts: dict[str, ContractState] = {}
        self.block_height = 0
        self.gas_log: list[GasEntry] = []
        self.balances: dict[str, int] = {}
        self.minted = 0
        self._next_cid = 0

    # -- plumbing

    def fund(self, account: str, amount: int) -> None:
        """Genesis mint; the only operation that creates currency."""
        self.balances[account] = self.balances.get(account, 0) + amount
        self.minted += amount

    def _log(self, caller: str, function: str, gas: int) -> None:
        self.gas_log.append(GasEntry(self.block_height, caller, function, gas))

    def _contract(self, cid: str) -> ContractState:
        try:
            return self.contracts[cid]
        except KeyError:
            raise UnknownContractError(f"no contract {cid!r}") from None

    def _credit(self, account: str, amount: int) -> None:
        self.balances[account] = self.balances.get(account, 0) + amount

    def conservation_total(self) -> int:
        return sum(self.balances.values()) + sum(
            c.escrow_total() for c in self.contracts.values()
        )

    def assert_conserved(self) -> None:
        total = self.conservation_total()
        if total != self.minted:
            raise AssertionError(
                f"currency not conserved: {total} in circulation, {self.minted} minted"
            )

    def total_gas(self) -> int:
        return sum(e.gas for e in self.gas_log)

    def call_count(self) -> int:
        return len(self.gas_log)

    def exchange_call_count(self) -> int:
        """Calls in the exchange proper: everything except settlement/disputes."""
        return sum(
            1 for e in self.gas_log if e.function not in ("noComplain", "challenge")
        )

    def gas_csv(self) -> str:
        out = io.StringIO()
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(["block", "caller", "function", "gas_units", "cumulative_gas"])
        running = 0
        for e in self.gas_log:
            running += e.gas
            writer.writerow([e.block, e.caller, e.function, e.gas, running])
        return out.getvalue()

    # -- contract lifecycle

    def create_contract(
        self,
        deployer: str,
        seller_nodes: list[str],
        data_sources: list[str],
        price: int,
        desc: DataDescription,
        node_fee: int = 0,
    ) -> str:
        if not seller_nodes or not data_sources:
            raise InvalidParamsError("seller_nodes and data_sources must be nonempty")
        if price <= 0:
            raise InvalidParamsError("price must be positive")
        if price % len(seller_nodes):
            raise InvalidParamsError(
                "price must divide evenly into per-session payments"
            )
        if desc.n_nodes != len(seller_nodes) or desc.providers != len(data_sources):
            raise InvalidParamsError("description does not match participant lists")
        if not 0 <= node_fee <= price // len(seller_nodes):
            raise InvalidParamsError("node_fee must fit within the session price")
        self._next_cid += 1
        cid = f"c{self._next_cid}"
        self.contracts[cid] = ContractState(
            cid=cid,
            tid=f"{cid}:listing",
            seller_nodes=list(seller_nodes),
            data_sources=list(data_sources),
            price=price,
            node_fee=node_fee,
            desc=desc,
        )
        self._log(deployer, "deploy", self.schedule.deployment)
        return cid

    def initialize(
        self, caller: str, cid: str, delta: MerkleRoot, com: Commitment
    ) -> None:
        contract = self._contract(cid)
        if caller not in contract.seller_nodes:
            raise UnauthorizedCallerError(f"{caller} is not a seller node")
        j = contract.node_index_of(caller)
        if j in contract.delta:
            raise DoubleInitializeError(f"node {j} already initialized")
        contract.delta[j] = delta
        contract.commitment[j] = com
        self._log(caller, "initialize", self.schedule.initialize)

    def query(self, caller: str, cid: str, node_index: int | None = None) -> None:
        """Open exchange sessions. ``node_index=None`` is the merged form:
        one call opens a session with every node. A specific index opens just
        that session (the un-merged protocol variant).
        """
        contract = self._contract(cid)
        if node_index is None:
            if len(contract.delta) != contract.n_nodes:
                raise NotInitializedError(
                    f"{len(contract.delta)}/{contract.n_nodes} nodes initialized"
                )
            if caller in contract.buyers:
                raise InvalidParamsError(f"{caller} already queried")
            contract.buyers[caller] = BuyerRecord(
                account=caller,
                status={
                    j: SessionStatus.QUERIED for j in range(1, contract.n_nodes + 1)
                },
            )
        else:
            if node_index not in contract.delta:
                raise NotInitializedError(f"node {node_index} not initialized")
            record = contract.buyers.setdefault(
                caller, BuyerRecord(account=caller, status={})
            )
            if node_index in record.status:
                raise InvalidParamsError(f"session {node_index} already queried")
            record.status[node_index] = SessionStatus.QUERIED
        self._log(caller, "query", self.schedule.query)

    def accept(self, caller: str, cid: str, node_index: int, payment: int) -> None:
        contract = self._contract(cid)
        record = contract.buyers.get(caller)
        if record is None or record.status.get(node_index) != SessionStatus.QUERIED:
            raise NotQueriedError(f"no queried session {node_index} for {caller}")
        if payment != contract.session_price:
            raise WrongPaymentError(
                f"payment {payment} != session price {contract.session_price}"
            )
        if self.balances.get(caller, 0) < payment:
            raise InsufficientBalanceError(f"{caller} cannot cover {payment}")
        self.balances[caller] -= payment
        record.deposits[node_index] = payment
        record.accept_block[node_index] = self.block_height
        record.status[node_index] = SessionStatus.ACCEPTED
        self._log(caller, "accept", self.schedule.accept)

    def reveal_key(self, caller: str, cid: str, key: KeyMaterial) -> None:
        contract = self._contract(cid)
        if caller not in contract.seller_nodes:
            raise UnauthorizedCallerError(f"{caller} is not a seller node")
        j = contract.node_index_of(caller)
        if not any(
            rec.status.get(j) == SessionStatus.ACCEPTED
            for rec in contract.buyers.values()
        ):
            raise NoAcceptedBuyerError(f"no accepted session for node {j}")
        if j not in contract.commitment or not open_commitment(
            key, contract.commitment[j]
        ):
            raise BadKeyError(f"key does not open node {j}'s commitment")
        # release the key for every node committed to it: a group of nodes
        # sharing one key is served by its leader's single reveal
        opened = commit(key)
        for m, com in contract.commitment.items():
            if com == opened and m not in contract.key_revealed:
                contract.key_revealed[m] = key
                contract.reveal_block[m] = self.block_height
                for rec in contract.buyers.values():
                    if rec.status.get(m) == SessionStatus.ACCEPTED:
                        rec.status[m] = SessionStatus.KEY_OUT
        self._log(caller, "revealKey", self.schedule.reveal_key)

    def read(self, caller: str, cid: str, path: str):
        """Metered state read; key lookups carry the published check-key cost."""
        contract = self._contract(cid)
        parts = path.split(".")
        gas = 0
        if parts[0] == "key_revealed":
            gas = self.schedule.check_key
            value = contract.key_revealed.get(int(parts[1]))
        elif parts[0] == "delta":
            value = contract.delta.get(int(parts[1]))
        elif parts[0] == "commitment":
            value = contract.commitment.get(int(parts[1]))
        elif parts[0] == "buyers" and len(parts) == 4 and parts[2] == "status":
            rec = contract.buyers.get(parts[1])
            value = rec.status.get(int(parts[3])) if rec else None
        elif parts[0] == "buyers" and len(parts) == 4 and parts[2] == "deposits":
            rec = contract.buyers.get(parts[1])
            value = rec.deposits.get(int(parts[3]), 0) if rec else None
        elif path == "price":
            value = contract.price
        elif path == "desc":
            value = contract.desc
        elif path == "tid":
            value = contract.tid
        elif path == "seller_nodes":
            value = tuple(contract.seller_nodes)
        elif path == "data_sources":
            value = tuple(contract.data_sources)
        else:
            raise UnknownPathError(f"unknown path {path!r}")
        self._log(caller, "read", gas)
        return value

    def snapshot_listing(self, cid: str) -> dict:
        """Free off-chain view of listing metadata (browsing, not metered)."""
        contract = self._contract(cid)
        return {
            "cid": cid,
            "tid": contract.tid,
            "price": contract.price,
            "desc": contract.desc,
            "seller_nodes": tuple(contract.seller_nodes),
            "data_sources": tuple(contract.data_sources),
            "delta": dict(contract.delta),
            "commitment": dict(contract.commitment),
            "initialized": len(contract.delta) == contract.n_nodes,
        }

    def snapshot_buyer(self, cid: str, account: str) -> dict | None:
        """Free off-chain view of the caller's own session states."""
        contract = self._contract(cid)
        record = contract.buyers.get(account)
        if record is None:
            return None
        return {
            "status": {j: s.value for j, s in record.status.items()},
            "deposits": dict(record.deposits),
            "no_complain_called": record.no_complain_called,
        }

    # -- settlement

    def _distribute(self, contract: ContractState, node_index: int, amount: int) -> None:
        """Pay out one session's escrow: node fee first, remainder to sources."""
        fee = min(contract.node_fee, amount)
        if fee:
            self._credit(contract.seller_nodes[node_index - 1], fee)
        pool = amount - fee
        m = len(contract.data_sources)
        per, rem = divmod(pool, m)
        for i, source in enumerate(contract.data_sources):
            self._credit(source, per + (1 if i < rem else 0))

    def no_complain(self, caller: str, cid: str) -> None:
        contract = self._contract(cid)
        record = contract.buyers.get(caller)
        if record is None:
            raise NotBuyerError(f"{caller} has no exchange in progress")
        if any(s == SessionStatus.ACCEPTED for s in record.status.values()):
            raise PendingDisputeError("sessions still awaiting key reveal")
        for j, status in record.status.items():
            if status == SessionStatus.KEY_OUT:
                self._distribute(contract, j, record.deposits.pop(j))
                record.status[j] = SessionStatus.SETTLED
        record.no_complain_called = True
        gas = (
            self.schedule.no_complain_base
            + self.schedule.no_complain_per_source * len(contract.data_sources)
        )
        self._log(caller, "noComplain", gas)

    def advance_block(self, count: int = 1) -> None:
        self.block_height += count

    def settle_timeouts(self, cid: str) -> None:
        """Apply the dispute-window countdown: lapsed reveals settle, silent
        nodes' accepted sessions refund. Block production, not a metered call.
        """
        contract = self._contract(cid)
        timeout = contract.desc.timeout_blocks
        for record in contract.buyers.values():
            for j, status in list(record.status.items()):
                if (
                    status == SessionStatus.KEY_OUT
                    and self.block_height >= contract.reveal_block[j] + timeout
                ):
                    self._distribute(contract, j, record.deposits.pop(j))
                    record.status[j] = SessionStatus.SETTLED
                elif (
                    status == SessionStatus.ACCEPTED
                    and self.block_height >= record.accept_block[j] + timeout
                ):
                    self._credit(record.account, record.deposits.pop(j))
                    record.status[j] = SessionStatus.REFUNDED

    # -- disputes

    def _challenge_gate(
        self, contract: ContractState, caller: str, evidences: list[wire.ShareEvidence]
    ) -> BuyerRecord:
        record = contract.buyers.get(caller)
        if record is None:
            raise NotBuyerError(f"{caller} has no exchange in progress")
        timeout = contract.desc.timeout_blocks
        for ev in evidences:
            j = ev.node_index
            # evidence is admissible from any session whose key is public and
            # window open: sessions covered by a shared group key carry a
            # revealed key without ever holding their own escrow
            if j not in contract.key_revealed:
                raise WindowClosedError(f"no key revealed for session {j}")
            if record.status.get(j) in (SessionStatus.SETTLED, SessionStatus.REFUNDED):
                raise WindowClosedError(f"session {j} already settled or refunded")
            if self.block_height >= contract.reveal_block[j] + timeout:
                raise WindowClosedError(f"dispute window for session {j} has lapsed")
        for ev in evidences:
            j = ev.node_index
            ok = wire.verify_share_evidence(
                ev,
                contract.delta[j],
                contract.key_revealed[j],
                contract.nonce(),
                contract.desc.datum_size,
            )
            if not ok:
                raise BadMerkleProofError(
                    f"share for node {j} does not match its registered digest"
                )
        return record

    def _phi1(self, contract: ContractState, shares: list[SecretShare]) -> bytes:
        return reconstruct(contract.desc.threshold, contract.n_nodes, shares)

    def _challenge_gas(self, caller: str, share_count: int) -> None:
        gas = self.schedule.challenge_base + self.schedule.challenge_per_share * share_count
        self._log(caller, "challenge", gas)

    def challenge_case1(
        self,
        caller: str,
        cid: str,
        set1: list[wire.ShareEvidence],
        set2: list[wire.ShareEvidence],
    ) -> ChallengeResult:
        """Description violation: two consistent reconstructions agree on data
        that fails the validity predicate; all escrow returns to the buyer.
        """
        contract = self._contract(cid)
        t = contract.desc.threshold
        self._challenge_gas(caller, len(set1) + len(set2))
        if len(set1) != t + 1 or len(set2) != t + 1:
            raise InvalidParamsError(f"each set must hold exactly {t + 1} shares")
        providers = {ev.share.provider_index for ev in set1 + set2}
        if len(providers) != 1:
            raise InvalidParamsError("all shares must target one provider")
        keyed = lambda evs: {(e.share.node_index, e.share.y_values) for e in evs}
        if keyed(set1) == keyed(set2):
            raise InvalidParamsError("sets must differ in at least one share")
        record = self._challenge_gate(contract, caller, set1 + set2)
        try:
            d1 = self._phi1(contract, [ev.share for ev in set1])
            d2 = self._phi1(contract, [ev.share for ev in set2])
        except (InconsistentSharesError, ShamirError) as exc:
            raise SharesInconsistentError(str(exc)) from exc
        if d1 != d2:
            raise SharesInconsistentError("the two reconstructions disagree")
        if conforms_to_description(d1, contract.desc):
            return ChallengeResult(accepted=False, reason="data conforms to description")
        refunded = []
        total = 0
        for j, status in record.status.items():
            if status in (SessionStatus.ACCEPTED, SessionStatus.KEY_OUT):
                amount = record.deposits.pop(j)
                self._credit(record.account, amount)
                record.status[j] = SessionStatus.REFUNDED
                total += amount
                refunded.append(j)
        return ChallengeResult(
            accepted=True,
            reason="reconstructed data violates description",
            refunded_nodes=tuple(sorted(refunded)),
            refund_amount=total,
        )

    def challenge_case2(
        self,
        caller: str,
        cid: str,
        good: list[wire.ShareEvidence],
        bad: list[wire.ShareEvidence],
    ) -> ChallengeResult:
        """Bad shares: each suspect is recombined with t-1 of the verified
        reference shares; a mismatching reconstruction refunds that node's
        session. The reference set itself must reconstruct description-valid
        data, so garbage references cannot frame an honest node.
        """
        contract = self._contract(cid)
        t = contract.desc.threshold
        self._challenge_gas(caller, len(good) + len(bad))
        if len(good) != t:
            raise InvalidParamsError(f"reference set must hold exactly {t} shares")
        if not bad:
            raise InvalidParamsError("no suspect shares submitted")
        providers = {ev.share.provider_index for ev in good + bad}
        if len(providers) != 1:
            raise InvalidParamsError("all shares must target one provider")
        record = self._challenge_gate(contract, caller, good + bad)
        try:
            d_orig = self._phi1(contract, [ev.share for ev in good])
        except (InconsistentSharesError, ShamirError) as exc:
            raise SharesInconsistentError(str(exc)) from exc
        if not conforms_to_description(d_orig, contract.desc):
            raise SharesInconsistentError(
                "reference reconstruction violates the description"
            )
        references = [ev.share for ev in good[: t - 1]]
        refunded = []
        total = 0
        for ev in bad:
            try:
                d_prime = self._phi1(contract, [ev.share] + references)
                mismatch = d_prime != d_orig
            except ShamirError:
                mismatch = True
            if mismatch and record.status.get(ev.node_index) == SessionStatus.KEY_OUT:
                amount = record.deposits.pop(ev.node_index)
                self._credit(record.account, amount)
                record.status[ev.node_index] = SessionStatus.REFUNDED
                contract.flagged_nodes.add(ev.node_index)
                total += amount
                refunded.append(ev.node_index)
        if refunded:
            return ChallengeResult(
                accepted=True,
                reason="suspect shares inconsistent with verified data",
                refunded_nodes=tuple(sorted(refunded)),
                refund_amount=total,
            )
        return ChallengeResult(accepted=False, reason="all suspect shares consistent")
