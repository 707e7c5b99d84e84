"""Core chain records and exact zatoshi arithmetic.

Amounts are plain ``int`` zatoshi everywhere inside the library.  Decimal
coin strings only appear at I/O boundaries, via :func:`parse_amount` and
:func:`format_amount`.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass
from typing import NamedTuple, Tuple

COIN = 100_000_000
MAX_MONEY = 21_000_000 * COIN

_AMOUNT_RE = re.compile(r"^(\d*)(?:\.(\d*))?$")
_HEX64_RE = re.compile(r"^[0-9a-f]{64}$")


class ChainDataError(ValueError):
    """Input data violates the chain model (bad amount, bad record shape)."""


def check_amount(value: int, what: str = "amount") -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ChainDataError(f"{what} must be an integer zatoshi value, got {value!r}")
    if not 0 <= value <= MAX_MONEY:
        raise ChainDataError(f"{what} out of range: {value}")
    return value


def check_hash(value: str, what: str = "hash") -> str:
    if not isinstance(value, str) or not _HEX64_RE.match(value):
        raise ChainDataError(f"{what} must be 64 lowercase hex chars, got {value!r}")
    return value


def parse_amount(s: str) -> int:
    """Parse a decimal coin string into zatoshi without going through floats.

    >>> parse_amount("3479.51898254")
    347951898254
    >>> parse_amount("0.0001")
    10000
    """
    s = s.strip()
    m = _AMOUNT_RE.match(s)
    if not m or s in ("", "."):
        raise ChainDataError(f"malformed amount: {s!r}")
    whole, frac = m.group(1), m.group(2) or ""
    if not whole and not frac:
        raise ChainDataError(f"malformed amount: {s!r}")
    if len(frac) > 8:
        raise ChainDataError(f"more than 8 decimal places: {s!r}")
    zat = int(whole or "0") * COIN + int(frac.ljust(8, "0") or "0")
    if zat > MAX_MONEY:
        raise ChainDataError(f"amount exceeds coin cap: {s!r}")
    return zat


def format_amount(zat: int, whole: bool = False) -> str:
    """Render zatoshi as a coin string with trailing zeros stripped.

    ``whole=True`` keeps only the whole-coin portion (truncated), which is
    how human-facing coin totals are usually reported.  Negative values are
    accepted because pool deltas are signed.
    """
    sign = "-" if zat < 0 else ""
    q, r = divmod(abs(zat), COIN)
    if whole or r == 0:
        return f"{sign}{q}"
    return f"{sign}{q}.{r:08d}".rstrip("0")


class JoinSplitKind(enum.Enum):
    SHIELDING = "shielding"
    DESHIELDING = "deshielding"
    FULLY_SHIELDED = "fully_shielded"
    MIXED = "mixed"


@dataclass(frozen=True, slots=True)
class JoinSplitRecord:
    txid: str
    js_index: int
    vpub_old: int
    vpub_new: int

    def __post_init__(self):
        check_amount(self.vpub_old, "vpub_old")
        check_amount(self.vpub_new, "vpub_new")


def classify_joinsplit(js: JoinSplitRecord) -> JoinSplitKind:
    if js.vpub_old > 0:
        return JoinSplitKind.MIXED if js.vpub_new > 0 else JoinSplitKind.SHIELDING
    if js.vpub_new > 0:
        return JoinSplitKind.DESHIELDING
    return JoinSplitKind.FULLY_SHIELDED


def pool_delta(js: JoinSplitRecord) -> int:
    """Signed net flow into the shielded pool."""
    return js.vpub_old - js.vpub_new


class OutPoint(NamedTuple):
    txid: str
    vout: int


class TxOut(NamedTuple):
    value: int
    script_id: bytes


@dataclass(frozen=True, slots=True)
class TxRecord:
    txid: str
    is_coinbase: bool
    inputs: Tuple[OutPoint, ...]
    outputs: Tuple[TxOut, ...]
    joinsplits: Tuple[JoinSplitRecord, ...] = ()
    # Carried only so that raw serialization is faithful; never used in analysis.
    lock_time: int = 0

    def __post_init__(self):
        if self.is_coinbase and self.inputs:
            raise ChainDataError(f"coinbase {self.txid} lists spendable inputs")
        for out in self.outputs:
            check_amount(out.value, "output value")
        for i, js in enumerate(self.joinsplits):
            if js.txid != self.txid or js.js_index != i:
                raise ChainDataError(f"joinsplit {i} of {self.txid} has wrong location")

    @property
    def has_joinsplit(self) -> bool:
        return bool(self.joinsplits)


@dataclass(frozen=True, slots=True)
class BlockRecord:
    height: int
    hash: str
    time: int
    txs: Tuple[TxRecord, ...]

    def __post_init__(self):
        if self.height < 0:
            raise ChainDataError(f"negative height {self.height}")
        if self.txs and not self.txs[0].is_coinbase:
            raise ChainDataError(f"block {self.height}: first transaction is not coinbase")
        if any(tx.is_coinbase for tx in self.txs[1:]):
            raise ChainDataError(f"block {self.height}: coinbase after position 0")


def make_tx(txid: str, *, coinbase: bool = False, inputs=(), outputs=(),
            joinsplits=(), lock_time: int = 0) -> TxRecord:
    """Convenience constructor taking plain tuples; ``joinsplits`` are (vpub_old, vpub_new)."""
    return TxRecord(
        txid=txid,
        is_coinbase=coinbase,
        inputs=tuple(OutPoint(*i) for i in inputs),
        outputs=tuple(TxOut(*o) for o in outputs),
        joinsplits=tuple(JoinSplitRecord(txid, i, old, new)
                         for i, (old, new) in enumerate(joinsplits)),
        lock_time=lock_time,
    )
