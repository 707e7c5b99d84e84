"""Synthetic chains with planted round trips, a brute-force oracle, and scoring.

Generated chains are internally consistent: every non-coinbase transparent
input spends an earlier output, fees are non-negative, txids and block
hashes are the double-SHA256 of the raw serialization, so the same chain
can be fed through the raw, JSONL and RPC ingest paths.

Randomness comes from numpy's PCG64 bit generator seeded with
``SynthConfig.seed``.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, fields, replace
from fractions import Fraction
from typing import IO, Iterable, Sequence

import numpy as np

from .ingest import IngestBatch, Source
from .ingest.raw import block_hash, compute_txid
from .model import (MAX_MONEY, BlockRecord, JoinSplitRecord, OutPoint, TxOut,
                    TxRecord, parse_amount)
from .rtt import (DEFAULT_BASE_FEES, FeeSumSet, MatchKind, RttMatch,
                  canonical_order, enumerate_fee_sums)
from .store import JoinSplitRef

PLACEHOLDER_TXID = "0" * 64

# Mirrors the observed spread of round-trip delays; last bucket is capped.
DEFAULT_DELAY_BUCKETS = (
    (0, 5, 1373), (5, 15, 5022), (15, 30, 1479), (30, 60, 1015),
    (60, 120, 500), (120, 1440, 284), (1440, 4320, 402),
)

DEFAULT_FEE_MIX = tuple((parse_amount(f), w) for f, w in (
    ("0.0001", 46.40), ("0.001", 3.03), ("0.0002", 2.99), ("0.00009", 2.70),
    ("0.00005", 2.14), ("0.00000226", 2.10), ("0", 1.43),
))


class InfeasibleConfig(ValueError):
    pass


class OracleSizeError(RuntimeError):
    pass


class ChainMismatchError(ValueError):
    pass


@dataclass
class RttBehavior:
    planted_exact_count: int = 5
    planted_fee1_count: int = 0
    planted_fee2_count: int = 0
    # (lo_minutes, hi_minutes, weight); delay is uniform inside the chosen bucket
    delay_buckets: tuple = DEFAULT_DELAY_BUCKETS
    amount_range: tuple = (10**4, 10**12)
    collision_rate: float = 0.0


@dataclass
class SynthConfig:
    seed: int = 42
    n_blocks: int = 200
    genesis_height: int = 0
    genesis_time: int = 1477641360
    block_interval_seconds: int = 150
    block_jitter_seconds: int = 60
    block_reward: int = 1_250_000_000
    # uniform, inclusive, non-coinbase transactions per block
    txs_per_block: tuple = (1, 6)
    fraction_tx_with_joinsplit: float = 0.3
    # exact share of blocks carrying no joinsplit; None leaves it to chance
    joinsplit_free_block_fraction: float | None = None
    fully_shielded_rate: float = 0.019
    mixed_rate: float = 0.0
    decoy_amount_range: tuple = (10**4, 10**12)
    # draw decoy amounts from this small set instead (forces amount collisions)
    decoy_amount_choices: tuple | None = None
    # steer decoy traffic so the pool tracks this fraction of supply
    target_pool_share: float | None = None
    rtt_behavior: RttBehavior = field(default_factory=RttBehavior)
    fee_mix: tuple = DEFAULT_FEE_MIX
    plant_base_fees: tuple = DEFAULT_BASE_FEES
    window_hours: float = 24
    pool_withdraw_cap: bool = True

    def __post_init__(self):
        if isinstance(self.rtt_behavior, dict):
            self.rtt_behavior = RttBehavior(**self.rtt_behavior)
        probs = {
            "fraction_tx_with_joinsplit": self.fraction_tx_with_joinsplit,
            "fully_shielded_rate": self.fully_shielded_rate,
            "mixed_rate": self.mixed_rate,
            "collision_rate": self.rtt_behavior.collision_rate,
        }
        if self.joinsplit_free_block_fraction is not None:
            probs["joinsplit_free_block_fraction"] = self.joinsplit_free_block_fraction
        if self.target_pool_share is not None:
            probs["target_pool_share"] = self.target_pool_share
        for name, p in probs.items():
            if not 0 <= p <= 1:
                raise InfeasibleConfig(f"{name}={p} is not a probability")
        for name, (lo, hi) in (("decoy_amount_range", self.decoy_amount_range),
                               ("amount_range", self.rtt_behavior.amount_range)):
            if not 1 <= lo <= hi <= MAX_MONEY:
                raise InfeasibleConfig(f"{name} must satisfy 1 <= lo <= hi <= coin cap")
        if self.n_blocks < 1:
            raise InfeasibleConfig("n_blocks must be >= 1")
        if not 0 <= self.txs_per_block[0] <= self.txs_per_block[1]:
            raise InfeasibleConfig("txs_per_block must be (lo, hi) with 0 <= lo <= hi")
        if self.block_interval_seconds - self.block_jitter_seconds < 1:
            raise InfeasibleConfig("block times must strictly increase: jitter too large")

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise InfeasibleConfig(f"unknown config keys: {sorted(unknown)}")
        d = dict(d)
        for key in ("txs_per_block", "decoy_amount_range", "plant_base_fees"):
            if key in d and d[key] is not None:
                d[key] = tuple(d[key])
        if d.get("decoy_amount_choices") is not None:
            d["decoy_amount_choices"] = tuple(d["decoy_amount_choices"])
        if "fee_mix" in d:
            d["fee_mix"] = tuple((int(f), float(w)) for f, w in d["fee_mix"])
        if isinstance(d.get("rtt_behavior"), dict):
            rb = dict(d["rtt_behavior"])
            for key in ("delay_buckets",):
                if key in rb:
                    rb[key] = tuple(tuple(b) for b in rb[key])
            if "amount_range" in rb:
                rb["amount_range"] = tuple(rb["amount_range"])
            d["rtt_behavior"] = RttBehavior(**rb)
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class PlantedLink:
    shield: tuple[str, int]
    deshield: tuple[str, int]
    kind: MatchKind
    fee: int
    amount: int
    collided: bool = False


@dataclass
class GroundTruth:
    chain_id: str
    planted_links: list[PlantedLink]
    decoy_refs: list[tuple[str, int]]
    shielded_inflow: int

    def link_pairs(self, kinds: Iterable[MatchKind] | None = None) -> set:
        kinds = set(kinds) if kinds is not None else set(MatchKind)
        return {(l.shield, l.deshield) for l in self.planted_links if l.kind in kinds}

    def dump(self, stream: IO[str]) -> None:
        stream.write(json.dumps({"type": "meta", "chain_id": self.chain_id,
                                 "shielded_inflow_zat": self.shielded_inflow}) + "\n")
        for l in self.planted_links:
            stream.write(json.dumps({
                "type": "link", "kind": l.kind.value,
                "shield_txid": l.shield[0], "shield_js_index": l.shield[1],
                "deshield_txid": l.deshield[0], "deshield_js_index": l.deshield[1],
                "amount_zat": l.amount, "fee_zat": l.fee, "collided": l.collided,
            }) + "\n")
        for txid, idx in self.decoy_refs:
            stream.write(json.dumps({"type": "decoy", "txid": txid, "js_index": idx}) + "\n")

    @classmethod
    def load(cls, stream: IO[str]) -> "GroundTruth":
        chain_id, inflow, links, decoys = None, 0, [], []
        for line in stream:
            if not line.strip():
                continue
            d = json.loads(line)
            if d["type"] == "meta":
                chain_id, inflow = d["chain_id"], d["shielded_inflow_zat"]
            elif d["type"] == "link":
                links.append(PlantedLink(
                    (d["shield_txid"], d["shield_js_index"]),
                    (d["deshield_txid"], d["deshield_js_index"]),
                    MatchKind(d["kind"]), d["fee_zat"], d["amount_zat"], d["collided"]))
            elif d["type"] == "decoy":
                decoys.append((d["txid"], d["js_index"]))
        if chain_id is None:
            raise ValueError("ground truth file has no meta record")
        return cls(chain_id, links, decoys, inflow)


# -- generation ------------------------------------------------------------------

def seal_tx(coinbase: bool, inputs=(), outputs=(), joinsplits=(), lock_time: int = 0
            ) -> TxRecord:
    """Build a record whose txid is the hash of its own serialization."""
    inputs = tuple(OutPoint(*i) for i in inputs)
    outputs = tuple(TxOut(*o) for o in outputs)
    draft = TxRecord(PLACEHOLDER_TXID, coinbase, inputs, outputs,
                     tuple(JoinSplitRecord(PLACEHOLDER_TXID, i, o, n)
                           for i, (o, n) in enumerate(joinsplits)), lock_time)
    txid = compute_txid(draft)
    return TxRecord(txid, coinbase, draft.inputs, draft.outputs,
                    tuple(JoinSplitRecord(txid, i, o, n) for i, (o, n) in enumerate(joinsplits)),
                    lock_time)


def seal_chain(blocks: Sequence[BlockRecord], prev_hash: str | None = None) -> list[BlockRecord]:
    """Recompute block hashes so they match the raw header encoding."""
    out = []
    for b in blocks:
        h = block_hash(prev_hash, [tx.txid for tx in b.txs], b.time)
        out.append(BlockRecord(b.height, h, b.time, b.txs))
        prev_hash = h
    return out


def _script(tag: str) -> bytes:
    # P2PKH-shaped, unique per tag
    return b"\x76\xa9\x14" + hashlib.sha256(tag.encode()).digest()[:20] + b"\x88\xac"


class _FeePicker:
    """Deterministic smooth weighted round-robin over the fee mix, so fee
    frequencies track the weights to within one transaction."""

    def __init__(self, mix: Sequence[tuple[int, float]]):
        self.fees = [f for f, _ in mix]
        self.weights = [w for _, w in mix]
        self.total = sum(self.weights)
        self.current = [0.0] * len(mix)

    def pick(self, budget: int) -> int:
        """A fee strictly below ``budget`` (so outputs stay positive)."""
        for i, w in enumerate(self.weights):
            self.current[i] += w
        best = None
        for i, fee in enumerate(self.fees):
            if fee < budget and (best is None or self.current[i] > self.current[best]):
                best = i
        if best is None:
            return 0
        self.current[best] -= self.total
        return self.fees[best]


@dataclass
class _Plant:
    kind: MatchKind
    shield_idx: int
    deshield_idx: int
    fee: int = 0
    fee_parts: tuple = ()
    collide: bool = False
    amount: int | None = None
    shield_ref: tuple | None = None
    deshield_ref: tuple | None = None


class _Generator:
    def __init__(self, cfg: SynthConfig):
        self.cfg = cfg
        self.rng = np.random.Generator(np.random.PCG64(cfg.seed))
        self.fees = _FeePicker(cfg.fee_mix)
        self.max_fee = max((f for f, _ in cfg.fee_mix), default=0)
        fee1 = enumerate_fee_sums(cfg.plant_base_fees, 1)
        fee2 = enumerate_fee_sums(cfg.plant_base_fees, 2)
        self.fee_sets = {MatchKind.FEE1: fee1, MatchKind.FEE2: fee2}
        self.all_fee_totals = sorted(set(fee1.totals) | set(fee2.totals))
        self.wallet: list[tuple[OutPoint, int]] = []
        self.used: set[int] = set()
        self.shield_used: set[int] = set()
        self.deshield_used: set[int] = set()
        self.pool = 0
        self.supply = 0
        self.obligations = 0
        self.lock_counter = 0
        self.script_counter = 0

    # random helpers
    def uniform_int(self, lo: int, hi: int) -> int:
        return int(self.rng.integers(lo, hi, endpoint=True))

    def log_uniform(self, lo: int, hi: int) -> int:
        if hi <= lo:
            return lo
        x = math.exp(self.rng.uniform(math.log(lo), math.log(hi)))
        return min(hi, max(lo, int(round(x))))

    # amount uniqueness
    def shield_ok(self, x: int) -> bool:
        return (x > 0 and x not in self.used
                and not any(x - f in self.deshield_used for f in self.all_fee_totals))

    def deshield_ok(self, y: int) -> bool:
        return (y > 0 and y not in self.used
                and not any(y + f in self.shield_used for f in self.all_fee_totals))

    def nudge(self, x: int, ok, floor: int = 1) -> int:
        """Closest value at or below ``x`` accepted by ``ok`` (then above)."""
        for step in range(10_000):
            for cand in (x - step, x + step):
                if cand >= floor and ok(cand):
                    return cand
        raise InfeasibleConfig("could not find a unique amount")

    # wallet
    @property
    def spendable(self) -> int:
        return sum(v for _, v in self.wallet)

    def take_funds(self, need: int) -> tuple[list[OutPoint], int]:
        self.wallet.sort(key=lambda e: (-e[1], e[0]))
        chosen, total = [], 0
        while total < need:
            op, v = self.wallet.pop(0)
            chosen.append(op)
            total += v
        return chosen, total

    # -- schedule ----------------------------------------------------------

    def block_times(self) -> list[int]:
        cfg = self.cfg
        times = [cfg.genesis_time]
        for _ in range(cfg.n_blocks - 1):
            jitter = self.uniform_int(-cfg.block_jitter_seconds, cfg.block_jitter_seconds)
            times.append(times[-1] + cfg.block_interval_seconds + jitter)
        return times

    def js_blocks(self) -> list[bool]:
        cfg, n = self.cfg, self.cfg.n_blocks
        if cfg.joinsplit_free_block_fraction is None:
            return [i > 0 for i in range(n)]
        n_free = round(cfg.joinsplit_free_block_fraction * n)
        flags = [True] * n
        flags[0] = False  # genesis has nothing to shield
        extra = max(0, n_free - 1)
        if extra:
            for i in self.rng.choice(np.arange(1, n), size=min(extra, n - 1), replace=False):
                flags[int(i)] = False
        return flags

    def draw_delay(self, max_minutes: float | None) -> int:
        buckets = [b for b in self.cfg.rtt_behavior.delay_buckets
                   if max_minutes is None or b[0] < max_minutes]
        weights = np.array([w for _, _, w in buckets], dtype=float)
        lo, hi, _ = buckets[int(self.rng.choice(len(buckets), p=weights / weights.sum()))]
        if max_minutes is not None:
            hi = min(hi, int(max_minutes))
        return self.uniform_int(lo, max(lo, hi - 1))

    def schedule(self, times: list[int], js_flags: list[bool]) -> list[_Plant]:
        cfg, rb = self.cfg, self.cfg.rtt_behavior
        slots = [i for i, f in enumerate(js_flags) if f]
        kinds = ([MatchKind.EXACT] * rb.planted_exact_count
                 + [MatchKind.FEE1] * rb.planted_fee1_count
                 + [MatchKind.FEE2] * rb.planted_fee2_count)
        if kinds and len(slots) < 2:
            raise InfeasibleConfig("need at least two joinsplit-carrying blocks to plant links")
        window = int(cfg.window_hours * 3600)
        plants = []
        shield_blocks: set[int] = set()
        for kind in kinds:
            # each block starts with at least the previous coinbase spendable,
            # so one plant per shielding block is always fundable
            fresh = [j for j in slots[:-1] if j not in shield_blocks] or slots[:-1]
            for _ in range(200):
                s = fresh[self.uniform_int(0, len(fresh) - 1)]
                max_minutes = None if kind is MatchKind.EXACT else cfg.window_hours * 60
                delay = self.draw_delay(max_minutes) * 60
                d = next((j for j in slots if j > s and times[j] - times[s] >= delay), None)
                if d is None:
                    continue
                if kind is not MatchKind.EXACT and times[d] - times[s] > window:
                    continue
                break
            else:
                raise InfeasibleConfig(f"could not schedule a {kind.value} link; "
                                       "chain too short for the delay distribution")
            shield_blocks.add(s)
            plant = _Plant(kind, s, d)
            if kind is MatchKind.EXACT:
                plant.collide = bool(self.rng.random() < rb.collision_rate)
            else:
                sums = self.fee_sets[kind].sums
                fs = sums[self.uniform_int(0, len(sums) - 1)]
                plant.fee, plant.fee_parts = fs.total, fs.parts
            plants.append(plant)
        return plants

    # -- transactions --------------------------------------------------------

    def coinbase(self, height: int) -> TxRecord:
        return seal_tx(True, outputs=[TxOut(self.cfg.block_reward, _script(f"miner:{height}"))])

    def shield_tx(self, height: int, amount: int, js: list[tuple[int, int]] | None = None,
                  extra_out: int = 0) -> TxRecord:
        fee = self.fees.pick(self.spendable - amount + 1)
        inputs, total = self.take_funds(amount + fee)
        outputs = []
        change = total - amount - fee + extra_out
        if change > 0:
            outputs.append(TxOut(change, _script(f"change:{height}:{inputs[0]}")))
        return seal_tx(False, inputs, outputs, js or [(amount, 0)])

    def deshield_tx(self, height: int, amount: int) -> TxRecord:
        fee = self.fees.pick(amount)
        self.script_counter += 1
        return seal_tx(False, outputs=[TxOut(amount - fee, _script(f"out:{self.script_counter}"))],
                       joinsplits=[(0, amount)])

    def shielded_tx(self) -> TxRecord:
        self.lock_counter += 1
        return seal_tx(False, joinsplits=[(0, 0)], lock_time=self.lock_counter)

    def plain_tx(self, height: int) -> TxRecord | None:
        if not self.wallet:
            return None
        # prefer coins that can pay any fee in the mix
        for _ in range(8):
            k = self.uniform_int(0, len(self.wallet) - 1)
            if self.wallet[k][1] > self.max_fee:
                break
        op, value = self.wallet[k]
        if value < 2:
            return None
        self.wallet.pop(k)
        fee = self.fees.pick(value)
        rest = value - fee
        dust = self.max_fee + 1
        if rest >= 2 * dust:
            # split without creating outputs too small to pay a fee later
            pay = self.uniform_int(dust, rest - dust)
            outs = [TxOut(pay, _script(f"pay:{op}")), TxOut(rest - pay, _script(f"chg:{op}"))]
        else:
            outs = [TxOut(rest, _script(f"pay:{op}"))]
        return seal_tx(False, [op], outs)

    def free_pool(self) -> float:
        return self.pool - self.obligations if self.cfg.pool_withdraw_cap else math.inf

    def decoy_tx(self, height: int) -> TxRecord | None:
        cfg = self.cfg
        lo, hi = cfg.decoy_amount_range
        r = self.rng.random()
        if r < cfg.fully_shielded_rate:
            return self.shielded_tx()
        if cfg.decoy_amount_choices:
            return self.choice_decoy(height)
        free = self.free_pool()
        can_shield = self.spendable >= lo + self.max_fee
        can_deshield = free >= lo
        if cfg.target_pool_share is not None:
            desired = cfg.target_pool_share * self.supply
            shield = self.pool < desired
        else:
            shield = self.rng.random() < 0.5
        if shield and not can_shield:
            shield = False
        if not shield and not can_deshield:
            if not can_shield:
                return self.shielded_tx()
            shield = True
        if shield:
            top = min(hi, self.spendable - self.max_fee)
            if cfg.target_pool_share is not None:
                gap = cfg.target_pool_share * self.supply - self.pool
                x = int(gap * self.rng.uniform(0.5, 1.0))
                # small gaps would all clamp to lo and exhaust the unique amounts there
                x = min(top, x) if x >= lo else self.log_uniform(lo, top)
            else:
                x = self.log_uniform(lo, top)
            try:
                x = self.nudge(x, lambda v: v <= top and self.shield_ok(v), floor=lo)
            except InfeasibleConfig:
                return self.shielded_tx()
            self.commit_shield(x)
            return self.shield_tx(height, x)
        top = int(min(hi, free))
        if cfg.target_pool_share is not None:
            excess = self.pool - cfg.target_pool_share * self.supply
            y = int(excess * self.rng.uniform(0.5, 1.0))
            y = min(top, y) if y >= lo else self.log_uniform(lo, top)
        else:
            y = self.log_uniform(lo, top)
        try:
            y = self.nudge(y, lambda v: v <= top and self.deshield_ok(v), floor=lo)
        except InfeasibleConfig:
            return self.shielded_tx()
        self.commit_deshield(y)
        return self.deshield_tx(height, y)

    def choice_decoy(self, height: int) -> TxRecord | None:
        """Decoy with an amount from a small fixed set; collisions intended."""
        choices = self.cfg.decoy_amount_choices
        a = int(choices[self.uniform_int(0, len(choices) - 1)])
        free = self.free_pool()
        if self.rng.random() < self.cfg.mixed_rate:
            b = int(choices[self.uniform_int(0, len(choices) - 1)])
            if self.spendable >= a + self.max_fee and free + a >= b:
                self.pool += a - b
                return self.shield_tx(height, a, js=[(a, b)], extra_out=b)
        if self.rng.random() < 0.5 and self.spendable >= a + self.max_fee:
            self.pool += a
            return self.shield_tx(height, a)
        if free >= a:
            self.pool -= a
            return self.deshield_tx(height, a)
        return self.shielded_tx()

    def commit_shield(self, x: int) -> None:
        self.used.add(x)
        self.shield_used.add(x)
        self.pool += x

    def commit_deshield(self, y: int) -> None:
        self.used.add(y)
        self.deshield_used.add(y)
        self.pool -= y

    def plant_shield(self, height: int, plant: _Plant) -> list[TxRecord]:
        lo, hi = self.cfg.rtt_behavior.amount_range
        copies = 2 if plant.collide else 1
        top = min(hi, (self.spendable - copies * self.max_fee) // copies)
        # the deshielded side (amount minus fee) stays inside the range too
        lo += plant.fee
        if top <= plant.fee:
            raise InfeasibleConfig(f"no transparent funds to plant a link at height {height}")
        lo = min(lo, top)
        a = self.log_uniform(lo, top)
        if plant.kind is MatchKind.EXACT:
            ok = lambda v: v <= top and self.shield_ok(v) and self.deshield_ok(v)
        else:
            def ok(v):
                y = v - plant.fee
                return (v <= top and y > 0 and self.shield_ok(v)
                        and self.deshield_ok(y) and y != v)
        a = self.nudge(a, ok, floor=plant.fee + 1)
        y = a - plant.fee
        self.commit_shield(a)
        self.used.add(y)
        self.deshield_used.add(y)
        self.obligations += y
        plant.amount = a
        if plant.collide:
            # second joinsplit shielding the same amount spoils uniqueness
            self.pool += a
            tx = self.shield_tx(height, 2 * a, js=[(a, 0), (a, 0)])
        else:
            tx = self.shield_tx(height, a)
        plant.shield_ref = (tx.txid, 0)
        return [tx]

    def plant_deshield(self, height: int, plant: _Plant) -> TxRecord:
        y = plant.amount - plant.fee
        self.pool -= y
        self.obligations -= y
        tx = self.deshield_tx(height, y)
        plant.deshield_ref = (tx.txid, 0)
        return tx

    # -- main loop -------------------------------------------------------------

    def run(self) -> tuple[list[BlockRecord], GroundTruth]:
        cfg = self.cfg
        times = self.block_times()
        js_flags = self.js_blocks()
        plants = self.schedule(times, js_flags)
        shields_at: dict[int, list[_Plant]] = {}
        deshields_at: dict[int, list[_Plant]] = {}
        for p in plants:
            shields_at.setdefault(p.shield_idx, []).append(p)
            deshields_at.setdefault(p.deshield_idx, []).append(p)
        force_js = cfg.joinsplit_free_block_fraction is not None

        blocks, prev = [], None
        for i in range(cfg.n_blocks):
            height = cfg.genesis_height + i
            cb = self.coinbase(height)
            self.supply += cfg.block_reward
            body: list[TxRecord] = []
            for p in deshields_at.get(i, ()):
                body.append(self.plant_deshield(height, p))
            for p in shields_at.get(i, ()):
                body.extend(self.plant_shield(height, p))
            lo, hi = cfg.txs_per_block
            for _ in range(self.uniform_int(lo, hi)):
                if js_flags[i] and self.rng.random() < cfg.fraction_tx_with_joinsplit:
                    tx = self.decoy_tx(height)
                else:
                    tx = self.plain_tx(height)
                if tx is not None:
                    body.append(tx)
            if force_js and js_flags[i] and not any(tx.joinsplits for tx in body):
                body.append(self.decoy_tx(height))
            order = self.rng.permutation(len(body))
            txs = (cb, *(body[int(k)] for k in order))
            for tx in txs:
                self.wallet.extend((OutPoint(tx.txid, n), o.value)
                                   for n, o in enumerate(tx.outputs))
            h = block_hash(prev, [tx.txid for tx in txs], times[i])
            blocks.append(BlockRecord(height, h, times[i], txs))
            prev = h

        planted = [PlantedLink(p.shield_ref, p.deshield_ref, p.kind, p.fee, p.amount, p.collide)
                   for p in plants]
        linked = {r for l in planted for r in (l.shield, l.deshield)}
        decoys, inflow = [], 0
        for b in blocks:
            for tx in b.txs:
                for js in tx.joinsplits:
                    inflow += js.vpub_old
                    if (tx.txid, js.js_index) not in linked:
                        decoys.append((tx.txid, js.js_index))
        truth = GroundTruth(blocks[0].hash, planted, decoys, inflow)
        return blocks, truth


def generate(config: SynthConfig) -> tuple[IngestBatch, GroundTruth]:
    """Deterministic for a given seed."""
    blocks, truth = _Generator(config).run()
    return IngestBatch(tuple(blocks), Source.JSONL), truth


def with_duplicate_shield(blocks: Sequence[BlockRecord], height: int, amount: int
                          ) -> list[BlockRecord]:
    """Copy of ``blocks`` with an extra shielding of ``amount`` at ``height``."""
    out = []
    for b in blocks:
        if b.height == height:
            dup = seal_tx(False, joinsplits=[(amount, 0)], lock_time=0xFFFFFFFF)
            b = BlockRecord(b.height, b.hash, b.time, (*b.txs, dup))
        out.append(b)
    return seal_chain(out)


# -- oracle ------------------------------------------------------------------------

def _flat_joinsplits(blocks):
    blocks = getattr(blocks, "blocks", blocks)
    return [(js, b.height, b.time) for b in blocks for tx in b.txs for js in tx.joinsplits]


def oracle_exact_rtts(batch, max_pairs_per_amount: int = 10**5,
                      max_joinsplits: int = 20_000) -> list[RttMatch]:
    """All-pairs evaluation of the round-trip rule with no indexes."""
    all_js = _flat_joinsplits(batch)
    if len(all_js) > max_joinsplits:
        raise OracleSizeError(f"{len(all_js)} joinsplits exceeds oracle guard {max_joinsplits}")
    groups: dict[int, list] = {}
    for g, gh, gt in all_js:
        if g.vpub_old <= 0:
            continue
        for h, hh, ht in all_js:
            if h.vpub_new == g.vpub_old and hh > gh:
                pairs = groups.setdefault(g.vpub_old, [])
                pairs.append(((g, gh, gt), (h, hh, ht)))
                if len(pairs) > max_pairs_per_amount:
                    raise OracleSizeError(f"amount {g.vpub_old} has too many pairs")
    out = []
    for amount, pairs in groups.items():
        if len(pairs) == 1:
            (g, gh, gt), (h, hh, ht) = pairs[0]
            out.append(RttMatch(JoinSplitRef(g.txid, g.js_index, gh, gt),
                                JoinSplitRef(h.txid, h.js_index, hh, ht),
                                amount, MatchKind.EXACT))
    return canonical_order(out)


def oracle_fee_adjusted_rtts(batch, fee_sums: FeeSumSet, window_hours: float = 24,
                             exclude: Iterable[RttMatch] = ()) -> list[RttMatch]:
    """All-pairs evaluation of the windowed fee-adjusted rule."""
    all_js = _flat_joinsplits(batch)
    taken = {r for m in exclude for r in (m.shield.ref, m.deshield.ref)}
    window = int(window_hours * 3600)
    kind = MatchKind.FEE1 if fee_sums.k == 1 else MatchKind.FEE2
    groups: dict[tuple[int, int], list] = {}
    for g, gh, gt in all_js:
        if g.vpub_old <= 0 or (g.txid, g.js_index) in taken:
            continue
        for fs in fee_sums.sums:
            for h, hh, ht in all_js:
                if ((h.txid, h.js_index) not in taken and h.vpub_new > 0
                        and h.vpub_new == g.vpub_old - fs.total
                        and hh > gh and ht - gt <= window):
                    groups.setdefault((g.vpub_old, fs.total), []).append(
                        ((g, gh, gt), (h, hh, ht), fs))
    out = []
    for (amount, _), pairs in groups.items():
        if len(pairs) == 1:
            (g, gh, gt), (h, hh, ht), fs = pairs[0]
            out.append(RttMatch(JoinSplitRef(g.txid, g.js_index, gh, gt),
                                JoinSplitRef(h.txid, h.js_index, hh, ht),
                                amount, kind, fs.total, fs.parts))
    return canonical_order(out)


# -- scoring ---------------------------------------------------------------------

@dataclass(frozen=True)
class EvalScore:
    true_positives: int
    false_positives: int
    false_negatives: int
    detected_coins: int
    planted_coins: int
    shielded_inflow: int

    @property
    def precision(self) -> Fraction | None:
        n = self.true_positives + self.false_positives
        return Fraction(self.true_positives, n) if n else None

    @property
    def recall(self) -> Fraction | None:
        n = self.true_positives + self.false_negatives
        return Fraction(self.true_positives, n) if n else None

    @property
    def matched_coin_share_detected(self) -> Fraction:
        return Fraction(self.detected_coins, self.shielded_inflow) if self.shielded_inflow \
            else Fraction(0)

    @property
    def matched_coin_share_planted(self) -> Fraction:
        return Fraction(self.planted_coins, self.shielded_inflow) if self.shielded_inflow \
            else Fraction(0)


def score(detected: Iterable[RttMatch | tuple], truth: GroundTruth,
          kinds: Iterable[MatchKind] | None = None, chain_id: str | None = None) -> EvalScore:
    """Compare detections to planted links by (shield ref, deshield ref).

    ``detected`` items are matches or ``(shield_ref, deshield_ref, amount)``
    tuples.  ``kinds`` restricts both sides to some match kinds.
    """
    if chain_id is not None and chain_id != truth.chain_id:
        raise ChainMismatchError(f"detections are from chain {chain_id}, "
                                 f"ground truth from {truth.chain_id}")
    kinds = set(kinds) if kinds is not None else set(MatchKind)
    found: dict[tuple, int] = {}
    for m in detected:
        if isinstance(m, RttMatch):
            if m.kind in kinds:
                found[m.pair] = m.amount
        else:
            found[(tuple(m[0]), tuple(m[1]))] = m[2]
    planted = {(l.shield, l.deshield): l.amount for l in truth.planted_links
               if l.kind in kinds}
    tp = found.keys() & planted.keys()
    return EvalScore(len(tp), len(found.keys() - planted.keys()),
                     len(planted.keys() - found.keys()),
                     sum(found.values()), sum(planted.values()), truth.shielded_inflow)


def random_small_config(seed: int, max_blocks: int = 50) -> SynthConfig:
    """A small chain whose shape is itself drawn from ``seed``.

    Half of these draw decoy amounts from a handful of values so that
    amounts repeat and the uniqueness rule is actually exercised.
    """
    rng = np.random.Generator(np.random.PCG64(seed))
    n_blocks = int(rng.integers(2, max_blocks, endpoint=True))
    choices = None
    if rng.random() < 0.5:
        choices = tuple(int(x) for x in rng.integers(10**4, 10**6, size=int(rng.integers(1, 8))))
    return SynthConfig(
        seed=seed,
        n_blocks=n_blocks,
        txs_per_block=(0, int(rng.integers(1, 10))),
        fraction_tx_with_joinsplit=float(rng.uniform(0, 1)),
        mixed_rate=float(rng.uniform(0, 0.3)),
        decoy_amount_choices=choices,
        rtt_behavior=RttBehavior(
            planted_exact_count=min(int(rng.integers(0, 4)), n_blocks - 2),
            collision_rate=float(rng.uniform(0, 0.5)),
        ),
    )


def bulk_chain(n_joinsplits: int, seed: int = 0, per_block: int = 1000,
               pair_fraction: float = 0.2) -> list[BlockRecord]:
    """A large joinsplit-only chain for scale runs.

    Skips the wallet economy and raw hashing: txids are hashes of a counter
    and block hashes are placeholders, so only store-level invariants hold.
    About ``pair_fraction`` of shieldings get a later deshielding of the
    same amount; the rest are singletons with random amounts.
    """
    rng = np.random.Generator(np.random.PCG64(seed))
    amounts = rng.integers(10**4, 10**12, size=n_joinsplits)
    is_pair = rng.random(n_joinsplits) < pair_fraction
    pending: list[int] = []
    blocks, counter, t = [], 0, 1_500_000_000

    def txid() -> str:
        nonlocal counter
        counter += 1
        return hashlib.sha256(counter.to_bytes(8, "little")).hexdigest()

    i, height = 0, 0
    while i < n_joinsplits:
        cb = txid()
        txs = [TxRecord(cb, True, (), (TxOut(1_250_000_000, b""),))]
        carried, pending = pending, []
        for a in carried[:per_block]:
            if i >= n_joinsplits:
                break
            tid = txid()
            txs.append(TxRecord(tid, False, (), (), (JoinSplitRecord(tid, 0, 0, a),)))
            i += 1
        pending = carried[per_block:]
        while len(txs) <= per_block and i < n_joinsplits:
            a = int(amounts[i])
            tid = txid()
            txs.append(TxRecord(tid, False, (), (), (JoinSplitRecord(tid, 0, a, 0),)))
            if is_pair[i]:
                pending.append(a)
            i += 1
        blocks.append(BlockRecord(height, hashlib.sha256(b"blk" + cb.encode()).hexdigest(),
                                  t, tuple(txs)))
        height += 1
        t += 150
    return blocks
