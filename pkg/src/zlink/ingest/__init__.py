"""Bring chain data into the canonical record model."""

from __future__ import annotations

import enum
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from functools import partial
from typing import BinaryIO, Sequence

from ..model import BlockRecord, ChainDataError
from .raw import (DEFAULT_LAYOUT, WireFormatError, WireLayoutConfig, hash_to_hex,
                  iter_raw_payloads, parse_block)


class Source(enum.Enum):
    RAW_FILE = "raw"
    JSONL = "jsonl"
    RPC = "rpc"


@dataclass(frozen=True)
class IngestBatch:
    blocks: tuple[BlockRecord, ...]
    source: Source

    def __post_init__(self):
        check_height_order(self.blocks)

    def __len__(self):
        return len(self.blocks)


def check_height_order(blocks: Sequence[BlockRecord]) -> None:
    for prev, cur in zip(blocks, blocks[1:]):
        if cur.height <= prev.height:
            raise ChainDataError(
                f"heights not strictly increasing: {prev.height} then {cur.height}")


def read_raw(stream: BinaryIO, cfg: WireLayoutConfig = DEFAULT_LAYOUT,
             workers: int = 1) -> IngestBatch:
    """Parse a raw chain file.  With ``workers > 1`` blocks are decoded in
    worker processes; results are still returned in file order."""
    payloads = list(iter_raw_payloads(stream))
    parse = partial(parse_block, cfg=cfg)
    if workers > 1 and len(payloads) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            blocks = list(pool.map(parse, payloads, chunksize=64))
    else:
        blocks = [parse(p) for p in payloads]
    for prev, payload, block in zip(blocks, payloads[1:], blocks[1:]):
        if hash_to_hex(payload[8:40]) != prev.hash:
            raise WireFormatError(f"block {block.height}: header does not link to "
                                  f"block {prev.height}")
    return IngestBatch(tuple(blocks), Source.RAW_FILE)


from .jsonl import read_jsonl, write_jsonl  # noqa: E402
from .rpc import RpcClient, RpcError, fetch_range  # noqa: E402

__all__ = [
    "IngestBatch", "Source", "read_raw", "read_jsonl", "write_jsonl",
    "RpcClient", "RpcError", "fetch_range", "WireLayoutConfig",
]
