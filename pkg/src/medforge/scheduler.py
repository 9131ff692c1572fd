"""Priority-sampled training schedules mixing pretrain and instruction data.

Every item enters one pool with a stage-dependent priority (defaults:
16 for pretrain, 2 for instruction) and is drawn without replacement
with probability proportional to its priority over the remaining mass.
High-priority pretrain items therefore dominate early batches and thin
out as they are consumed, giving a smooth transition into instruction
data instead of two discrete training phases.

Epoch counts are realized as instance multiplicity inside the single
pool: with the default two instruction epochs, each instruction item
contributes two drawable instances.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import IO, Iterable, NamedTuple, Sequence

from .records import CorpusRecord, Stage
from .rng import SplitMix64

# exported for downstream trainers; nothing here acts on them
OPTIMIZER_METADATA = {
    "learning_rate": 1e-5,
    "lr_scheduler": "cosine",
    "warmup_rate": 0.03,
}


@dataclass
class ScheduleConfig:
    pt_priority: float = 16.0
    sft_priority: float = 2.0
    pt_epochs: int = 1
    sft_epochs: int = 2
    batch_size: int = 256
    seed: int = 0

    def __post_init__(self):
        if self.pt_priority <= 0 or self.sft_priority <= 0:
            raise ValueError("priorities must be > 0")
        if self.pt_epochs < 1 or self.sft_epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")

    def to_json(self) -> dict:
        return {
            "pt_priority": self.pt_priority,
            "sft_priority": self.sft_priority,
            "pt_epochs": self.pt_epochs,
            "sft_epochs": self.sft_epochs,
            "batch_size": self.batch_size,
            "seed": self.seed,
        }


class PoolEntry(NamedTuple):
    item_id: str
    stage: Stage
    priority: float


class _FenwickTree:
    """Prefix-sum tree over instance weights; log-time draw and removal."""

    def __init__(self, weights: Sequence[float]):
        self.n = len(weights)
        self.tree = [0.0] * (self.n + 1)
        for i, w in enumerate(weights):
            self.add(i, w)

    def add(self, i: int, delta: float) -> None:
        i += 1
        while i <= self.n:
            self.tree[i] += delta
            i += i & (-i)

    def total(self) -> float:
        return self.prefix(self.n)

    def prefix(self, count: int) -> float:
        s = 0.0
        while count > 0:
            s += self.tree[count]
            count -= count & (-count)
        return s

    def find(self, target: float) -> int:
        """Largest index whose prefix sum is <= target (0-based)."""
        pos = 0
        bit = 1 << (self.n.bit_length())
        while bit:
            nxt = pos + bit
            if nxt <= self.n and self.tree[nxt] <= target:
                target -= self.tree[nxt]
                pos = nxt
            bit >>= 1
        return pos


class SamplingPool:
    """Multiset of drawable instances with priorities; draws consume."""

    def __init__(self, entries: Iterable[PoolEntry]):
        self.entries: list[PoolEntry] = list(entries)
        if not self.entries:
            raise ValueError("pool must contain at least one instance")
        self._weights = [e.priority for e in self.entries]
        self._tree = _FenwickTree(self._weights)
        self.drawn: set[int] = set()
        self.total_weight = sum(self._weights)

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def remaining(self) -> int:
        return len(self.entries) - len(self.drawn)

    def recomputed_weight(self) -> float:
        return sum(w for i, w in enumerate(self._weights) if i not in self.drawn)

    def draw(self, rng: SplitMix64) -> PoolEntry:
        if self.remaining == 0:
            raise ValueError("pool exhausted")
        total = self._tree.total()
        target = rng.random() * total
        if target >= total:  # guard against rounding at the top boundary
            target = total * (1 - 2**-53)
        idx = self._tree.find(target)
        if idx >= len(self.entries) or idx in self.drawn:
            # exact float-boundary hit on a consumed slot; take the next live one
            idx = next(
                i
                for i in (*range(idx + 1, len(self.entries)), *range(min(idx, len(self.entries))))
                if i not in self.drawn
            )
        entry = self.entries[idx]
        self._tree.add(idx, -self._weights[idx])
        self.drawn.add(idx)
        self.total_weight -= self._weights[idx]
        return entry


def build_pool(
    pt: Sequence[CorpusRecord],
    sft: Sequence[CorpusRecord],
    cfg: ScheduleConfig,
) -> SamplingPool:
    """Expand records into pool instances: each pretrain record appears
    ``pt_epochs`` times, each instruction record ``sft_epochs`` times."""
    if not pt and not sft:
        raise ValueError("both corpora are empty")
    entries: list[PoolEntry] = []
    for _ in range(cfg.pt_epochs):
        entries.extend(PoolEntry(r.id, Stage.PRETRAIN, cfg.pt_priority) for r in pt)
    for _ in range(cfg.sft_epochs):
        entries.extend(PoolEntry(r.id, Stage.INSTRUCTION, cfg.sft_priority) for r in sft)
    return SamplingPool(entries)


def pool_from_counts(n_pt: int, n_sft: int, cfg: ScheduleConfig) -> SamplingPool:
    """Synthetic pool with generated ids, for analysis and tests."""
    if n_pt == 0 and n_sft == 0:
        raise ValueError("both counts are zero")
    entries: list[PoolEntry] = []
    for _ in range(cfg.pt_epochs):
        entries.extend(
            PoolEntry(f"pt-{i}", Stage.PRETRAIN, cfg.pt_priority) for i in range(n_pt)
        )
    for _ in range(cfg.sft_epochs):
        entries.extend(
            PoolEntry(f"sft-{i}", Stage.INSTRUCTION, cfg.sft_priority) for i in range(n_sft)
        )
    return SamplingPool(entries)


def sample_next(pool: SamplingPool, rng: SplitMix64) -> PoolEntry:
    """Draw one instance with probability priority / remaining mass."""
    return pool.draw(rng)


def draw_all(pool: SamplingPool, rng: SplitMix64) -> list[PoolEntry]:
    return [pool.draw(rng) for _ in range(pool.remaining)]


def emit_schedule(pool: SamplingPool, cfg: ScheduleConfig) -> list[list[str]]:
    """Drain the pool into batches of ids. Deterministic for a fixed seed;
    the final batch may be short."""
    rng = SplitMix64(cfg.seed)
    order = draw_all(pool, rng)
    ids = [e.item_id for e in order]
    return [ids[i : i + cfg.batch_size] for i in range(0, len(ids), cfg.batch_size)]


def expected_stage_curve(
    cfg: ScheduleConfig, counts: tuple[int, int], runs: int = 1000
) -> list[float]:
    """Monte-Carlo estimate of pretrain density per schedule decile.

    ``counts`` is (pretrain items, instruction items). Uses ``runs``
    independent schedules seeded from ``cfg.seed``.
    """
    if runs < 1:
        raise ValueError("runs must be >= 1")
    n_pt, n_sft = counts
    master = SplitMix64(cfg.seed)
    sums = [0.0] * 10
    for _ in range(runs):
        pool = pool_from_counts(n_pt, n_sft, cfg)
        rng = SplitMix64(master.spawn_seed())
        order = draw_all(pool, rng)
        n = len(order)
        for d in range(10):
            lo = d * n // 10
            hi = (d + 1) * n // 10
            segment = order[lo:hi]
            if segment:
                pt_frac = sum(1 for e in segment if e.stage is Stage.PRETRAIN) / len(segment)
            else:
                pt_frac = 0.0
            sums[d] += pt_frac
    return [s / runs for s in sums]


def write_schedule(
    batches: list[list[str]],
    cfg: ScheduleConfig,
    counts: dict[str, int],
    sink: IO,
    run_header: dict | None = None,
) -> None:
    """Schedule file: one JSON header line, then one JSON array per batch."""
    header = {
        "config": cfg.to_json(),
        "seed": cfg.seed,
        "counts": counts,
        "optimizer": OPTIMIZER_METADATA,
    }
    if run_header:
        header["run"] = run_header
    sink.write(json.dumps(header, ensure_ascii=False, sort_keys=True) + "\n")
    for batch in batches:
        sink.write(json.dumps(batch, ensure_ascii=False) + "\n")


def read_schedule(stream: IO) -> tuple[dict, list[list[str]]]:
    lines = [line for line in stream if line.strip()]
    if not lines:
        raise ValueError("empty schedule file")
    header = json.loads(lines[0])
    batches = [json.loads(line) for line in lines[1:]]
    return header, batches
