"""SplitMix64: a small, portable, seedable 64-bit generator.

Training schedules must reproduce bit-for-bit across implementations
and platforms, so the generator is pinned to SplitMix64 (Steele,
Lea & Flood's mixing function) rather than whatever a host standard
library ships. Reference outputs, for cross-checking ports:

    seed 0                   -> 0xE220A8397B1DCDAF, 0x6E789E6AA1B965F4,
                                0x06C45D188009454F
    seed 42                  -> 0xBDD732262FEB6E95, 0x28EFE333B266F103
    seed 0x123456789ABCDEF0  -> 0x161922C645CE50E8

``random()`` maps one 64-bit draw to a double in [0, 1) using the top
53 bits, the widest mantissa a float can take exactly.
"""

from __future__ import annotations

_MASK64 = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15
_TWO53 = float(1 << 53)


class SplitMix64:
    __slots__ = ("_state",)

    def __init__(self, seed: int):
        self._state = seed & _MASK64

    def next_u64(self) -> int:
        self._state = (self._state + _GAMMA) & _MASK64
        z = self._state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        return z ^ (z >> 31)

    def random(self) -> float:
        """Uniform double in [0, 1)."""
        return (self.next_u64() >> 11) / _TWO53

    def spawn_seed(self) -> int:
        """Derive an independent child seed (for per-run substreams)."""
        return self.next_u64()
