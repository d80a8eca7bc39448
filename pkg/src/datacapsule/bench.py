"""Policy-join benchmark.

For each regulation pool and capsule count ``n`` the harness draws ``n``
random policies (random subsets of the pool's clauses), then times parsing a
fixed program, ingesting the ``n`` policies, and computing the residual.
Within one iteration the policies for smaller ``n`` are a prefix of those for
larger ``n``, so rows at different ``n`` are directly comparable.
"""

from __future__ import annotations

import csv
import io
import time
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

from .analysis import abstract_interpret
from .lattice import Vocabulary, default_vocabulary
from .policy import PolicyDNF, to_dnf
from .policy_syntax import parse_policy
from .program import parse_program
from .residual import ingest, residual_policy

BENCH_COLUMNS = ("regulation", "n", "iteration", "parse_ms", "ingest_ms", "residual_ms", "distinct_clauses")
DEFAULT_REGULATIONS = ("gdpr", "hipaa", "ferpa", "ccpa")
DEFAULT_COUNTS = tuple(2 ** k for k in range(1, 11))
BENCH_PROGRAM = "dpCount(1.0, 1e-6, project({zip}, filter(age > 17, getDC(c1))))"
BENCH_SCHEMA = {"c1": {"age": "AgeBucket", "zip": "Region", "name": "Name"}}


class BenchConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Pool:
    name: str
    clauses: tuple  # PolicyClause values, in a fixed order

    @classmethod
    def from_text(cls, name: str, text: str, vocab: Vocabulary | None = None) -> "Pool":
        dnf = to_dnf(parse_policy(text, vocab, origin=name), vocab)
        return cls(name, tuple(dnf.sorted_clauses()))

    @classmethod
    def load(cls, path: str | Path, vocab: Vocabulary | None = None) -> "Pool":
        path = Path(path)
        return cls.from_text(path.stem, path.read_text(encoding="utf-8"), vocab)

    @classmethod
    def bundled(cls, name: str, vocab: Vocabulary | None = None) -> "Pool":
        text = resources.files("datacapsule").joinpath("data").joinpath(f"{name}.priv").read_text(encoding="utf-8")
        return cls.from_text(name, text, vocab)


@dataclass(frozen=True)
class BenchConfig:
    pools: tuple
    counts: tuple = DEFAULT_COUNTS
    iterations: int = 10
    seed: int = 0
    mean: float | None = None    # subset size mean; default half the pool
    stddev: float | None = None  # default a quarter of the pool

    def __post_init__(self):
        if not self.pools:
            raise BenchConfigError("at least one pool is required")
        if not self.counts or any(n < 2 for n in self.counts):
            raise BenchConfigError("capsule counts must all be >= 2")
        if self.iterations < 1:
            raise BenchConfigError("iterations must be >= 1")
        if self.stddev is not None and self.stddev < 0:
            raise BenchConfigError("stddev must be non-negative")


@dataclass(frozen=True)
class BenchRow:
    regulation: str
    n: int
    iteration: int
    parse_ms: float
    ingest_ms: float
    residual_ms: float
    distinct_clauses: int

    def as_tuple(self) -> tuple:
        return (self.regulation, self.n, self.iteration, self.parse_ms, self.ingest_ms,
                self.residual_ms, self.distinct_clauses)


def subset_size(rng: np.random.Generator, pool_size: int, mean: float | None, stddev: float | None) -> int:
    mu = pool_size / 2 if mean is None else mean
    sd = pool_size / 4 if stddev is None else stddev
    return int(min(pool_size, max(1, round(rng.normal(mu, sd)))))


def random_policies(pool: Pool, count: int, rng: np.random.Generator,
                    mean: float | None = None, stddev: float | None = None) -> list[PolicyDNF]:
    out = []
    size = len(pool.clauses)
    for _ in range(count):
        k = subset_size(rng, size, mean, stddev)
        picks = rng.choice(size, size=k, replace=False)
        out.append(PolicyDNF(frozenset(pool.clauses[i] for i in picks)))
    return out


def _ms(start: float) -> float:
    return (time.perf_counter() - start) * 1000.0


def run_bench(config: BenchConfig, vocab: Vocabulary | None = None) -> list[BenchRow]:
    vocab = vocab or default_vocabulary()
    counts = sorted(set(config.counts))
    rows = []
    for p_index, pool in enumerate(config.pools):
        for it in range(config.iterations):
            rng = np.random.default_rng([config.seed, p_index, it])
            policies = random_policies(pool, counts[-1], rng, config.mean, config.stddev)
            for n in counts:
                t0 = time.perf_counter()
                expr = parse_program(BENCH_PROGRAM)
                parse_ms = _ms(t0)
                effect = abstract_interpret(BENCH_SCHEMA, expr, vocab).effect

                t0 = time.perf_counter()
                pin = ingest(policies[:n], vocab)
                ingest_ms = _ms(t0)

                t0 = time.perf_counter()
                residual_policy(pin, effect, vocab)
                residual_ms = _ms(t0)

                rows.append(BenchRow(pool.name, n, it, parse_ms, ingest_ms, residual_ms, len(pin.dnf)))
    return rows


def rows_to_csv(rows: Sequence[BenchRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(BENCH_COLUMNS)
    for r in rows:
        w.writerow([r.regulation, r.n, r.iteration, f"{r.parse_ms:.4f}", f"{r.ingest_ms:.4f}",
                    f"{r.residual_ms:.4f}", r.distinct_clauses])
    return buf.getvalue()


def default_config(iterations: int = 10, seed: int = 0, counts: Sequence[int] = DEFAULT_COUNTS) -> BenchConfig:
    return BenchConfig(tuple(Pool.bundled(name) for name in DEFAULT_REGULATIONS), tuple(counts), iterations, seed)
