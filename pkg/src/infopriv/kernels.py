"""Message-space kernels and the marginalized kernel induced by a mapping.

Observations and messages use the 1-based alphabets ``{1, ..., |X|}`` and
``{1, ..., |Z|}``.  A :class:`PrivacyMapping` stores the per-sensor tables
``Q^t(z | x)`` as one array of shape ``(s, |X|, |Z|)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import LengthMismatch, SupportTooLarge

__all__ = [
    "KernelSpec",
    "parse_kernel",
    "PrivacyMapping",
    "count_kernel",
    "enumerate_messages",
    "message_probabilities",
    "kernel_Q",
    "kernel_Q_bruteforce",
    "gram_Q",
    "cross_gram_Q",
    "GramCache",
]

MAX_BRUTEFORCE_MESSAGES = 4096


@dataclass(frozen=True)
class KernelSpec:
    kind: str = "count"
    width: float = 1.0

    def __post_init__(self):
        if self.kind not in ("count", "gaussian"):
            raise ValueError(f"unknown kernel kind {self.kind!r}")
        if self.kind == "gaussian" and not self.width > 0:
            raise ValueError("gaussian width must be positive")

    def __call__(self, z, z2):
        z = np.asarray(z)
        z2 = np.asarray(z2)
        if z.shape[-1] != z2.shape[-1]:
            raise LengthMismatch("message vectors differ in length")
        if self.kind == "count":
            return np.sum(z == z2, axis=-1)
        diff = z.astype(float) - z2.astype(float)
        return np.exp(-np.sum(diff * diff, axis=-1) / (2.0 * self.width**2))

    def matrix(self, zs, zs2=None) -> np.ndarray:
        zs = np.asarray(zs)
        zs2 = zs if zs2 is None else np.asarray(zs2)
        return np.asarray(self(zs[:, None, :], zs2[None, :, :]), dtype=float)

    def __str__(self) -> str:
        return "count" if self.kind == "count" else f"gaussian:{self.width:g}"


def parse_kernel(text: str | KernelSpec | None) -> KernelSpec:
    """Parse ``"count"`` or ``"gaussian:<width>"``."""
    if text is None:
        return KernelSpec()
    if isinstance(text, KernelSpec):
        return text
    kind, _, arg = str(text).partition(":")
    kind = kind.strip().lower()
    if kind == "count":
        return KernelSpec("count")
    if kind == "gaussian":
        return KernelSpec("gaussian", float(arg) if arg else 1.0)
    raise ValueError(f"cannot parse kernel {text!r}")


@dataclass
class PrivacyMapping:
    """Per-sensor row-stochastic tables ``tables[t, x - 1, z - 1]``."""

    tables: np.ndarray

    def __post_init__(self):
        self.tables = np.asarray(self.tables, dtype=float)
        if self.tables.ndim != 3:
            raise ValueError("tables must have shape (s, |X|, |Z|)")

    @property
    def s(self) -> int:
        return self.tables.shape[0]

    @property
    def x_card(self) -> int:
        return self.tables.shape[1]

    @property
    def z_card(self) -> int:
        return self.tables.shape[2]

    def copy(self) -> "PrivacyMapping":
        return PrivacyMapping(self.tables.copy())

    def with_block(self, t: int, table) -> "PrivacyMapping":
        tables = self.tables.copy()
        tables[t] = table
        return PrivacyMapping(tables)

    def is_row_stochastic(self, tol: float = 1e-12) -> bool:
        return bool(
            np.all(self.tables >= -tol)
            and np.all(np.abs(self.tables.sum(axis=2) - 1.0) <= tol)
        )

    def column_mass_ok(self, delta1: float) -> bool:
        """Every message keeps total mass ``sum_x Q^t(z|x) >= delta1``."""
        return bool(np.all(self.tables.sum(axis=1) >= delta1))

    def band_ok(self, delta2: float) -> bool:
        """No entry lies strictly within ``delta2`` of ``1/|Z|``."""
        gap = np.abs(self.tables - 1.0 / self.z_card)
        return bool(np.all(gap >= delta2 - 1e-15))

    def in_q_prime(self, delta1: float, delta2: float) -> bool:
        return (
            self.is_row_stochastic()
            and self.column_mass_ok(delta1)
            and self.band_ok(delta2)
        )

    def rows(self, xs) -> np.ndarray:
        """Gather ``Q^t(. | x_i^t)`` into an array of shape ``(n, s, |Z|)``."""
        xs = np.atleast_2d(np.asarray(xs, dtype=int))
        return self.tables[np.arange(self.s)[None, :], xs - 1]

    def sample(self, xs, rng) -> np.ndarray:
        """Draw one message vector per observation row."""
        probs = self.rows(xs)
        cum = np.cumsum(probs, axis=2)
        u = rng.random(probs.shape[:2] + (1,))
        z = (u > cum).sum(axis=2) + 1
        return np.minimum(z, self.z_card)

    @classmethod
    def uniform(cls, s: int, x_card: int, z_card: int) -> "PrivacyMapping":
        return cls(np.full((s, x_card, z_card), 1.0 / z_card))

    @classmethod
    def deterministic(cls, assignment, z_card: int) -> "PrivacyMapping":
        """One-hot tables from ``assignment[t, x - 1] = z`` (1-based)."""
        assignment = np.asarray(assignment, dtype=int)
        s, x_card = assignment.shape
        tables = np.zeros((s, x_card, z_card))
        t_idx, x_idx = np.indices((s, x_card))
        tables[t_idx, x_idx, assignment - 1] = 1.0
        return cls(tables)

    @classmethod
    def identity(cls, s: int, x_card: int) -> "PrivacyMapping":
        return cls(np.broadcast_to(np.eye(x_card), (s, x_card, x_card)).copy())

    @classmethod
    def random(cls, s: int, x_card: int, z_card: int, rng) -> "PrivacyMapping":
        """Rows drawn uniformly on the probability simplex."""
        return cls(rng.dirichlet(np.ones(z_card), size=(s, x_card)))


def count_kernel(z, z2) -> int:
    """Number of sensors whose messages agree."""
    z = np.asarray(z)
    z2 = np.asarray(z2)
    if z.shape != z2.shape:
        raise LengthMismatch(f"message lengths {z.shape} and {z2.shape} differ")
    return int(np.sum(z == z2))


def enumerate_messages(s: int, z_card: int, limit: int | None = None) -> np.ndarray:
    """All message vectors in ``Z^s`` (1-based), lexicographic order."""
    total = z_card**s
    if limit is not None and total > limit:
        raise SupportTooLarge(f"|Z|^s = {total} exceeds the limit {limit}")
    grid = np.indices((z_card,) * s).reshape(s, -1).T
    return grid + 1


def message_probabilities(xs, Q: PrivacyMapping, limit=MAX_BRUTEFORCE_MESSAGES):
    """``Q(z | x_i)`` for every ``z`` in ``Z^s``; shape ``(n, |Z|^s)``."""
    zs = enumerate_messages(Q.s, Q.z_card, limit)
    rows = Q.rows(xs)  # (n, s, |Z|)
    probs = np.ones((rows.shape[0], zs.shape[0]))
    for t in range(Q.s):
        probs *= rows[:, t, zs[:, t] - 1]
    return probs, zs


def kernel_Q_bruteforce(x, x2, Q: PrivacyMapping, k: KernelSpec) -> float:
    """Double sum over ``Z^s x Z^s``; exists as a test oracle."""
    probs, zs = message_probabilities(np.vstack([x, x2]), Q)
    return float(probs[0] @ k.matrix(zs) @ probs[1])


def kernel_Q(x, x2, Q: PrivacyMapping, k: KernelSpec | str = "count") -> float:
    k = parse_kernel(k)
    x = np.asarray(x, dtype=int)
    x2 = np.asarray(x2, dtype=int)
    if x.shape != x2.shape or x.shape[-1] != Q.s:
        raise LengthMismatch("observation vectors must both have length s")
    if k.kind == "count":
        r1 = Q.rows(x)[0]
        r2 = Q.rows(x2)[0]
        return float(np.sum(r1 * r2))
    return kernel_Q_bruteforce(x, x2, Q, k)


def cross_gram_Q(xs, Q, xs2, Q2, k: KernelSpec | str = "count") -> np.ndarray:
    """``<Phi_Q(x_i), Phi_Q2(x2_j)>`` for two (possibly different) mappings."""
    k = parse_kernel(k)
    if k.kind == "count":
        a = Q.rows(xs).reshape(len(np.atleast_2d(xs)), -1)
        b = Q2.rows(xs2).reshape(len(np.atleast_2d(xs2)), -1)
        return a @ b.T
    pa, zs = message_probabilities(xs, Q)
    pb, _ = message_probabilities(xs2, Q2)
    return pa @ k.matrix(zs) @ pb.T


def gram_Q(xs, Q: PrivacyMapping, k: KernelSpec | str = "count") -> np.ndarray:
    k = parse_kernel(k)
    if k.kind == "count":
        feats = Q.rows(xs).reshape(len(np.atleast_2d(xs)), -1)
        gram = feats @ feats.T
    else:
        probs, zs = message_probabilities(xs, Q)
        gram = probs @ k.matrix(zs) @ probs.T
    return 0.5 * (gram + gram.T)


class GramCache:
    """Count-kernel Gram matrix kept as a sum of per-sensor contributions.

    Replacing one table only recomputes that sensor's ``n x n`` term.
    """

    def __init__(self, xs, Q: PrivacyMapping):
        self.xs = np.atleast_2d(np.asarray(xs, dtype=int))
        self._tables = Q.tables.copy()
        self._parts = np.stack([self._part(t) for t in range(Q.s)])
        self._total = self._parts.sum(axis=0)

    def _part(self, t: int) -> np.ndarray:
        rows = self._tables[t, self.xs[:, t] - 1]
        return rows @ rows.T

    def update(self, t: int, table) -> None:
        table = np.asarray(table, dtype=float)
        if np.array_equal(table, self._tables[t]):
            return
        self._tables[t] = table
        new = self._part(t)
        self._total += new - self._parts[t]
        self._parts[t] = new

    @property
    def matrix(self) -> np.ndarray:
        return self._total
