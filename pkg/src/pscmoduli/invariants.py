"""Exact topology layer: plumbing graphs, signatures and the s-invariant.

Everything here uses integers and :class:`fractions.Fraction`; no floating
point enters any reported value.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from math import comb
from pathlib import Path


class InvariantError(ValueError):
    """An invariant computation was asked for outside its domain."""


# -- plumbing graphs ------------------------------------------------------------

@dataclass(frozen=True)
class PlumbingGraph:
    """Plumbing of ``D^{2k}``-bundles over ``S^{2k}``; boundary dimension ``4k - 1``."""

    k: int
    nodes: tuple[int, ...]
    edges: tuple[tuple[int, int], ...]
    labels: tuple[str, ...] = ()

    def __post_init__(self):
        if self.k < 2:
            raise InvariantError(f"k={self.k}: boundary dimension 4k-1 must be at least 7")
        v = len(self.nodes)
        if v == 0:
            raise InvariantError("plumbing graph has no nodes")
        seen = set()
        for i, j in self.edges:
            if not (0 <= i < v and 0 <= j < v) or i == j:
                raise InvariantError(f"bad edge ({i}, {j})")
            key = (min(i, j), max(i, j))
            if key in seen:
                raise InvariantError(f"duplicate edge ({i}, {j})")
            seen.add(key)
        if len(self.edges) != v - 1 or not self._connected():
            raise InvariantError("plumbing graph must be a tree (connected, |E| = |V| - 1)")

    def _connected(self) -> bool:
        return len(self.dfs_order(0)) == len(self.nodes)

    def neighbours(self, i: int) -> list[int]:
        out = [b for a, b in self.edges if a == i] + [a for a, b in self.edges if b == i]
        return sorted(out)

    def dfs_order(self, root: int = 0) -> list[int]:
        """Depth-first order from ``root``, neighbours visited in increasing index."""
        order, stack, seen = [], [root], set()
        while stack:
            i = stack.pop()
            if i in seen:
                continue
            seen.add(i)
            order.append(i)
            stack.extend(reversed([j for j in self.neighbours(i) if j not in seen]))
        return order

    def to_dict(self) -> dict:
        return {"k": self.k, "nodes": list(self.nodes), "edges": [list(e) for e in self.edges],
                "labels": list(self.labels)}


def parse_plumbing(text: str) -> PlumbingGraph:
    """Parse ``k <int>`` / ``node <id> euler <int>`` / ``edge <id> <id>`` lines.

    Blank lines and ``#`` comments are ignored; node ids are arbitrary tokens.
    """
    k = None
    ids: list[str] = []
    euler: list[int] = []
    raw_edges: list[tuple[str, str]] = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        tok = line.split()
        try:
            if tok[0] == "k" and len(tok) == 2:
                k = int(tok[1])
            elif tok[0] == "node" and len(tok) == 4 and tok[2] == "euler":
                if tok[1] in ids:
                    raise InvariantError(f"line {lineno}: duplicate node {tok[1]!r}")
                ids.append(tok[1])
                euler.append(int(tok[3]))
            elif tok[0] == "edge" and len(tok) == 3:
                raw_edges.append((tok[1], tok[2]))
            else:
                raise InvariantError(f"line {lineno}: cannot parse {line!r}")
        except ValueError as exc:
            if isinstance(exc, InvariantError):
                raise
            raise InvariantError(f"line {lineno}: {exc}") from exc
    if k is None:
        raise InvariantError("missing 'k <int>' line")
    index = {name: i for i, name in enumerate(ids)}
    try:
        edges = tuple((index[a], index[b]) for a, b in raw_edges)
    except KeyError as exc:
        raise InvariantError(f"edge refers to unknown node {exc.args[0]!r}") from exc
    return PlumbingGraph(k, tuple(euler), edges, tuple(ids))


def load_plumbing(path) -> PlumbingGraph:
    return parse_plumbing(Path(path).read_text())


def e8_graph(k: int = 2, euler: int = 2) -> PlumbingGraph:
    """The E8 tree: a chain of seven nodes with an eighth attached to the third
    from one end."""
    edges = tuple((i, i + 1) for i in range(6)) + ((4, 7),)
    return PlumbingGraph(k, (euler,) * 8, edges, tuple(f"v{i}" for i in range(8)))


def intersection_matrix(graph: PlumbingGraph, edge_sign: int = 1) -> list[list[int]]:
    """Euler numbers on the diagonal, ``edge_sign`` per plumbing edge."""
    v = len(graph.nodes)
    M = [[0] * v for _ in range(v)]
    for i, e in enumerate(graph.nodes):
        M[i][i] = e
    for i, j in graph.edges:
        M[i][j] = M[j][i] = edge_sign
    return M


# -- exact linear algebra -------------------------------------------------------

def _check_symmetric(M) -> list[list[Fraction]]:
    A = [[Fraction(x) for x in row] for row in M]
    n = len(A)
    if any(len(row) != n for row in A):
        raise InvariantError("matrix must be square")
    for i in range(n):
        for j in range(i):
            if A[i][j] != A[j][i]:
                raise InvariantError("matrix must be symmetric")
    return A


def signature(M) -> int:
    """``#positive - #negative`` of a nonsingular symmetric rational matrix.

    Symmetric (congruence) elimination over the rationals: a nonzero diagonal
    pivot is used when one exists; otherwise a 2x2 block with a nonzero
    off-diagonal entry is split off (it contributes one positive and one
    negative square).  By Sylvester's law of inertia the counts are invariants.
    """
    A = _check_symmetric(M)
    pos = neg = 0
    while A:
        n = len(A)
        p = next((i for i in range(n) if A[i][i] != 0), None)
        if p is not None:
            piv = A[p][p]
            pos += piv > 0
            neg += piv < 0
            rest = [i for i in range(n) if i != p]
            A = [[A[i][j] - A[i][p] * A[p][j] / piv for j in rest] for i in rest]
            continue
        q = next(((i, j) for i in range(n) for j in range(i + 1, n) if A[i][j] != 0), None)
        if q is None:
            raise InvariantError("singular matrix: signature of a degenerate form is undefined")
        i, j = q
        # the 2x2 block [[0, b], [b, 0]] is congruent to diag(2b, -b/2)
        pos += 1
        neg += 1
        b = A[i][j]
        rest = [r for r in range(n) if r not in (i, j)]
        # Schur complement of the block: A_rr - A_r{ij} B^{-1} A_{ij}r with
        # B^{-1} = [[0, 1/b], [1/b, 0]]
        A = [[A[r][c] - (A[r][i] * A[j][c] + A[r][j] * A[i][c]) / b for c in rest]
             for r in rest]
    return pos - neg


def determinant(M) -> Fraction:
    """Exact determinant by fraction-valued Gaussian elimination."""
    A = [[Fraction(x) for x in row] for row in M]
    n = len(A)
    det = Fraction(1)
    for c in range(n):
        p = next((r for r in range(c, n) if A[r][c] != 0), None)
        if p is None:
            return Fraction(0)
        if p != c:
            A[c], A[p] = A[p], A[c]
            det = -det
        det *= A[c][c]
        for r in range(c + 1, n):
            f = A[r][c] / A[c][c]
            if f:
                A[r] = [x - f * y for x, y in zip(A[r], A[c])]
    return det


def block_sum(*blocks) -> list[list[int]]:
    size = sum(len(b) for b in blocks)
    out = [[0] * size for _ in range(size)]
    o = 0
    for b in blocks:
        for i, row in enumerate(b):
            for j, x in enumerate(row):
                out[o + i][o + j] = x
        o += len(b)
    return out


# -- bP orders ------------------------------------------------------------------

BP_TABLE = {2: 28, 3: 992, 4: 8128, 5: 261632, 6: 1448424448}


def bernoulli_number(j: int) -> Fraction:
    """``B_j`` in the convention ``B_1 = 1/6, B_2 = 1/30, B_3 = 1/42, ...``
    (the absolute value of the even-index modern Bernoulli number ``b_{2j}``)."""
    if j < 1:
        raise InvariantError("Bernoulli index starts at 1")
    b = [Fraction(1)]
    for m in range(1, 2 * j + 1):
        b.append(-sum(comb(m + 1, i) * b[i] for i in range(m)) / (m + 1))
    return abs(b[2 * j])


def bp_order_formula(k: int) -> int:
    """``2^{2k-2} (2^{2k-1} - 1) numerator(4 B_k / k)``."""
    return 2 ** (2 * k - 2) * (2 ** (2 * k - 1) - 1) * (Fraction(4) * bernoulli_number(k) / k).numerator


def bp_order(k: int, override: int | None = None) -> int:
    if override is not None:
        if override < 1:
            raise InvariantError("bP order override must be positive")
        return int(override)
    if k not in BP_TABLE:
        raise InvariantError(f"no built-in bP order for k={k}; supply it explicitly")
    return BP_TABLE[k]


# -- s-invariant ----------------------------------------------------------------

def sigma_family(p: int, q: int, bp: int) -> int:
    """``8 (p |bP| + q)``."""
    if p < 0:
        raise InvariantError("p must be non-negative")
    if not 1 <= q <= bp:
        raise InvariantError(f"q={q} must lie in [1, {bp}]")
    return 8 * (p * bp + q)


def s_denominator(k: int) -> int:
    return 2 ** (2 * k + 1) * (2 ** (2 * k - 1) - 1)


def s_invariant(sig: int, k: int, ind_Dplus_zero: bool = True,
                pontrjagin_vanish: bool = True) -> Fraction:
    """``sigma / (2^{2k+1} (2^{2k-1} - 1))``, valid when the Dirac index term
    vanishes (positive scalar curvature, product near the boundary) and the
    Pontrjagin classes of ``W`` vanish (``W`` parallelisable)."""
    if k < 2:
        raise InvariantError("k must exceed 1")
    if not ind_Dplus_zero:
        raise InvariantError("the index term is not known to vanish: the metric must have "
                             "positive scalar curvature and be a product near the boundary")
    if not pontrjagin_vanish:
        raise InvariantError("the formula needs vanishing Pontrjagin classes "
                             "(a parallelisable bounding manifold)")
    return Fraction(int(sig), s_denominator(k))


def fraction_str(x: Fraction) -> str:
    return f"{x.numerator}/{x.denominator}"


@dataclass(frozen=True)
class SInvariantReport:
    k: int
    signature: int
    s_value: Fraction
    p: int
    q: int
    bp_order: int
    assumptions: dict = field(default_factory=lambda: {"ind_Dplus_zero": True,
                                                       "pontrjagin_vanish": True})

    def to_dict(self) -> dict:
        return {"k": self.k, "signature": self.signature, "s": fraction_str(self.s_value),
                "abs_s": fraction_str(abs(self.s_value)), "p": self.p, "q": self.q,
                "bp_order": self.bp_order, "assumptions": dict(self.assumptions)}


@dataclass(frozen=True)
class SeparationReport:
    k: int
    q: int
    bp_order: int
    reports: tuple[SInvariantReport, ...]
    components_lower_bound: int

    @property
    def verdict(self) -> str:
        return f">= {self.components_lower_bound} components"

    def to_dict(self) -> dict:
        return {"k": self.k, "q": self.q, "bp_order": self.bp_order,
                "s_values": [r.to_dict() for r in self.reports],
                "components_lower_bound": self.components_lower_bound,
                "verdict": self.verdict}


def s_report(p: int, q: int, k: int, bp: int) -> SInvariantReport:
    sig = sigma_family(p, q, bp)
    return SInvariantReport(k, sig, s_invariant(sig, k), p, q, bp)


def separate_components(k: int, q: int, bp: int, p_list) -> SeparationReport:
    """Exact ``|s|`` for each ``p``; all values must be pairwise distinct."""
    p_list = list(p_list)
    if len(set(p_list)) != len(p_list):
        raise InvariantError("p values must be distinct")
    reports = tuple(s_report(p, q, k, bp) for p in p_list)
    sigmas = [r.signature for r in sorted(reports, key=lambda r: r.p)]
    if any(b <= a for a, b in zip(sigmas, sigmas[1:])):
        raise InvariantError("signature family is not strictly increasing in p")
    values = [abs(r.s_value) for r in reports]
    if len(set(values)) != len(values):
        raise InvariantError("two values of p share |s|: implementation bug")
    return SeparationReport(k, q, bp, reports, len(values))
