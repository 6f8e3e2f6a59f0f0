"""Exact algebra of Pauli strings on an unbounded spin chain.

Strings are stored at the sigma level (products of Pauli matrices); the
spin operators S^a = sigma^a / 2 enter only through the coefficients, see
:func:`spin_term`.  A polynomial is either *local* (a finite sum of strings
at absolute positions) or *covariant*, in which case it is the density of
the translation-invariant sum over all sites and every string is stored
shifted to offset 0.
"""

from __future__ import annotations

import functools
import itertools
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from .errors import NonHermitianInput, SupportTooLarge
from .params import SpinChainParams

__all__ = [
    "PauliString",
    "OperatorPolynomial",
    "Boost",
    "ChargeFamily",
    "multiply",
    "commutator",
    "boost",
    "spin_term",
    "h0_density",
    "c4_reference",
    "magnetization_density",
    "build_charge_family",
    "c4_density",
    "conserved_basis",
    "project_conserved",
    "normalize_charge",
    "spin_coefficient",
    "string_shapes",
    "PRUNE_TOL",
]

PRUNE_TOL = 1e-14

# sigma^a sigma^b = i eps_abc sigma^c for a != b
_PRODUCT = {
    ("X", "Y"): (1j, "Z"),
    ("Y", "X"): (-1j, "Z"),
    ("Y", "Z"): (1j, "X"),
    ("Z", "Y"): (-1j, "X"),
    ("Z", "X"): (1j, "Y"),
    ("X", "Z"): (-1j, "Y"),
}


@dataclass(frozen=True, order=True)
class PauliString:
    """A product of Pauli matrices starting at site ``offset``.

    ``letters`` runs over ``I, X, Y, Z``; the first and last letters are
    never ``I``.  The empty string is the identity and always sits at 0.
    """

    offset: int
    letters: str

    def __post_init__(self):
        if any(c not in "IXYZ" for c in self.letters):
            raise ValueError(f"invalid Pauli letters {self.letters!r}")
        if self.letters:
            if self.letters[0] == "I" or self.letters[-1] == "I":
                raise ValueError(f"non-canonical Pauli string {self.letters!r}")
        elif self.offset != 0:
            raise ValueError("the identity string must have offset 0")

    @classmethod
    def canonical(cls, offset: int, letters: str) -> "PauliString":
        """Trim identity factors at both ends and absorb them into the offset."""
        stripped = letters.lstrip("I")
        offset += len(letters) - len(stripped)
        stripped = stripped.rstrip("I")
        if not stripped:
            return IDENTITY
        return cls(offset, stripped)

    @classmethod
    def from_sites(cls, sites: Mapping[int, str]) -> "PauliString":
        active = {j: a for j, a in sites.items() if a != "I"}
        if not active:
            return IDENTITY
        lo, hi = min(active), max(active)
        return cls(lo, "".join(active.get(j, "I") for j in range(lo, hi + 1)))

    @property
    def support(self) -> int:
        return len(self.letters)

    @property
    def end(self) -> int:
        """One past the last occupied site."""
        return self.offset + len(self.letters)

    def letter_at(self, site: int) -> str:
        k = site - self.offset
        if 0 <= k < len(self.letters):
            return self.letters[k]
        return "I"

    def shifted(self, d: int) -> "PauliString":
        if not self.letters:
            return self
        return PauliString(self.offset + d, self.letters)

    def shape(self) -> "PauliString":
        return self.shifted(-self.offset)

    def commutes_with(self, other: "PauliString") -> bool:
        lo = max(self.offset, other.offset)
        hi = min(self.end, other.end)
        anti = 0
        for j in range(lo, hi):
            a, b = self.letter_at(j), other.letter_at(j)
            if a != "I" and b != "I" and a != b:
                anti += 1
        return anti % 2 == 0

    def __str__(self):
        return f"{self.letters or 'I'}@{self.offset}"


IDENTITY = PauliString(0, "")


def multiply(a: PauliString, b: PauliString) -> tuple[complex, PauliString]:
    """Product of two strings, ``a @ b = phase * result`` (sigma level)."""
    if not a.letters:
        return 1.0 + 0j, b
    if not b.letters:
        return 1.0 + 0j, a
    lo = min(a.offset, b.offset)
    hi = max(a.end, b.end)
    phase = 1.0 + 0j
    out = []
    for j in range(lo, hi):
        x, y = a.letter_at(j), b.letter_at(j)
        if x == "I":
            out.append(y)
        elif y == "I" or x == y:
            out.append("I" if x == y else x)
        else:
            p, c = _PRODUCT[(x, y)]
            phase *= p
            out.append(c)
    return phase, PauliString.canonical(lo, "".join(out))


class OperatorPolynomial:
    """Sum of Pauli strings with complex coefficients.

    Coefficients whose magnitude falls below ``PRUNE_TOL`` times the largest
    one are dropped.  With ``covariant=True`` the object stands for
    ``sum_j T^j (density) T^-j`` and all strings are stored at offset 0.
    """

    __slots__ = ("terms", "covariant")

    def __init__(self, terms: Mapping[PauliString, complex] | Iterable = (), covariant: bool = True):
        self.covariant = covariant
        acc: dict[PauliString, complex] = {}
        items = terms.items() if isinstance(terms, Mapping) else terms
        for s, c in items:
            if covariant:
                s = s.shape()
            acc[s] = acc.get(s, 0.0) + complex(c)
        self.terms = _prune(acc)

    # construction helpers
    @classmethod
    def zero(cls, covariant: bool = True) -> "OperatorPolynomial":
        return cls({}, covariant=covariant)

    @classmethod
    def identity(cls, covariant: bool = False) -> "OperatorPolynomial":
        return cls({IDENTITY: 1.0}, covariant=covariant)

    # arithmetic
    def _check(self, other):
        if not isinstance(other, OperatorPolynomial):
            return NotImplemented
        if other.covariant != self.covariant:
            raise TypeError("cannot combine covariant and local polynomials")
        return other

    def __add__(self, other):
        if self._check(other) is NotImplemented:
            return NotImplemented
        acc = dict(self.terms)
        for s, c in other.terms.items():
            acc[s] = acc.get(s, 0.0) + c
        return OperatorPolynomial(acc, self.covariant)

    def __sub__(self, other):
        if self._check(other) is NotImplemented:
            return NotImplemented
        return self + (-1.0) * other

    def __neg__(self):
        return (-1.0) * self

    def __mul__(self, scalar):
        if isinstance(scalar, OperatorPolynomial):
            return product(self, scalar)
        return OperatorPolynomial({s: scalar * c for s, c in self.terms.items()}, self.covariant)

    def __rmul__(self, scalar):
        return OperatorPolynomial({s: scalar * c for s, c in self.terms.items()}, self.covariant)

    def __truediv__(self, scalar):
        return self * (1.0 / scalar)

    def __matmul__(self, other):
        return product(self, other)

    def __len__(self):
        return len(self.terms)

    def __iter__(self):
        return iter(sorted(self.terms.items(), key=lambda kv: (kv[0].offset, kv[0].letters)))

    def __repr__(self):
        body = " + ".join(f"({c:.6g}){s}" for s, c in self)
        kind = "covariant" if self.covariant else "local"
        return f"OperatorPolynomial[{kind}]({body or '0'})"

    def __eq__(self, other):
        if not isinstance(other, OperatorPolynomial):
            return NotImplemented
        return self.covariant == other.covariant and self.allclose(other, atol=0.0, rtol=0.0)

    __hash__ = None

    # queries
    def is_zero(self, atol: float = 0.0) -> bool:
        return all(abs(c) <= atol for c in self.terms.values())

    def max_abs(self) -> float:
        return max((abs(c) for c in self.terms.values()), default=0.0)

    @property
    def max_support(self) -> int:
        return max((s.support for s in self.terms), default=0)

    def is_hermitian(self, tol: float = 1e-12) -> bool:
        # relative to the largest coefficient, so tiny anti-Hermitian polynomials are not misclassified
        scale = self.max_abs()
        return all(abs(c.imag) <= tol * scale for c in self.terms.values())

    def adjoint(self) -> "OperatorPolynomial":
        return OperatorPolynomial({s: c.conjugate() for s, c in self.terms.items()}, self.covariant)

    def translated(self, d: int) -> "OperatorPolynomial":
        if self.covariant:
            return self
        return OperatorPolynomial({s.shifted(d): c for s, c in self.terms.items()}, False)

    def canonical(self) -> "OperatorPolynomial":
        return OperatorPolynomial(self.terms, self.covariant)

    def coefficient(self, string: PauliString) -> complex:
        if self.covariant:
            string = string.shape()
        return self.terms.get(string, 0.0)

    def allclose(self, other: "OperatorPolynomial", atol: float = 1e-12, rtol: float = 1e-12) -> bool:
        keys = set(self.terms) | set(other.terms)
        scale = max(self.max_abs(), other.max_abs())
        return all(
            abs(self.terms.get(k, 0.0) - other.terms.get(k, 0.0)) <= atol + rtol * scale
            for k in keys
        )

    def as_local(self) -> "OperatorPolynomial":
        """The density as a local operator (strings anchored at site 0)."""
        return OperatorPolynomial(self.terms, covariant=False)

    def as_covariant(self) -> "OperatorPolynomial":
        return OperatorPolynomial(self.terms, covariant=True)

    # plain-text serialization
    def to_text(self) -> str:
        lines = []
        for s, c in self:
            lines.append(f"{float(c.real)!r} {float(c.imag)!r} {s.offset} {s.letters or 'I'}")
        return "\n".join(lines) + ("\n" if lines else "")

    @classmethod
    def from_text(cls, text: str, covariant: bool = True) -> "OperatorPolynomial":
        terms = []
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 4:
                raise ValueError(f"line {lineno}: expected 're im offset letters', got {line!r}")
            re, im, off, letters = parts
            letters = "" if letters == "I" else letters
            terms.append((PauliString.canonical(int(off), letters), complex(float(re), float(im))))
        return cls(terms, covariant=covariant)


def _prune(acc: dict) -> dict:
    if not acc:
        return {}
    biggest = max(abs(c) for c in acc.values())
    if biggest == 0.0:
        return {}
    cut = PRUNE_TOL * biggest
    return {s: c for s, c in acc.items() if abs(c) > cut}


def product(a: OperatorPolynomial, b: OperatorPolynomial) -> OperatorPolynomial:
    """Operator product of two local polynomials."""
    if a.covariant or b.covariant:
        raise TypeError("products of translation-invariant sums are not local; use commutator")
    acc: dict[PauliString, complex] = {}
    for sa, ca in a.terms.items():
        for sb, cb in b.terms.items():
            ph, s = multiply(sa, sb)
            acc[s] = acc.get(s, 0.0) + ph * ca * cb
    return OperatorPolynomial(acc, covariant=False)


def _string_commutator(sa: PauliString, sb: PauliString):
    """Return (coefficient, string) with [sa, sb] = coefficient * string, or None."""
    if sa.commutes_with(sb):
        return None
    ph, s = multiply(sa, sb)
    return 2.0 * ph, s


def _local_commutator(a_terms, b_terms) -> dict:
    acc: dict[PauliString, complex] = {}
    for sa, ca in a_terms:
        for sb, cb in b_terms:
            r = _string_commutator(sa, sb)
            if r is None:
                continue
            ph, s = r
            acc[s] = acc.get(s, 0.0) + ph * ca * cb
    return acc


def _overlapping_shifts(sa: PauliString, sb: PauliString) -> range:
    # shifts d for which sb shifted by d overlaps sa
    return range(sa.offset - sb.end + 1, sa.end - sb.offset)


def _positioned_commutators(a: OperatorPolynomial, b: OperatorPolynomial):
    """Yield (coefficient, string) of [a_0, T^d b_0] for every overlapping d.

    ``a`` is taken at its stored position; ``b`` is swept over all shifts.
    """
    for sa, ca in a.terms.items():
        for sb, cb in b.terms.items():
            for d in _overlapping_shifts(sa, sb):
                r = _string_commutator(sa, sb.shifted(d))
                if r is not None:
                    yield r[0] * ca * cb, r[1]


def commutator(A, B):
    """Exact commutator ``[A, B]``.

    Covariant with covariant gives the density of the commutator of the two
    translation-invariant sums; covariant with local gives a local result.
    Either argument may be a :class:`Boost`.
    """
    if isinstance(A, Boost):
        return A.commutator(B)
    if isinstance(B, Boost):
        return -1.0 * B.commutator(A)
    if not A.covariant and not B.covariant:
        return OperatorPolynomial(_local_commutator(A.terms.items(), B.terms.items()), covariant=False)
    if A.covariant and B.covariant:
        acc: dict[PauliString, complex] = {}
        for c, s in _positioned_commutators(A, B):
            s = s.shape()
            acc[s] = acc.get(s, 0.0) + c
        return OperatorPolynomial(acc, covariant=True)
    # one covariant sum against a local operator: the result is local
    if A.covariant:
        return -1.0 * commutator(B, A)
    acc = {}
    for c, s in _positioned_commutators(A, B):
        acc[s] = acc.get(s, 0.0) + c
    return OperatorPolynomial(acc, covariant=False)


@dataclass(frozen=True)
class Boost:
    """The boost ``B = -i sum_j j h_j`` built from a Hermitian energy density.

    Only commutators with conserved translation-invariant charges are
    supported; those are again translation-invariant, so the explicit site
    index never has to be materialized.
    """

    density: OperatorPolynomial

    def commutator(self, charge: OperatorPolynomial, conservation_tol: float = 1e-10) -> OperatorPolynomial:
        if not charge.covariant:
            raise TypeError("the boost can only be commuted with translation-invariant charges")
        # For [h_0, T^d q] = sum coef * string@o, the term at absolute site p
        # carries -i (p - o) coef; the p-dependence cancels iff [H, Q] = 0.
        zeroth: dict[PauliString, complex] = {}
        first: dict[PauliString, complex] = {}
        for c, s in _positioned_commutators(self.density, charge):
            key = s.shape()
            zeroth[key] = zeroth.get(key, 0.0) + c
            first[key] = first.get(key, 0.0) + c * s.offset
        scale = max((abs(v) for v in first.values()), default=0.0)
        leak = max((abs(v) for v in zeroth.values()), default=0.0)
        if leak > conservation_tol * max(scale, 1.0):
            raise ValueError(
                f"operator is not conserved by the density (|[H, Q]| ~ {leak:.3g}); "
                "its boost commutator is not translation invariant"
            )
        return OperatorPolynomial({s: 1j * v for s, v in first.items()}, covariant=True)


def boost(h_density: OperatorPolynomial) -> Boost:
    if not h_density.covariant:
        raise TypeError("the boost needs a translation-covariant density")
    if not h_density.is_hermitian():
        raise NonHermitianInput("boost requires a Hermitian energy density")
    return Boost(h_density)


def spin_term(coeff: complex, letters: str, offset: int = 0, covariant: bool = True) -> OperatorPolynomial:
    """``coeff * S^{a1}_{offset} S^{a2}_{offset+1} ...`` with S = sigma/2."""
    s = PauliString.canonical(offset, letters)
    weight = 0.5 ** sum(1 for c in letters if c != "I")
    return OperatorPolynomial({s: coeff * weight}, covariant=covariant)


def h0_density(J_y: float, J_z: float, h: float) -> OperatorPolynomial:
    """Energy density ``J_z S^z S^z + J_y S^y S^y + h S^x`` of the YZ chain."""
    return spin_term(J_z, "ZZ") + spin_term(J_y, "YY") + spin_term(h, "X")


def magnetization_density() -> OperatorPolynomial:
    return spin_term(1.0, "X")


def c4_reference(J_y: float, J_z: float, h: float) -> OperatorPolynomial:
    """Closed-form density of the fourth charge, transcribed term by term."""
    out = OperatorPolynomial.zero()
    for mu, J_mu, J_bar in (("Z", J_z, J_y), ("Y", J_y, J_z)):
        out = out + spin_term(J_mu, f"{mu}XX{mu}")
        out = out + spin_term(-h * J_mu / 2.0, f"{mu}X{mu}")
        out = out + spin_term(J_bar / 4.0, f"{mu}{mu}")
    return out


def c4_density(J_y: float, J_z: float, h: float) -> OperatorPolynomial:
    """Exactly conserved support-4 charge density of the YZ chain.

    Same structure as :func:`c4_reference`, but the three-site term carries
    ``-h`` instead of ``-h J_mu / 2``; only this form commutes with H0 when
    both the field and the anisotropy are present.
    """
    out = OperatorPolynomial.zero()
    for mu, J_mu, J_bar in (("Z", J_z, J_y), ("Y", J_y, J_z)):
        out = out + spin_term(J_mu, f"{mu}XX{mu}")
        out = out + spin_term(-h, f"{mu}X{mu}")
        out = out + spin_term(J_bar / 4.0, f"{mu}{mu}")
    return out


def spin_coefficient(string: PauliString, sigma_coeff: complex) -> complex:
    """Coefficient of the same string written with S = sigma/2 factors."""
    return sigma_coeff * 2 ** sum(1 for c in string.letters if c != "I")


def string_shapes(max_support: int) -> list[PauliString]:
    """All non-identity string shapes (offset 0) with support <= max_support."""
    out = []
    for length in range(1, max_support + 1):
        if length == 1:
            out.extend(PauliString(0, a) for a in "XYZ")
            continue
        for mid in itertools.product("IXYZ", repeat=length - 2):
            for a in "XYZ":
                for b in "XYZ":
                    out.append(PauliString(0, a + "".join(mid) + b))
    return out


@functools.lru_cache(maxsize=32)
def _conserved_basis(h_key: tuple, max_support: int):
    h = OperatorPolynomial(dict(h_key), covariant=True)
    shapes = string_shapes(max_support)
    rows: dict[PauliString, int] = {}
    entries = []
    for j, s in enumerate(shapes):
        for t, c in commutator(h, OperatorPolynomial({s: 1.0})).terms.items():
            entries.append((rows.setdefault(t, len(rows)), j, c))
    # commutators of Hermitian strings are purely imaginary multiples of strings
    M = np.zeros((max(len(rows), 1), len(shapes)))
    for i, j, c in entries:
        M[i, j] += c.imag
    _, sv, vh = np.linalg.svd(M, full_matrices=True)
    tol = 1e-10 * max(sv.max(initial=0.0), 1.0)
    rank = int(np.sum(sv > tol))
    return shapes, vh[rank:]


def conserved_basis(h_density: OperatorPolynomial, max_support: int):
    """Orthonormal basis (rows) of Hermitian densities of support <= max_support
    whose translation-invariant sums commute with the one built from ``h_density``.

    Returns ``(shapes, basis)`` with coefficients in the sigma normalization.
    """
    key = tuple(sorted(((s, c) for s, c in h_density.terms.items()), key=lambda kv: (kv[0].letters, kv[0].offset)))
    return _conserved_basis(key, max_support)


def project_conserved(poly: OperatorPolynomial, h_density: OperatorPolynomial, max_support: int):
    """Orthogonal projection of a Hermitian density onto the conserved subspace.

    Returns the projected polynomial and the norm of the discarded part.
    """
    shapes, basis = conserved_basis(h_density, max_support)
    index = {s: i for i, s in enumerate(shapes)}
    v = np.zeros(len(shapes))
    lost = 0.0
    for s, c in poly.terms.items():
        if s in index:
            v[index[s]] = c.real
            lost += c.imag ** 2
        else:
            lost += abs(c) ** 2
    w = basis.T @ (basis @ v)
    lost += float(np.sum((v - w) ** 2))
    return OperatorPolynomial({s: w[i] for i, s in enumerate(shapes)}, covariant=True), float(np.sqrt(lost))


def normalize_charge(poly: OperatorPolynomial, scale: float) -> OperatorPolynomial:
    """Rescale so the largest spin-level coefficient among the longest strings is ``+scale``.

    For the closed-form fourth charge this leaves ``J_mu S^mu S^x S^x S^mu``
    with its natural coefficient ``max(|J_y|, |J_z|)``.
    """
    top = poly.max_support
    longest = [(s, spin_coefficient(s, c).real) for s, c in poly.terms.items() if s.support == top]
    if not longest:
        return poly
    s_max, c_max = max(longest, key=lambda kv: (abs(kv[1]), kv[0].letters))
    return (scale / c_max) * poly


@dataclass
class ChargeFamily:
    """Ordered conserved charges ``C_i`` (translation-covariant densities)."""

    charges: list[OperatorPolynomial]
    labels: list[str]
    max_support: list[int] = field(default_factory=list)

    def __post_init__(self):
        if not self.max_support:
            self.max_support = [c.max_support for c in self.charges]

    def __len__(self):
        return len(self.charges)

    def __iter__(self):
        return iter(self.charges)

    def __getitem__(self, key):
        if isinstance(key, str):
            return self.charges[self.labels.index(key)]
        return self.charges[key]

    def scaled(self, factors) -> "ChargeFamily":
        factors = np.broadcast_to(np.asarray(factors, dtype=float), (len(self),))
        return ChargeFamily([f * c for f, c in zip(factors, self.charges)], list(self.labels), list(self.max_support))

    def subset(self, labels) -> "ChargeFamily":
        idx = [self.labels.index(l) for l in labels]
        return ChargeFamily([self.charges[i] for i in idx], [self.labels[i] for i in idx],
                            [self.max_support[i] for i in idx])


def build_charge_family(
    params: SpinChainParams,
    n_charges: int,
    ring_size: int | None = None,
) -> ChargeFamily:
    """Conserved charges of the YZ chain from repeated boost commutators.

    Returns ``C_2 = H0, C_3, ...`` with ``C_{i+1}`` the boost commutator
    ``[B, C_i]`` projected onto the exactly conserved densities of support
    ``<= i + 1`` and normalized by :func:`normalize_charge`.  The projection
    is the identity wherever the plain recursion already conserves (``h = 0``
    or ``J_y == J_z``); with both field and anisotropy the raw commutator
    carries a non-conserved remainder that it removes.  At the isotropic point ``J_y == J_z``
    and ``n_charges >= 2`` the magnetization ``C_1 = S^x`` is prepended and
    the family is ``C_1 .. C_{n_charges}``.  If ``ring_size`` is given, a
    charge whose density support reaches ``ring_size / 2`` is rejected.
    """
    if n_charges < 1:
        raise ValueError("n_charges must be >= 1")
    h = h0_density(params.J_y, params.J_z, params.h)
    with_c1 = params.isotropic and n_charges >= 2
    n_boosted = n_charges - 1 if with_c1 else n_charges
    scale = max(abs(params.J_y), abs(params.J_z)) or 1.0
    charges = [h]
    b = boost(h)
    while len(charges) < n_boosted:
        raw = b.commutator(charges[-1])
        support = len(charges) + 2
        conserved, _ = project_conserved(raw, h, support)
        if conserved.is_zero(atol=1e-12 * max(raw.max_abs(), 1.0)):
            raise ValueError(f"boost recursion produced no conserved part at support {support}")
        charges.append(normalize_charge(conserved, scale))
    labels = [f"C{i + 2}" for i in range(n_boosted)]
    if with_c1:
        charges.insert(0, magnetization_density())
        labels.insert(0, "C1")
    family = ChargeFamily(charges, labels)
    if ring_size is not None:
        for label, sup in zip(family.labels, family.max_support):
            if 2 * sup >= ring_size:
                raise SupportTooLarge(
                    f"{label} has support {sup}, which is not below N/2 for N={ring_size}"
                )
    return family
