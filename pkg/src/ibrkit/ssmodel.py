"""Block-diagonal stacking, interconnection closure, and frequency response
of linear state-space subsystems.

A subsystem is a real quadruple (A, B, C, D).  A list of subsystems is
stacked on the block diagonal and closed through four routing matrices

    u     = L1 @ y + L2 @ u_ext
    y_ext = L3 @ y + L4 @ u_ext

which yields one composite quadruple.  The composite transfer matrix is
evaluated at s = j*omega with a complex LU solve; the resolvent is never
inverted explicitly.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgWarning, get_lapack_funcs, lu_factor, lu_solve, svdvals

# Reciprocal condition estimates below this are treated as singular.
RCOND_LIMIT = 1e-12


class BlockDimensionError(ValueError):
    """A, B, C, D shapes of one block are mutually inconsistent."""


class AlgebraicLoopError(ArithmeticError):
    """(I - D @ L1) is numerically singular: the routing is ill-posed."""

    def __init__(self, smallest_sv: float):
        self.smallest_sv = smallest_sv
        super().__init__(
            f"algebraic loop: I - D@L1 is numerically singular "
            f"(smallest singular value {smallest_sv:.3e})"
        )


class SingularResolventError(ArithmeticError):
    """(j*omega*I - A) is numerically singular at the requested frequency."""

    def __init__(self, omega: float, rcond: float):
        self.omega = omega
        self.rcond = rcond
        super().__init__(
            f"resolvent singular at omega={omega!r} rad/s (rcond {rcond:.3e})"
        )


def _coerce_quadruple(a, b, c, d):
    """Normalize a quadruple to 2-D float arrays.

    1-D B is read as a column, 1-D C as a row (the usual SISO shorthand);
    empty B/C are reshaped against A and D so zero-state static blocks can
    pass empty arrays.
    """
    a = np.asarray(a, dtype=float)
    a = a.reshape(0, 0) if a.size == 0 else np.atleast_2d(a)
    d = np.atleast_2d(np.asarray(d, dtype=float))
    n = a.shape[0]
    p, m = d.shape
    b = np.asarray(b, dtype=float)
    if b.size == 0:
        b = b.reshape(n if b.ndim < 2 else b.shape[0], m if n == 0 else 0)
    elif b.ndim == 1:
        b = b.reshape(-1, 1)
    c = np.asarray(c, dtype=float)
    if c.size == 0:
        c = c.reshape(p if n == 0 else 0, n if c.ndim < 2 else c.shape[1])
    elif c.ndim == 1:
        c = c.reshape(1, -1)
    return a, b, c, d


def _check_quadruple(a, b, c, d) -> None:
    n, n2 = a.shape
    if n != n2:
        raise BlockDimensionError(f"A must be square, got {a.shape}")
    if b.shape[0] != n:
        raise BlockDimensionError(f"B has {b.shape[0]} rows, expected {n}")
    if c.shape[1] != n:
        raise BlockDimensionError(f"C has {c.shape[1]} columns, expected {n}")
    if d.shape[0] != c.shape[0]:
        raise BlockDimensionError(f"D has {d.shape[0]} rows, expected {c.shape[0]}")
    if d.shape[1] != b.shape[1]:
        raise BlockDimensionError(f"D has {d.shape[1]} columns, expected {b.shape[1]}")


def _freeze(arr: np.ndarray) -> np.ndarray:
    out = np.array(arr, dtype=float, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class StateSpaceBlock:
    """One subsystem.  n may be 0 for a pure static gain (only D nonempty);
    zero-state blocks must still carry correctly shaped empty A, B, C."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    input_labels: tuple[str, ...] = ()
    output_labels: tuple[str, ...] = ()

    def __post_init__(self):
        a, b, c, d = _coerce_quadruple(self.A, self.B, self.C, self.D)
        _check_quadruple(a, b, c, d)
        object.__setattr__(self, "A", _freeze(a))
        object.__setattr__(self, "B", _freeze(b))
        object.__setattr__(self, "C", _freeze(c))
        object.__setattr__(self, "D", _freeze(d))
        object.__setattr__(self, "input_labels", tuple(self.input_labels))
        object.__setattr__(self, "output_labels", tuple(self.output_labels))
        if self.input_labels and len(self.input_labels) != self.n_inputs:
            raise BlockDimensionError(
                f"{len(self.input_labels)} input labels for {self.n_inputs} inputs"
            )
        if self.output_labels and len(self.output_labels) != self.n_outputs:
            raise BlockDimensionError(
                f"{len(self.output_labels)} output labels for {self.n_outputs} outputs"
            )

    @property
    def n_states(self) -> int:
        return self.A.shape[0]

    @property
    def n_inputs(self) -> int:
        return self.D.shape[1]

    @property
    def n_outputs(self) -> int:
        return self.D.shape[0]


@dataclass(frozen=True)
class Interconnection:
    """Routing of a stacked block set.  Entries are gains: sparse {-1, 0, +1}
    routing plus steady-state coupling terms."""

    L1: np.ndarray
    L2: np.ndarray
    L3: np.ndarray
    L4: np.ndarray

    def __post_init__(self):
        for name in ("L1", "L2", "L3", "L4"):
            object.__setattr__(
                self, name, _freeze(np.atleast_2d(np.asarray(getattr(self, name), dtype=float)))
            )

    @property
    def n_ext_in(self) -> int:
        return self.L2.shape[1]

    @property
    def n_ext_out(self) -> int:
        return self.L3.shape[0]


@dataclass(frozen=True)
class CompositeSystem:
    A_sys: np.ndarray
    B_sys: np.ndarray
    C_sys: np.ndarray
    D_sys: np.ndarray

    def __post_init__(self):
        a, b, c, d = _coerce_quadruple(self.A_sys, self.B_sys, self.C_sys, self.D_sys)
        _check_quadruple(a, b, c, d)
        object.__setattr__(self, "A_sys", _freeze(a))
        object.__setattr__(self, "B_sys", _freeze(b))
        object.__setattr__(self, "C_sys", _freeze(c))
        object.__setattr__(self, "D_sys", _freeze(d))

    @property
    def n_states(self) -> int:
        return self.A_sys.shape[0]

    @property
    def n_ext_in(self) -> int:
        return self.D_sys.shape[1]

    @property
    def n_ext_out(self) -> int:
        return self.D_sys.shape[0]


def stack_blocks(blocks: list[StateSpaceBlock]) -> StateSpaceBlock:
    """Stack subsystems on the block diagonal.

    State/input/output counts add up; port label order follows block order.
    """
    if not blocks:
        raise ValueError("stack_blocks needs at least one block")
    for i, blk in enumerate(blocks):
        try:
            _check_quadruple(blk.A, blk.B, blk.C, blk.D)
        except BlockDimensionError as err:
            raise BlockDimensionError(f"block {i}: {err}") from None

    n = sum(b.n_states for b in blocks)
    m = sum(b.n_inputs for b in blocks)
    p = sum(b.n_outputs for b in blocks)
    a = np.zeros((n, n))
    b_ = np.zeros((n, m))
    c = np.zeros((p, n))
    d = np.zeros((p, m))
    i = j = k = 0
    for blk in blocks:
        ni, mi, pi = blk.n_states, blk.n_inputs, blk.n_outputs
        a[i : i + ni, i : i + ni] = blk.A
        b_[i : i + ni, j : j + mi] = blk.B
        c[k : k + pi, i : i + ni] = blk.C
        d[k : k + pi, j : j + mi] = blk.D
        i += ni
        j += mi
        k += pi
    in_labels = tuple(lbl for blk in blocks for lbl in (blk.input_labels or ("",) * blk.n_inputs))
    out_labels = tuple(lbl for blk in blocks for lbl in (blk.output_labels or ("",) * blk.n_outputs))
    return StateSpaceBlock(a, b_, c, d, in_labels, out_labels)


def stacked_input_index(blocks: list[StateSpaceBlock], label: str) -> int:
    """Global input index of a labelled port in the stacked system."""
    offset = 0
    for blk in blocks:
        if label in blk.input_labels:
            return offset + blk.input_labels.index(label)
        offset += blk.n_inputs
    raise KeyError(label)


def stacked_output_index(blocks: list[StateSpaceBlock], label: str) -> int:
    """Global output index of a labelled port in the stacked system."""
    offset = 0
    for blk in blocks:
        if label in blk.output_labels:
            return offset + blk.output_labels.index(label)
        offset += blk.n_outputs
    raise KeyError(label)


def _lu_with_rcond(mat: np.ndarray):
    """LU-factor with partial pivoting and a 1-norm reciprocal condition
    estimate from the same factorization."""
    if mat.shape[0] == 0:
        return None, np.inf
    anorm = np.linalg.norm(mat, 1)
    with warnings.catch_warnings():
        # exact singularity is detected below via the condition estimate
        warnings.simplefilter("ignore", LinAlgWarning)
        lu_piv = lu_factor(mat, check_finite=False)
    if anorm == 0.0:
        return lu_piv, 0.0
    gecon = get_lapack_funcs("gecon", (mat,))
    rcond, info = gecon(lu_piv[0], anorm)
    if info != 0:
        raise RuntimeError(f"gecon failed with info={info}")
    return lu_piv, float(rcond)


def compose(stacked: StateSpaceBlock, ic: Interconnection) -> CompositeSystem:
    """Close the routing u = L1 y + L2 u_ext, y_ext = L3 y + L4 u_ext around
    a stacked block.

    With F = (I - D L1)^-1:
        A_sys = A + B L1 F C
        B_sys = B (L1 F D + I) L2
        C_sys = L3 F C
        D_sys = L3 F D L2 + L4
    """
    a, b, c, d = stacked.A, stacked.B, stacked.C, stacked.D
    m, p = stacked.n_inputs, stacked.n_outputs
    if ic.L1.shape != (m, p):
        raise BlockDimensionError(f"L1 shape {ic.L1.shape}, expected {(m, p)}")
    if ic.L2.shape[0] != m:
        raise BlockDimensionError(f"L2 has {ic.L2.shape[0]} rows, expected {m}")
    if ic.L3.shape[1] != p:
        raise BlockDimensionError(f"L3 has {ic.L3.shape[1]} columns, expected {p}")
    if ic.L4.shape != (ic.n_ext_out, ic.n_ext_in):
        raise BlockDimensionError(
            f"L4 shape {ic.L4.shape}, expected {(ic.n_ext_out, ic.n_ext_in)}"
        )

    closure = np.eye(p) - d @ ic.L1
    lu_piv, rcond = _lu_with_rcond(closure)
    if rcond < RCOND_LIMIT:
        smallest = float(svdvals(closure)[-1]) if closure.size else 0.0
        raise AlgebraicLoopError(smallest)
    fc = lu_solve(lu_piv, c, check_finite=False) if p else c
    fd = lu_solve(lu_piv, d, check_finite=False) if p else d
    a_sys = a + b @ ic.L1 @ fc
    b_sys = b @ (ic.L1 @ fd + np.eye(m)) @ ic.L2
    c_sys = ic.L3 @ fc
    d_sys = ic.L3 @ fd @ ic.L2 + ic.L4
    return CompositeSystem(a_sys, b_sys, c_sys, d_sys)


def resolvent_solve(sys: CompositeSystem, omega: float) -> np.ndarray:
    """Solve (j*omega*I - A_sys) X = B_sys by complex LU with partial pivoting.

    This is the primitive behind frequency_response; exposed so the solve
    residual can be audited.
    """
    if not np.isfinite(omega):
        raise ValueError(f"omega must be finite, got {omega!r}")
    n = sys.n_states
    mat = 1j * omega * np.eye(n) - sys.A_sys
    lu_piv, rcond = _lu_with_rcond(mat)
    if rcond < RCOND_LIMIT:
        raise SingularResolventError(omega, rcond)
    return lu_solve(lu_piv, sys.B_sys.astype(complex), check_finite=False)


def frequency_response(sys: CompositeSystem, omega: float) -> np.ndarray:
    """Composite transfer matrix at s = j*omega (n_ext_out x n_ext_in)."""
    if sys.n_states == 0:
        if not np.isfinite(omega):
            raise ValueError(f"omega must be finite, got {omega!r}")
        return sys.D_sys.astype(complex)
    x = resolvent_solve(sys, omega)
    return sys.C_sys @ x + sys.D_sys
