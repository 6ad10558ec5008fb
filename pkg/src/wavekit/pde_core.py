"""Shared discretization layer.

Grids live on one period in time and either a periodic cell [0, L_z) or a
truncated interval [-a, a] in the profile coordinate z.  The linearized
operators are second-order finite differences in conservative (flux) form;
time stepping is implicit Euler by default (unconditionally stable and
positivity preserving for cooperative couplings: the step matrix is an
M-matrix at moderate mesh Peclet numbers), with a Crank-Nicolson option used
by the eigensolver where second-order time accuracy matters.

Time-periodic boundary-value problems are solved by relaxation of the
parabolic flow; a positive periodic-Dirichlet principal eigenvalue makes the
period map a contraction, so the flow converges geometrically to the unique
time-periodic solution.  When nothing depends on time the periodic problem
degenerates to a steady one and a single sparse solve is used instead.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .errors import InputError, NumericalError
from .frame import FrameSystem

__all__ = [
    "Grid",
    "GridField",
    "OperatorSpec",
    "build_operator_mu",
    "apply_operator",
    "evolve_period",
    "solve_periodic_bvp",
    "Stepper",
]

_BIN_MAGIC = b"WKGF\x01"
_BIN_HEADER = "<5sBIII3d"


@dataclass(frozen=True)
class Grid:
    """Space-time grid over one period in t and a 1-D z domain."""

    n_t: int
    n_z: int
    t_period: float
    kind: str  # "periodic" | "interval"
    z0: float
    z1: float

    def __post_init__(self):
        # plain Python scalars keep serialized metadata round-trippable
        object.__setattr__(self, "n_t", int(self.n_t))
        object.__setattr__(self, "n_z", int(self.n_z))
        object.__setattr__(self, "t_period", float(self.t_period))
        object.__setattr__(self, "z0", float(self.z0))
        object.__setattr__(self, "z1", float(self.z1))
        if self.kind not in ("periodic", "interval"):
            raise InputError(f"unknown grid kind {self.kind!r}")
        if self.n_t < 1 or self.n_z < 16:
            raise InputError("need n_t >= 1 and n_z >= 16")
        if self.t_period <= 0 or self.z1 <= self.z0:
            raise InputError("degenerate grid extents")

    @classmethod
    def periodic_cell(cls, t_period: float, L_z: float, n_t: int, n_z: int) -> "Grid":
        return cls(n_t, n_z, t_period, "periodic", 0.0, L_z)

    @classmethod
    def cylinder(cls, t_period: float, a: float, n_t: int, n_z: int) -> "Grid":
        return cls(n_t, n_z, t_period, "interval", -a, a)

    @property
    def dt(self) -> float:
        return self.t_period / self.n_t

    @property
    def dz(self) -> float:
        if self.kind == "periodic":
            return (self.z1 - self.z0) / self.n_z
        return (self.z1 - self.z0) / (self.n_z - 1)

    @property
    def t(self) -> np.ndarray:
        return np.arange(self.n_t) * self.dt

    @property
    def z(self) -> np.ndarray:
        return self.z0 + np.arange(self.n_z) * self.dz

    @property
    def z_half(self) -> np.ndarray:
        """Face positions z_{j+1/2}; wraps for periodic grids."""
        if self.kind == "periodic":
            return self.z + 0.5 * self.dz
        return self.z[:-1] + 0.5 * self.dz


@dataclass
class GridField:
    """Component-valued samples over one period: values[i, k, j] at (t_k, z_j)."""

    values: np.ndarray
    grid: Grid

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        expect = (self.values.shape[0], self.grid.n_t, self.grid.n_z)
        if self.values.shape != expect:
            raise InputError(f"values shape {self.values.shape} != {expect}")
        if not np.all(np.isfinite(self.values)):
            raise InputError("GridField values must be finite")

    @property
    def N(self) -> int:
        return self.values.shape[0]

    def copy(self) -> "GridField":
        return GridField(self.values.copy(), self.grid)

    def sup(self) -> float:
        return float(np.abs(self.values).max())

    # -- CSV (header component,t_index,z,value; grid metadata in a comment) ----

    def to_csv(self, path) -> None:
        g = self.grid
        z = g.z
        with open(path, "w") as fh:
            fh.write(
                f"# grid kind={g.kind} n_t={g.n_t} n_z={g.n_z} "
                f"t_period={g.t_period!r} z0={g.z0!r} z1={g.z1!r}\n"
            )
            fh.write("component,t_index,z,value\n")
            for i in range(self.N):
                for k in range(g.n_t):
                    for j in range(g.n_z):
                        fh.write(f"{i},{k},{float(z[j])!r},{float(self.values[i, k, j])!r}\n")

    @classmethod
    def from_csv(cls, path) -> "GridField":
        with open(path) as fh:
            meta_line = fh.readline()
            if not meta_line.startswith("# grid"):
                raise InputError("missing grid metadata line")
            meta = dict(tok.split("=") for tok in meta_line[2:].split()[1:])
            grid = Grid(
                int(meta["n_t"]), int(meta["n_z"]), float(meta["t_period"]),
                meta["kind"], float(meta["z0"]), float(meta["z1"]),
            )
            header = fh.readline().strip()
            if header != "component,t_index,z,value":
                raise InputError(f"unexpected CSV header {header!r}")
            rows = np.atleast_2d(np.loadtxt(fh, delimiter=","))
        N = int(rows[:, 0].max()) + 1
        values = np.empty((N, grid.n_t, grid.n_z))
        values[rows[:, 0].astype(int), rows[:, 1].astype(int),
               np.round((rows[:, 2] - grid.z0) / grid.dz).astype(int)] = rows[:, 3]
        return cls(values, grid)

    # -- binary (explicit little-endian float64) --------------------------------

    def to_binary(self, path) -> None:
        g = self.grid
        kind = 0 if g.kind == "periodic" else 1
        header = struct.pack(
            _BIN_HEADER, _BIN_MAGIC, kind, self.N, g.n_t, g.n_z,
            g.t_period, g.z0, g.z1,
        )
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(np.ascontiguousarray(self.values, dtype="<f8").tobytes())

    @classmethod
    def from_binary(cls, path) -> "GridField":
        with open(path, "rb") as fh:
            raw = fh.read(struct.calcsize(_BIN_HEADER))
            magic, kind, N, n_t, n_z, t_period, z0, z1 = struct.unpack(_BIN_HEADER, raw)
            if magic != _BIN_MAGIC:
                raise InputError("not a wavekit GridField binary file")
            grid = Grid(n_t, n_z, t_period, "periodic" if kind == 0 else "interval", z0, z1)
            data = np.frombuffer(fh.read(), dtype="<f8").reshape(N, n_t, n_z)
        return cls(np.array(data, dtype=float), grid)


@dataclass(frozen=True)
class OperatorSpec:
    """Grid coefficient tables of the tilted frame operator.

    Acting on u componentwise,
        (op u)_i = d_t u_i - d_z(a_i d_z u_i) + drift_i d_z u_i
                   - sum_j coupling_ij u_j + pot0_i u_i,
    with drift_i = q_z,i - 2 mu a_i and pot0_i = -(mu^2 a_i + mu d_z a_i
    - mu q_z,i); mu = 0 recovers the plain frame operator.
    """

    fsys: FrameSystem
    mu: float
    grid: Grid
    a_node: np.ndarray     # (N, n_t, n_z)
    a_half: np.ndarray     # (N, n_t, n_faces)
    dza: np.ndarray        # (N, n_t, n_z): exact d_z a_i
    drift: np.ndarray      # (N, n_t, n_z)
    pot0: np.ndarray       # (N, n_t, n_z)
    coupling: np.ndarray   # (N, N, n_t, n_z): L'
    b_tab: np.ndarray      # (N, N, n_t, n_z): B' (for semilinear terms)

    @property
    def N(self) -> int:
        return self.a_node.shape[0]

    def is_time_independent(self) -> bool:
        return (
            _const_along(self.a_node, 1) and _const_along(self.drift, 1)
            and _const_along(self.pot0, 1) and _const_along(self.coupling, 2)
        )

    def is_z_independent(self) -> bool:
        return (
            _const_along(self.a_node, 2) and _const_along(self.drift, 2)
            and _const_along(self.pot0, 2) and _const_along(self.coupling, 3)
        )


def _const_along(arr, axis):
    ref = np.take(arr, [0], axis=axis)
    return bool(np.all(arr == ref))


def build_operator_mu(fsys: FrameSystem, mu: float, grid: Grid) -> OperatorSpec:
    """Sample the frame coefficients and assemble the tilted operator tables."""
    if mu < 0:
        raise InputError("tilt mu must be nonnegative")
    a_f, dza_f, adv_f, Lm_f, Bm_f = fsys.reduce_1d()
    t = grid.t
    z = grid.z
    zh = grid.z_half

    kz_max = 0
    kt_max = 0
    for f in list(a_f) + list(adv_f) + [g for row in Lm_f for g in row] + [g for row in Bm_f for g in row]:
        kt, kx = f.max_frequencies()
        kt_max = max(kt_max, kt)
        kz_max = max(kz_max, kx[0])
    if kz_max > 0 and fsys.L_z is not None and grid.dz > fsys.L_z / (4.0 * kz_max):
        raise InputError(
            f"grid under-resolves coefficients: need >= 4 points per wavelength "
            f"(dz={grid.dz:.4g}, shortest wavelength {fsys.L_z / kz_max:.4g})"
        )
    if kt_max > 0 and grid.n_t < 4 * kt_max:
        raise InputError("grid under-resolves coefficients in time: need n_t >= 4 k_t")

    a_node = np.stack([f.eval_grid(t, z) for f in a_f])
    a_half = np.stack([f.eval_grid(t, zh) for f in a_f])
    dza = np.stack([f.eval_grid(t, z) for f in dza_f])
    qz = np.stack([f.eval_grid(t, z) for f in adv_f])
    coupling = np.stack([np.stack([g.eval_grid(t, z) for g in row]) for row in Lm_f])
    b_tab = np.stack([np.stack([g.eval_grid(t, z) for g in row]) for row in Bm_f])

    drift = qz - 2.0 * mu * a_node
    pot0 = -(mu * mu * a_node + mu * dza - mu * qz)
    return OperatorSpec(fsys, float(mu), grid, a_node, a_half, dza, drift, pot0, coupling, b_tab)


# -- discrete residual ----------------------------------------------------------

def apply_operator(op: OperatorSpec, u: GridField, extra_diag: np.ndarray | None = None) -> GridField:
    """Evaluate (op u) on the grid.

    Centered differences over the periodic time axis, flux-form diffusion and
    centered first derivatives inside; one-sided second-order stencils close
    the Dirichlet ends of interval grids.
    """
    if u.grid != op.grid:
        raise InputError("grid mismatch between operator and field")
    g = op.grid
    v = u.values
    dt, dz = g.dt, g.dz

    dudt = (np.roll(v, -1, axis=1) - np.roll(v, 1, axis=1)) / (2.0 * dt)

    if g.kind == "periodic":
        vp = np.roll(v, -1, axis=2)
        vm = np.roll(v, 1, axis=2)
        flux_r = op.a_half * (vp - v) / dz
        div = (flux_r - np.roll(flux_r, 1, axis=2)) / dz
        dudz = (vp - vm) / (2.0 * dz)
    else:
        div = np.zeros_like(v)
        fr = op.a_half * (v[:, :, 1:] - v[:, :, :-1]) / dz
        div[:, :, 1:-1] = (fr[:, :, 1:] - fr[:, :, :-1]) / dz
        dudz = np.zeros_like(v)
        dudz[:, :, 1:-1] = (v[:, :, 2:] - v[:, :, :-2]) / (2.0 * dz)
        dudz[:, :, 0] = (-3 * v[:, :, 0] + 4 * v[:, :, 1] - v[:, :, 2]) / (2 * dz)
        dudz[:, :, -1] = (3 * v[:, :, -1] - 4 * v[:, :, -2] + v[:, :, -3]) / (2 * dz)
        # expanded a u'' + (d_z a) u' at the two boundary planes
        d2_l = (2 * v[:, :, 0] - 5 * v[:, :, 1] + 4 * v[:, :, 2] - v[:, :, 3]) / dz**2
        d2_r = (2 * v[:, :, -1] - 5 * v[:, :, -2] + 4 * v[:, :, -3] - v[:, :, -4]) / dz**2
        div[:, :, 0] = op.a_node[:, :, 0] * d2_l + op.dza[:, :, 0] * dudz[:, :, 0]
        div[:, :, -1] = op.a_node[:, :, -1] * d2_r + op.dza[:, :, -1] * dudz[:, :, -1]

    cu = np.einsum("ijtz,jtz->itz", op.coupling, v)
    res = dudt - div + op.drift * dudz - cu + op.pot0 * v
    if extra_diag is not None:
        res = res + extra_diag * v
    return GridField(res, g)


# -- time stepping ---------------------------------------------------------------

class Stepper:
    """Cached sparse step solver for the parabolic flow d_t v = S(t) v.

    S is the spatial part of -(op + diag(extra_diag)); unknowns are ordered
    z-major, component-minor (index j * N + i).  Dirichlet rows of S are left
    empty, so the implicit step matrix has identity rows there and boundary
    data is injected through the right-hand side.
    """

    def __init__(self, op: OperatorSpec, scheme: str = "be",
                 extra_diag: np.ndarray | None = None,
                 bc: tuple[np.ndarray, np.ndarray] | None = None):
        if scheme not in ("be", "cn"):
            raise InputError(f"unknown scheme {scheme!r}")
        g = op.grid
        if (bc is not None) != (g.kind == "interval"):
            raise InputError("boundary data is required exactly for interval grids")
        self.op = op
        self.grid = g
        self.scheme = scheme
        self.bc = bc
        self.N = op.N
        self.size = op.N * g.n_z
        self.extra_diag = extra_diag
        self._check_peclet()

        time_dep = not op.is_time_independent()
        if extra_diag is not None and extra_diag.shape[1] > 1:
            time_dep = time_dep or not _const_along(extra_diag, 1)
        self.time_dependent = time_dep
        self.n_distinct = g.n_t if time_dep else 1

        dt = g.dt
        eye = sp.identity(self.size, format="csc")
        w = 1.0 if scheme == "be" else 0.5
        self._S = [self._assemble_S(k) for k in range(self.n_distinct)]
        self._lhs_lu = [splu((eye - (w * dt) * S).tocsc()) for S in self._S]
        if scheme == "cn":
            self._rhs_mat = [(eye + (0.5 * dt) * S).tocsr() for S in self._S]
            # Dirichlet rows must carry pure boundary data, not a half-step
            if g.kind == "interval":
                for m in self._rhs_mat:
                    for row in self._dirichlet_rows():
                        m.data[m.indptr[row]:m.indptr[row + 1]] = 0.0

    def _check_peclet(self):
        a = self.op.a_node
        q = np.abs(self.op.drift)
        pos = a > 0
        if np.any(pos):
            pe = (q[pos] * self.grid.dz) / (2.0 * a[pos])
            if pe.max() > 1.0:
                raise InputError(
                    f"mesh Peclet number {pe.max():.3g} > 1: centered advection would "
                    "break the M-matrix property; refine dz"
                )

    def _dirichlet_rows(self):
        if self.grid.kind != "interval":
            return []
        nz, N = self.grid.n_z, self.N
        return [i for i in range(N)] + [(nz - 1) * N + i for i in range(N)]

    def _assemble_S(self, k: int) -> sp.csc_matrix:
        op, g = self.op, self.grid
        N, nz, dz = self.N, g.n_z, g.dz
        periodic = g.kind == "periodic"
        jj = np.arange(nz) if periodic else np.arange(1, nz - 1)
        jp = (jj + 1) % nz
        jm = (jj - 1) % nz
        extra = None
        if self.extra_diag is not None:
            kk = k if self.extra_diag.shape[1] > 1 else 0
            extra = self.extra_diag[:, kk, :]

        rows, cols, vals = [], [], []
        for i in range(N):
            ah = op.a_half[i, k]
            dr = op.drift[i, k, jj]
            aR = ah[jj]
            aL = ah[jm] if periodic else ah[jj - 1]
            m = jj * N + i
            rows += [m, m, m]
            cols += [jp * N + i, jm * N + i, m]
            vals += [aR / dz**2 - dr / (2 * dz),
                     aL / dz**2 + dr / (2 * dz),
                     -(aR + aL) / dz**2 - op.pot0[i, k, jj]
                     - (extra[i, jj] if extra is not None else 0.0)]
            for j2 in range(N):
                rows.append(m)
                cols.append(jj * N + j2)
                vals.append(op.coupling[i, j2, k, jj])
        return sp.csc_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(self.size, self.size),
        )

    def _flat(self, v):
        return np.ascontiguousarray(v.T).reshape(-1)

    def _unflat(self, w):
        return w.reshape(self.grid.n_z, self.N).T

    def step(self, v: np.ndarray, k: int) -> np.ndarray:
        """Advance from t_k to t_{k+1}; v is (N, n_z)."""
        g = self.grid
        idx_new = ((k + 1) % g.n_t) % self.n_distinct
        idx_old = (k % g.n_t) % self.n_distinct
        w = self._flat(v)
        rhs = w.copy() if self.scheme == "be" else self._rhs_mat[idx_old] @ w
        if g.kind == "interval":
            left, right = self.bc
            kk = (k + 1) % g.n_t
            rhs[: self.N] = left[:, kk]
            rhs[-self.N:] = right[:, kk]
        return self._unflat(self._lhs_lu[idx_new].solve(rhs))

    def step_implicit_quadratic(self, v: np.ndarray, k: int, b_k: np.ndarray,
                                inner_tol: float = 1e-13, max_inner: int = 60) -> np.ndarray:
        """Backward-Euler step of d_t v = S v - b v^2, quadratic kept implicit.

        Solves (I - dt S) w + dt b w^2 = v exactly (to inner_tol) by fixed-point
        iterations reusing the cached factorization; the steady state of this
        map is therefore the exact discrete steady state, with no splitting
        bias.  b_k is the (N, n_z) diagonal quadratic coefficient at t_{k+1};
        it is ignored on Dirichlet rows, which carry pure boundary data.
        """
        g = self.grid
        dt = g.dt
        idx_new = ((k + 1) % g.n_t) % self.n_distinct
        b = self._flat(b_k).copy()
        rhs0 = self._flat(v)
        if g.kind == "interval":
            b[: self.N] = 0.0
            b[-self.N:] = 0.0
            left, right = self.bc
            kk = (k + 1) % g.n_t
            rhs0 = rhs0.copy()
            rhs0[: self.N] = left[:, kk]
            rhs0[-self.N:] = right[:, kk]
        lu = self._lhs_lu[idx_new]
        w = lu.solve(rhs0)
        for _ in range(max_inner):
            w_new = lu.solve(rhs0 - dt * b * w * w)
            if np.abs(w_new - w).max() <= inner_tol * (1.0 + np.abs(w_new).max()):
                w = w_new
                break
            w = w_new
        return self._unflat(w)

    def run_period(self, v0: np.ndarray, store_orbit: bool = False):
        v = np.array(v0, dtype=float)
        orbit = np.empty((self.grid.n_t, self.N, self.grid.n_z)) if store_orbit else None
        for k in range(self.grid.n_t):
            if store_orbit:
                orbit[k] = v
            v = self.step(v, k)
        if store_orbit:
            return v, np.transpose(orbit, (1, 0, 2))
        return v

    def propagate_matrix(self, V: np.ndarray) -> np.ndarray:
        """One period applied to a matrix of column states (size, m)."""
        W = np.array(V, dtype=float)
        g = self.grid
        for k in range(g.n_t):
            idx_new = ((k + 1) % g.n_t) % self.n_distinct
            idx_old = (k % g.n_t) % self.n_distinct
            rhs = W if self.scheme == "be" else self._rhs_mat[idx_old] @ W
            if g.kind == "interval":
                rhs = rhs.copy()
                rhs[: self.N] = 0.0
                rhs[-self.N:] = 0.0
            W = self._lhs_lu[idx_new].solve(rhs)
        return W

    def steady_matrix(self) -> sp.csc_matrix:
        """-S with identity rows at the Dirichlet ends; solves op u = 0."""
        m = (-self._S[0]).tolil()
        for row in self._dirichlet_rows():
            m.rows[row] = [row]
            m.data[row] = [1.0]
        return m.tocsc()


def evolve_period(op: OperatorSpec, v0: np.ndarray, scheme: str = "be",
                  bc=None, extra_diag=None, store_orbit: bool = False):
    """Advance d_t v = (spatial part of -op) v over one time period.

    v0 has shape (N, n_z).  Linear, and positivity preserving for the default
    implicit Euler scheme with cooperative coupling at moderate mesh Peclet
    number (the step matrix is then an M-matrix).
    """
    v0 = np.asarray(v0, dtype=float)
    if v0.shape != (op.N, op.grid.n_z):
        raise InputError(f"v0 shape {v0.shape} != {(op.N, op.grid.n_z)}")
    stepper = Stepper(op, scheme=scheme, extra_diag=extra_diag, bc=bc)
    return stepper.run_period(v0, store_orbit=store_orbit)


def solve_periodic_bvp(op: OperatorSpec, boundary, init: GridField, tol: float,
                       extra_diag=None, max_periods: int = 20000,
                       scheme: str = "be", force_relaxation: bool = False):
    """Time-periodic solution of (op + diag(extra_diag)) u = 0 with Dirichlet data.

    boundary = (left, right), each of shape (N, n_t), sampled at grid times.
    Relaxation of the parabolic flow from init converges geometrically when
    the periodic-Dirichlet principal eigenvalue of the operator is positive;
    a fully time-independent problem is solved in one steady sparse solve.
    Returns (GridField, info dict).
    """
    g = op.grid
    if g.kind != "interval":
        raise InputError("solve_periodic_bvp expects an interval (cylinder) grid")
    left, right = (np.asarray(b, dtype=float) for b in boundary)
    if left.shape != (op.N, g.n_t) or right.shape != (op.N, g.n_t):
        raise InputError("boundary data must have shape (N, n_t)")
    stepper = Stepper(op, scheme=scheme, extra_diag=extra_diag, bc=(left, right))

    steady = (
        not force_relaxation
        and not stepper.time_dependent
        and np.all(left == left[:, :1])
        and np.all(right == right[:, :1])
    )
    if steady:
        K = stepper.steady_matrix()
        rhs = np.zeros(stepper.size)
        rhs[: op.N] = left[:, 0]
        rhs[-op.N:] = right[:, 0]
        u = splu(K).solve(rhs)
        vals = np.repeat(stepper._unflat(u)[:, None, :], g.n_t, axis=1)
        return GridField(vals, g), {"mode": "steady", "periods": 0, "changes": []}

    v = init.values[:, 0, :].copy()
    changes = []
    for _ in range(max_periods):
        v_new = stepper.run_period(v)
        change = float(np.abs(v_new - v).max())
        changes.append(change)
        v = v_new
        if change == 0.0 or change < tol * 1e-2:
            break
        if len(changes) >= 2 and changes[-2] > 0:
            q = changes[-1] / changes[-2]
            if q < 1.0 and change * q / (1.0 - q) < tol:
                break
    else:
        raise NumericalError(
            "periodic BVP relaxation did not converge "
            f"(last change {changes[-1]:.3e}); the periodic-Dirichlet eigenvalue "
            "may be nonpositive or the grid too coarse",
            history=changes,
        )
    _, orbit = stepper.run_period(v, store_orbit=True)
    return GridField(orbit, g), {"mode": "relaxation", "periods": len(changes), "changes": changes}
