"""Second-order cone programs and an embedded interior-point solver.

Problem form (ConicProblem):

    minimise    c^T x
    subject to  A_eq x = b_eq
                A_in x <= b_in
                l <= x <= u
                x[t] >= ||x[k1..kq]||     for every cone (t, k1..kq)

Internally this is converted to  min c^T x, A x = b, G x + s = h, s in K,
with K a product of a nonnegative orthant and second-order cones, and solved
with a homogeneous self-dual embedding, Nesterov-Todd scaling and a
Mehrotra predictor-corrector (the scheme used by ECOS / CVXOPT).
"""
from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

log = logging.getLogger(__name__)

DENSE_KKT_MAX = 400
STATIC_REG = 1e-9
STEP_FACTOR = 0.99
REFINE_FALLBACK = 1e-10


class Status(str, enum.Enum):
    OPTIMAL = "OPTIMAL"
    INFEASIBLE = "INFEASIBLE"
    UNBOUNDED = "UNBOUNDED"
    MAX_ITER = "MAX_ITER"
    NUMERICAL = "NUMERICAL"


@dataclass
class ConicProblem:
    n: int
    c: np.ndarray
    A_eq: sp.csr_matrix
    b_eq: np.ndarray
    A_in: sp.csr_matrix
    b_in: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    cones: list = field(default_factory=list)

    def __post_init__(self):
        n = self.n
        self.c = np.asarray(self.c, float).reshape(n)
        self.A_eq = sp.csr_matrix(self.A_eq, shape=(len(self.b_eq), n)) if self.A_eq is not None \
            else sp.csr_matrix((0, n))
        self.A_in = sp.csr_matrix(self.A_in, shape=(len(self.b_in), n)) if self.A_in is not None \
            else sp.csr_matrix((0, n))
        self.b_eq = np.asarray(self.b_eq, float).reshape(-1)
        self.b_in = np.asarray(self.b_in, float).reshape(-1)
        self.lb = np.full(n, -np.inf) if self.lb is None else np.asarray(self.lb, float).reshape(n)
        self.ub = np.full(n, np.inf) if self.ub is None else np.asarray(self.ub, float).reshape(n)
        self.cones = [np.asarray(k, dtype=np.int64) for k in self.cones]
        self.validate()

    def validate(self):
        heads = set()
        for k in self.cones:
            if len(k) < 2:
                raise ValueError("a cone needs a head and at least one member")
            if k.min() < 0 or k.max() >= self.n:
                raise ValueError("cone index out of range")
            if len(set(k.tolist())) != len(k):
                raise ValueError("repeated index inside a cone")
            if int(k[0]) in heads:
                raise ValueError(f"variable {int(k[0])} heads two cones")
            heads.add(int(k[0]))
        if self.A_eq.shape[1] != self.n or self.A_in.shape[1] != self.n:
            raise ValueError("matrix width does not match n")
        if np.any(self.lb > self.ub):
            raise ValueError("lower bound above upper bound")

    # residual report on the original data
    def residuals(self, x) -> tuple[float, float]:
        x = np.asarray(x, float)
        eq = float(np.max(np.abs(self.A_eq @ x - self.b_eq), initial=0.0))
        viol = [np.max(self.A_in @ x - self.b_in, initial=0.0),
                np.max(self.lb - x, initial=0.0), np.max(x - self.ub, initial=0.0)]
        for k in self.cones:
            viol.append(np.linalg.norm(x[k[1:]]) - x[k[0]])
        return eq, float(max(0.0, *viol))


@dataclass
class ConicSolution:
    x: np.ndarray
    objective: float
    status: Status
    primal_residual: float
    dual_residual: float
    gap: float
    iterations: int
    y: Optional[np.ndarray] = None

    @property
    def ok(self) -> bool:
        return self.status is Status.OPTIMAL


class ProblemBuilder:
    """Incremental assembly of a ConicProblem from named variable blocks."""

    def __init__(self):
        self.n = 0
        self.blocks: dict[str, np.ndarray] = {}
        self._lb: list = []
        self._ub: list = []
        self._c: dict[int, float] = {}
        self._eq = ([], [], [], [])     # rows, cols, vals, rhs
        self._in = ([], [], [], [])
        self.cones: list = []

    def var(self, name: str, shape, lb=-np.inf, ub=np.inf) -> np.ndarray:
        size = int(np.prod(shape))
        idx = np.arange(self.n, self.n + size).reshape(shape)
        self.n += size
        self._lb.append(np.broadcast_to(np.asarray(lb, float), (size,)).copy()
                        if np.ndim(lb) == 0 else np.asarray(lb, float).reshape(size))
        self._ub.append(np.broadcast_to(np.asarray(ub, float), (size,)).copy()
                        if np.ndim(ub) == 0 else np.asarray(ub, float).reshape(size))
        self.blocks[name] = idx
        return idx

    def cost(self, idx, w):
        idx = np.atleast_1d(idx).ravel()
        w = np.broadcast_to(np.asarray(w, float), idx.shape)
        for i, v in zip(idx, w):
            self._c[int(i)] = self._c.get(int(i), 0.0) + float(v)

    def _add(self, store, terms, rhs):
        rows, cols, vals, b = store
        rhs = np.atleast_1d(np.asarray(rhs, float))
        r0 = len(b)
        for idx, M in terms:
            idx = np.atleast_1d(idx).ravel()
            M = np.asarray(M, float)
            if M.ndim == 0:
                M = M * np.eye(len(idx)) if len(rhs) == len(idx) else np.full((len(rhs), len(idx)), M)
            M = M.reshape(len(rhs), len(idx))
            ii, jj = np.nonzero(M)
            rows.extend((r0 + ii).tolist())
            cols.extend(idx[jj].tolist())
            vals.extend(M[ii, jj].tolist())
        b.extend(rhs.tolist())
        return np.arange(r0, r0 + len(rhs))

    def eq(self, terms, rhs):
        return self._add(self._eq, terms, rhs)

    def le(self, terms, rhs):
        return self._add(self._in, terms, rhs)

    def cone(self, head, members):
        self.cones.append(np.concatenate([[int(head)], np.atleast_1d(members).ravel()]))

    def build(self) -> ConicProblem:
        n = self.n
        c = np.zeros(n)
        for i, v in self._c.items():
            c[i] = v
        def mat(store):
            rows, cols, vals, b = store
            return sp.csr_matrix((vals, (rows, cols)), shape=(len(b), n)), np.array(b, float)
        Aeq, beq = mat(self._eq)
        Ain, bin_ = mat(self._in)
        lb = np.concatenate(self._lb) if self._lb else np.zeros(0)
        ub = np.concatenate(self._ub) if self._ub else np.zeros(0)
        return ConicProblem(n, c, Aeq, beq, Ain, bin_, lb, ub, list(self.cones))


# ------------------------------------------------------------------ scaling

@dataclass
class Scaling:
    col: np.ndarray          # x = col * x_scaled
    row_eq: np.ndarray       # A_eq_scaled = diag(row_eq) A_eq diag(col)
    row_in: np.ndarray

    @property
    def is_identity(self) -> bool:
        return (np.all(self.col == 1.0) and np.all(self.row_eq == 1.0)
                and np.all(self.row_in == 1.0))

    def unscale_x(self, xs):
        return self.col * xs

    def scale_x(self, x):
        return x / self.col


def _cone_groups(n, cones):
    parent = np.arange(n)

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i
    for k in cones:
        r0 = find(int(k[0]))
        for j in k[1:]:
            rj = find(int(j))
            if rj != r0:
                parent[rj] = r0
    return np.array([find(i) for i in range(n)])


def presolve_scale(p: ConicProblem, iters: int = 20) -> tuple[ConicProblem, Scaling]:
    """Ruiz equilibration.  Columns linked by a cone share one factor."""
    n = p.n
    M = sp.vstack([p.A_eq, p.A_in]).tocsr()
    ident = Scaling(np.ones(n), np.ones(p.A_eq.shape[0]), np.ones(p.A_in.shape[0]))
    mags = np.abs(M.data[M.data != 0])
    if mags.size == 0 or (mags.min() >= 0.1 and mags.max() <= 10.0):
        return p, ident
    groups = _cone_groups(n, p.cones)
    col = np.ones(n)
    row = np.ones(M.shape[0])
    Mabs = abs(M).tocsr()
    for _ in range(iters):
        S = sp.diags(row) @ Mabs @ sp.diags(col)
        cn = np.asarray(S.max(axis=0).todense()).ravel()
        cg = np.zeros(n)
        np.maximum.at(cg, groups, cn)
        cn = cg[groups]
        cn[cn == 0] = 1.0
        col = col / np.sqrt(cn)
        S = sp.diags(row) @ Mabs @ sp.diags(col)
        rn = np.asarray(S.max(axis=1).todense()).ravel()
        rn[rn == 0] = 1.0
        row = row / np.sqrt(rn)
    pe = p.A_eq.shape[0]
    sc = Scaling(col, row[:pe], row[pe:])
    Aeq = sp.diags(sc.row_eq) @ p.A_eq @ sp.diags(col)
    Ain = sp.diags(sc.row_in) @ p.A_in @ sp.diags(col)
    q = ConicProblem(n, p.c * col, Aeq, p.b_eq * sc.row_eq, Ain, p.b_in * sc.row_in,
                     p.lb / col, p.ub / col, [k.copy() for k in p.cones])
    return q, sc


# ------------------------------------------------------------ cone algebra

class _Cones:
    """Orthant of size l followed by SOC blocks, grouped by dimension."""

    def __init__(self, l: int, soc_dims: Sequence[int]):
        self.l = l
        self.dims = list(soc_dims)
        self.m = l + sum(self.dims)
        self.groups = []            # (q, idx (k, q))
        off = l
        starts = []
        for q in self.dims:
            starts.append(off)
            off += q
        by_q: dict[int, list] = {}
        for s0, q in zip(starts, self.dims):
            by_q.setdefault(q, []).append(s0)
        for q in sorted(by_q):
            s0 = np.array(by_q[q])
            self.groups.append((q, s0[:, None] + np.arange(q)[None, :]))
        self.degree = l + len(self.dims)
        self.e = np.zeros(self.m)
        self.e[:l] = 1.0
        for q, idx in self.groups:
            self.e[idx[:, 0]] = 1.0

    def max_step(self, u, d):
        """Largest alpha with u + alpha d in the cone (u interior)."""
        a = np.inf
        if self.l:
            dl = d[:self.l]
            neg = dl < 0
            if np.any(neg):
                a = min(a, float(np.min(-u[:self.l][neg] / dl[neg])))
        for q, idx in self.groups:
            U, D = u[idx], d[idx]
            A = D[:, 0] ** 2 - np.sum(D[:, 1:] ** 2, axis=1)
            B = U[:, 0] * D[:, 0] - np.sum(U[:, 1:] * D[:, 1:], axis=1)
            C = U[:, 0] ** 2 - np.sum(U[:, 1:] ** 2, axis=1)
            C = np.maximum(C, 0.0)
            disc = B * B - A * C
            ok = disc >= 0
            sq = np.sqrt(np.where(ok, disc, 0.0))
            qv = -(B + np.where(B >= 0, sq, -sq))
            with np.errstate(divide="ignore", invalid="ignore"):
                r1 = np.where(A != 0, qv / A, np.inf)
                r2 = np.where(qv != 0, C / qv, np.inf)
                # linear case A == 0
                lin = np.where(B < 0, -C / (2 * B), np.inf)
            r1 = np.where(A == 0, lin, r1)
            r2 = np.where(A == 0, np.inf, r2)
            cand = np.full(len(A), np.inf)
            for r in (r1, r2):
                good = ok & np.isfinite(r) & (r > 0)
                cand = np.where(good, np.minimum(cand, r), cand)
            # guard: head must not go negative
            hd = D[:, 0] < 0
            cand = np.where(hd, np.minimum(cand, -U[:, 0] / np.where(hd, D[:, 0], -1.0)), cand)
            if cand.size:
                a = min(a, float(np.min(cand)))
        return a

    def interior_shift(self, s):
        """Shift s into the interior, ECOS style."""
        alpha = -np.inf
        if self.l:
            alpha = max(alpha, float(-np.min(s[:self.l])))
        for q, idx in self.groups:
            S = s[idx]
            alpha = max(alpha, float(np.max(np.linalg.norm(S[:, 1:], axis=1) - S[:, 0])))
        if alpha < 0:
            return s.copy()
        return s + (1.0 + alpha) * self.e

    # --- NT scaling -------------------------------------------------------
    def nt_scaling(self, s, z):
        W = {"l": None, "soc": []}
        lam = np.empty(self.m)
        if self.l:
            sl, zl = s[:self.l], z[:self.l]
            W["l"] = np.sqrt(sl / zl)
            lam[:self.l] = np.sqrt(sl * zl)
        for q, idx in self.groups:
            S, Z = s[idx], z[idx]
            sres = S[:, 0] ** 2 - np.sum(S[:, 1:] ** 2, axis=1)
            zres = Z[:, 0] ** 2 - np.sum(Z[:, 1:] ** 2, axis=1)
            if np.any(sres <= 0) or np.any(zres <= 0):
                raise FloatingPointError("iterate left the cone")
            sb = S / np.sqrt(sres)[:, None]
            zb = Z / np.sqrt(zres)[:, None]
            gam = np.sqrt(0.5 * (1.0 + np.sum(sb * zb, axis=1)))
            Jz = zb.copy()
            Jz[:, 1:] *= -1
            wb = (sb + Jz) / (2.0 * gam)[:, None]
            eta = (sres / zres) ** 0.25
            W["soc"].append((eta, wb))
            lam[idx] = self._soc_apply(eta, wb, Z)
        return W, lam

    @staticmethod
    def _soc_apply(eta, wb, V, inverse=False):
        w0, w1 = wb[:, 0], wb[:, 1:]
        v0, v1 = V[:, 0], V[:, 1:]
        dot = np.sum(w1 * v1, axis=1)
        out = np.empty_like(V)
        if not inverse:
            out[:, 0] = w0 * v0 + dot
            out[:, 1:] = v1 + ((v0 + dot / (1.0 + w0)))[:, None] * w1
            return out * eta[:, None]
        out[:, 0] = w0 * v0 - dot
        out[:, 1:] = v1 + ((-v0 + dot / (1.0 + w0)))[:, None] * w1
        return out / eta[:, None]

    def W_apply(self, W, v, inverse=False):
        out = np.empty_like(v)
        if self.l:
            out[:self.l] = v[:self.l] / W["l"] if inverse else v[:self.l] * W["l"]
        for (q, idx), (eta, wb) in zip(self.groups, W["soc"]):
            out[idx] = self._soc_apply(eta, wb, v[idx], inverse)
        return out

    def W2_blocks(self, W):
        """Data for the -W^T W block: orthant diagonal and per-group dense blocks."""
        diag = W["l"] ** 2 if self.l else np.zeros(0)
        blocks = []
        for (q, idx), (eta, wb) in zip(self.groups, W["soc"]):
            k = len(idx)
            w0, w1 = wb[:, 0], wb[:, 1:]
            M = np.zeros((k, q, q))
            M[:, 0, 0] = w0
            M[:, 0, 1:] = w1
            M[:, 1:, 0] = w1
            M[:, 1:, 1:] = np.eye(q - 1)[None] + w1[:, :, None] * w1[:, None, :] / (1.0 + w0)[:, None, None]
            M = M * eta[:, None, None]
            blocks.append(M @ M)
        return diag, blocks

    def jordan(self, u, v):
        out = np.empty_like(u)
        if self.l:
            out[:self.l] = u[:self.l] * v[:self.l]
        for q, idx in self.groups:
            U, V = u[idx], v[idx]
            r = np.empty_like(U)
            r[:, 0] = np.sum(U * V, axis=1)
            r[:, 1:] = U[:, :1] * V[:, 1:] + V[:, :1] * U[:, 1:]
            out[idx] = r
        return out

    def jordan_div(self, lam, v):
        """Solve lam o x = v."""
        out = np.empty_like(v)
        if self.l:
            out[:self.l] = v[:self.l] / lam[:self.l]
        for q, idx in self.groups:
            L, V = lam[idx], v[idx]
            det = L[:, 0] ** 2 - np.sum(L[:, 1:] ** 2, axis=1)
            u0 = (L[:, 0] * V[:, 0] - np.sum(L[:, 1:] * V[:, 1:], axis=1)) / det
            u1 = (V[:, 1:] - u0[:, None] * L[:, 1:]) / L[:, :1]
            out[idx] = np.concatenate([u0[:, None], u1], axis=1)
        return out


# ------------------------------------------------------------ standard form

@dataclass
class _Std:
    c: np.ndarray
    A: sp.csr_matrix
    b: np.ndarray
    G: sp.csr_matrix
    h: np.ndarray
    cones: _Cones
    # weights turning scaled residual entries into original units
    wy: np.ndarray
    wz: np.ndarray
    wx: np.ndarray


def _to_standard(p: ConicProblem, sc: Scaling) -> _Std:
    n = p.n
    fixed = np.isfinite(p.lb) & np.isfinite(p.ub) & (p.lb == p.ub)
    fi = np.nonzero(fixed)[0]
    A = sp.vstack([p.A_eq, sp.csr_matrix((np.ones(len(fi)), (np.arange(len(fi)), fi)),
                                         shape=(len(fi), n))]).tocsr()
    b = np.concatenate([p.b_eq, p.lb[fi]])
    wy = np.concatenate([1.0 / sc.row_eq, sc.col[fi]])
    ui = np.nonzero(np.isfinite(p.ub) & ~fixed)[0]
    li = np.nonzero(np.isfinite(p.lb) & ~fixed)[0]
    rows = [p.A_in,
            sp.csr_matrix((np.ones(len(ui)), (np.arange(len(ui)), ui)), shape=(len(ui), n)),
            sp.csr_matrix((-np.ones(len(li)), (np.arange(len(li)), li)), shape=(len(li), n))]
    h = [p.b_in, p.ub[ui], -p.lb[li]]
    wz = [1.0 / sc.row_in, sc.col[ui], sc.col[li]]
    l = p.A_in.shape[0] + len(ui) + len(li)
    order = sorted(range(len(p.cones)), key=lambda k: len(p.cones[k]))
    dims = []
    for k in order:
        idx = p.cones[k]
        q = len(idx)
        rows.append(sp.csr_matrix((-np.ones(q), (np.arange(q), idx)), shape=(q, n)))
        h.append(np.zeros(q))
        wz.append(sc.col[idx])
        dims.append(q)
    G = sp.vstack(rows).tocsr() if rows else sp.csr_matrix((0, n))
    return _Std(p.c.copy(), A, b, G, np.concatenate(h), _Cones(l, dims),
                wy, np.concatenate(wz), 1.0 / sc.col)


# ------------------------------------------------------------ KKT system

class _KKT:
    def __init__(self, std: _Std, reg: float = STATIC_REG):
        self.n = std.A.shape[1]
        self.p = std.A.shape[0]
        self.m = std.G.shape[0]
        self.N = self.n + self.p + self.m
        self.std = std
        self.reg = reg
        self.dense = self.N <= DENSE_KKT_MAX
        n, p, m = self.n, self.p, self.m
        A = std.A.tocoo()
        G = std.G.tocoo()
        r = [A.row + n, A.col, G.row + n + p, G.col]
        c = [A.col, A.row + n, G.col, G.row + n + p]
        v = [A.data, A.data, G.data, G.data]
        self.static = sp.coo_matrix((np.concatenate(v), (np.concatenate(r), np.concatenate(c))),
                                    shape=(self.N, self.N)).tocsc()
        cones = std.cones
        rr, cc = [np.arange(cones.l) + n + p], [np.arange(cones.l) + n + p]
        for q, idx in cones.groups:
            gi = idx + n + p
            rr.append(np.repeat(gi, q, axis=1).ravel())
            cc.append(np.tile(gi, (1, q)).ravel())
        self.w_rows = np.concatenate(rr)
        self.w_cols = np.concatenate(cc)
        self.reg_diag = np.concatenate([np.full(n, reg), np.full(p, -reg), np.full(m, -reg)])

    def factor(self, W2diag, W2blocks):
        data = np.concatenate([-W2diag] + [-B.ravel() for B in W2blocks])
        Wm = sp.coo_matrix((data, (self.w_rows, self.w_cols)), shape=(self.N, self.N)).tocsc()
        self.K = (self.static + Wm).tocsc()
        Kr = self.K + sp.diags(self.reg_diag)
        if self.dense:
            self.lu = sla.lu_factor(Kr.toarray(), check_finite=True)
            self._solve = lambda r: sla.lu_solve(self.lu, r)
        else:
            # diagonal pivots keep the fill-reducing order; quasi-definiteness makes
            # this stable enough, with a pivoting fallback if refinement stalls
            self._Kr = Kr.tocsc()
            try:
                self.lu = spla.splu(self._Kr, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                                    options=dict(SymmetricMode=True))
                self._pivoted = False
            except RuntimeError:
                self.lu = self._pivoting_factor()
                self._pivoted = True
            self._solve = self.lu.solve

    def _refined(self, rhs, refine):
        x = self._solve(rhs)
        tol = 1e-14 * (1.0 + np.max(np.abs(rhs)))
        res = rhs - self.K @ x
        for _ in range(refine):
            if np.max(np.abs(res)) <= tol:
                break
            x = x + self._solve(res)
            res = rhs - self.K @ x
        return x, float(np.max(np.abs(res))) / (1.0 + np.max(np.abs(rhs)))

    def _pivoting_factor(self):
        """Threshold pivoting, escalating to partial pivoting and then extra regularisation."""
        bump = 1.0
        for _ in range(4):
            Kr = self._Kr if bump == 1.0 else self.K + sp.diags(self.reg_diag * bump)
            for thresh in (0.01, 1.0):
                try:
                    return spla.splu(Kr.tocsc(), permc_spec="MMD_AT_PLUS_A",
                                     diag_pivot_thresh=thresh, options=dict(SymmetricMode=True))
                except RuntimeError as exc:
                    log.debug("KKT factor failed (thresh %.2g, reg x%.0e): %s", thresh, bump, exc)
            bump *= 1e3
        raise np.linalg.LinAlgError("KKT matrix singular after regularisation")

    def solve(self, rhs, refine: int = 3):
        x, rel = self._refined(rhs, refine)
        if not self.dense and not self._pivoted and not rel <= REFINE_FALLBACK:
            log.debug("KKT refinement stalled (%.1e); refactoring with pivoting", rel)
            self.lu = self._pivoting_factor()
            self._solve = self.lu.solve
            self._pivoted = True
            x, _ = self._refined(rhs, refine)
        n, p = self.n, self.p
        return x[:n], x[n:n + p], x[n + p:]


# ------------------------------------------------------------ solver

def _inf(v):
    return float(np.max(np.abs(v), initial=0.0))


def solve(p: ConicProblem, tol: float = 1e-8, max_iter: int = 200, scale: bool = True) -> ConicSolution:
    """Solve a ConicProblem.  Never raises on a well-formed problem."""
    if scale:
        ps, sc = presolve_scale(p)
    else:
        ps, sc = p, Scaling(np.ones(p.n), np.ones(p.A_eq.shape[0]), np.ones(p.A_in.shape[0]))
    std = _to_standard(ps, sc)
    try:
        xs, y, status, info = _hsde(std, tol, max_iter)
    except (np.linalg.LinAlgError, FloatingPointError, RuntimeError, ValueError) as exc:
        log.debug("conic solver numerical failure: %s", exc)
        xs, y, status, info = np.zeros(p.n), None, Status.NUMERICAL, dict(pres=np.inf, dres=np.inf,
                                                                          gap=np.inf, it=0)
    x = sc.unscale_x(xs)
    return ConicSolution(x=x, objective=float(p.c @ x), status=status, primal_residual=info["pres"],
                         dual_residual=info["dres"], gap=info["gap"], iterations=info["it"], y=y)


def _hsde(std: _Std, tol: float, max_iter: int):
    c, A, b, G, h, K = std.c, std.A, std.b, std.G, std.h, std.cones
    n, p, m = len(c), A.shape[0], G.shape[0]
    AT, GT = A.T.tocsr(), G.T.tocsr()
    kkt = _KKT(std)
    nrm_b = max(_inf(b), _inf(h))
    nrm_c = _inf(c)

    # initial point
    kkt.factor(np.ones(K.l), [np.tile(np.eye(q), (len(idx), 1, 1)) for q, idx in K.groups])
    x, _, zz = kkt.solve(np.concatenate([np.zeros(n), b, h]))
    s = K.interior_shift(-zz)
    x0, y, z = kkt.solve(np.concatenate([-c, np.zeros(p), np.zeros(m)]))
    z = K.interior_shift(z)
    tau, kap = 1.0, 1.0

    best = None
    status = Status.MAX_ITER
    info = dict(pres=np.inf, dres=np.inf, gap=np.inf, it=0)
    for it in range(max_iter + 1):
        rx = AT @ y + GT @ z + c * tau
        ry = A @ x - b * tau
        rz = s + G @ x - h * tau
        rt = kap + c @ x + b @ y + h @ z
        mu = (s @ z + tau * kap) / (K.degree + 1)

        # convergence tests in original units
        xh, yh, zh, sh = x / tau, y / tau, z / tau, s / tau
        pres = max(_inf((A @ xh - b) * std.wy), _inf((G @ xh + sh - h) * std.wz))
        dres = _inf((AT @ yh + GT @ zh + c) * std.wx)
        pcost = float(c @ xh)
        dcost = float(-b @ yh - h @ zh)
        gap = float(sh @ zh)
        info = dict(pres=pres, dres=dres, gap=gap, it=it)
        if not np.isfinite(pres + dres + gap):
            status = Status.NUMERICAL
            break
        score = max(pres, dres / (1 + nrm_c), gap / (1 + abs(pcost)))
        if best is None or score < best[0]:
            best = (score, xh.copy(), yh.copy(), dict(info))
        if (pres <= tol and dres <= tol * (1.0 + nrm_c)
                and (gap <= tol * (1.0 + abs(pcost)) or abs(pcost - dcost) <= tol * (1.0 + abs(pcost)))):
            return xh, yh, Status.OPTIMAL, info
        byhz = float(b @ y + h @ z)
        if byhz < 0 and _inf(AT @ y + GT @ z) <= tol * -byhz:
            return x, y, Status.INFEASIBLE, info
        cx = float(c @ x)
        if cx < 0 and max(_inf(A @ x), _inf(G @ x + s)) <= tol * -cx:
            return x, y, Status.UNBOUNDED, info
        if it == max_iter:
            break

        W, lam = K.nt_scaling(s, z)
        d2, blocks = K.W2_blocks(W)
        kkt.factor(d2, blocks)
        x1, y1, z1 = kkt.solve(np.concatenate([-c, b, h]))
        den_base = float(c @ x1 + b @ y1 + h @ z1)

        def direction(ds, dk, sig):
            k = 1.0 - sig
            rhs_z = -k * rz - K.W_apply(W, K.jordan_div(lam, ds))
            x2, y2, z2 = kkt.solve(np.concatenate([-k * rx, -k * ry, rhs_z]))
            dtau = (-k * rt - dk / tau - (c @ x2 + b @ y2 + h @ z2)) / (den_base - kap / tau)
            dx = x2 + dtau * x1
            dy = y2 + dtau * y1
            dz = z2 + dtau * z1
            dsv = K.W_apply(W, K.jordan_div(lam, ds) - K.W_apply(W, dz))
            dkap = (dk - kap * dtau) / tau
            return dx, dy, dz, dsv, dtau, dkap

        def steplen(dz, dsv, dtau, dkap):
            a = min(K.max_step(s, dsv), K.max_step(z, dz))
            if dtau < 0:
                a = min(a, -tau / dtau)
            if dkap < 0:
                a = min(a, -kap / dkap)
            return a

        # predictor
        ds_a = -K.jordan(lam, lam)
        dk_a = -tau * kap
        dxa, dya, dza, dsa, dta, dka = direction(ds_a, dk_a, 0.0)
        a_aff = min(1.0, steplen(dza, dsa, dta, dka))
        sig = float(np.clip((1.0 - a_aff) ** 3, 0.0, 1.0))
        # corrector
        ds_c = (-K.jordan(lam, lam) - K.jordan(K.W_apply(W, dsa, inverse=True), K.W_apply(W, dza))
                + sig * mu * K.e)
        dk_c = -tau * kap - dta * dka + sig * mu
        dx, dy, dz, dsv, dtau, dkap = direction(ds_c, dk_c, sig)
        alpha = min(1.0, STEP_FACTOR * steplen(dz, dsv, dtau, dkap))
        if not alpha > 1e-12:
            status = Status.NUMERICAL
            break
        x = x + alpha * dx
        y = y + alpha * dy
        z = z + alpha * dz
        s = s + alpha * dsv
        tau = tau + alpha * dtau
        kap = kap + alpha * dkap
    if best is not None:
        return best[1], best[2], status, best[3]
    return x / tau, y / tau, status, info


# ------------------------------------------------------------ debug dump

def dump_problem(p: ConicProblem, path) -> None:
    """Write a problem as plain text.

    Layout: a header line ``n p_eq p_in n_cones``, then sections ``c``,
    ``A_eq`` (p_eq rows, row-major, n numbers each), ``b_eq``, ``A_in``,
    ``b_in``, ``lb``, ``ub`` and ``cones`` (one line of indices per cone,
    head first).  Infinite bounds are written as inf / -inf.
    """
    def row(v):
        return " ".join(repr(float(a)) for a in v)
    with open(path, "w") as f:
        f.write(f"{p.n} {p.A_eq.shape[0]} {p.A_in.shape[0]} {len(p.cones)}\n")
        f.write("c\n" + row(p.c) + "\n")
        f.write("A_eq\n")
        for r in p.A_eq.toarray():
            f.write(row(r) + "\n")
        f.write("b_eq\n" + row(p.b_eq) + "\n")
        f.write("A_in\n")
        for r in p.A_in.toarray():
            f.write(row(r) + "\n")
        f.write("b_in\n" + row(p.b_in) + "\n")
        f.write("lb\n" + row(p.lb) + "\n")
        f.write("ub\n" + row(p.ub) + "\n")
        f.write("cones\n")
        for k in p.cones:
            f.write(" ".join(str(int(i)) for i in k) + "\n")


def load_problem(path) -> ConicProblem:
    with open(path) as f:
        lines = [ln.rstrip("\n") for ln in f]
    n, pe, pi, nc = (int(t) for t in lines[0].split())
    it = iter(lines[1:])

    def vec(k):
        assert next(it) == k
        ln = next(it)
        return np.array([float(t) for t in ln.split()]) if ln else np.zeros(0)

    def mat(k, rows):
        assert next(it) == k
        return np.array([[float(t) for t in next(it).split()] for _ in range(rows)]).reshape(rows, n)
    c = vec("c")
    Aeq = mat("A_eq", pe)
    beq = vec("b_eq")
    Ain = mat("A_in", pi)
    bin_ = vec("b_in")
    lb = vec("lb")
    ub = vec("ub")
    assert next(it) == "cones"
    cones = [np.array([int(t) for t in next(it).split()]) for _ in range(nc)]
    return ConicProblem(n, c, Aeq, beq, Ain, bin_, lb, ub, cones)
