"""Parabolic maximal operators on boundary and half-space fields.

Five operators: the parabolic Hardy-Littlewood maximal function M (averages
over parabolic boxes), the iterated one-dimensional maximal MxMt, the
pointwise and integrated non-tangential maximal functions over Whitney
boxes, and the maximal differential operator D (windowed averages of
difference quotients against the parabolic distance).

Radii are dyadic multiples of the grid steps throughout; the sup over
continuous radii is sandwiched between the dyadic value and 2^(n+2) times
it by window nesting.  Edge windows are clipped to the domain and averages
normalized by the clipped cell count.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba as nb
import numpy as np
from scipy.ndimage import maximum_filter1d

__all__ = [
    "maximal_parabolic",
    "maximal_iterated",
    "ntmax_pointwise",
    "ntmax_integrated",
    "StackMaxAccumulator",
    "max_diff",
]


def _padded_cumsum2(a):
    s = np.zeros((a.shape[0] + 1, a.shape[1] + 1), dtype=np.float64)
    np.cumsum(np.cumsum(a, axis=0), axis=1, out=s[1:, 1:])
    return s


def _box_sums(prefix, wx, wt):
    """Clipped box sums of halfwidths (wx, wt) nodes around every node."""
    nx, nt = prefix.shape[0] - 1, prefix.shape[1] - 1
    i = np.arange(nx)
    j = np.arange(nt)
    ilo = np.clip(i - wx, 0, nx)
    ihi = np.clip(i + wx + 1, 0, nx)
    jlo = np.clip(j - wt, 0, nt)
    jhi = np.clip(j + wt + 1, 0, nt)
    s = (prefix[np.ix_(ihi, jhi)] - prefix[np.ix_(ilo, jhi)]
         - prefix[np.ix_(ihi, jlo)] + prefix[np.ix_(ilo, jlo)])
    cnt = np.outer(ihi - ilo, jhi - jlo)
    return s, cnt


def _dyadic_windows(nx, nt):
    """(wx, wt) node halfwidths for rho = h 2^j until the domain is covered.

    The sub-cell radius rho = h/2 (the single-cell average) leads, so
    maximal functions dominate |g| pointwise.
    """
    out = [(0, 0)]
    j = 0
    while True:
        wx, wt = 2**j, 4**j
        out.append((wx, wt))
        if wx >= nx and wt >= nt:
            break
        j += 1
    return out


def maximal_parabolic(g, rho_max_nodes=None):
    """Parabolic Hardy-Littlewood maximal function of a boundary field.

    Sup over dyadic radii rho = h 2^j of the |g|-average over the parabolic
    box [x - rho, x + rho] x [t - rho^2, t + rho^2], clipped to the domain.

    Parameters
    ----------
    g : ndarray, shape (nx, nt)
    rho_max_nodes : int, optional
        Cap on the x-halfwidth in nodes.
    """
    g = np.abs(np.asarray(g, dtype=float))
    prefix = _padded_cumsum2(g)
    out = np.zeros_like(g)
    for wx, wt in _dyadic_windows(*g.shape):
        if rho_max_nodes is not None and wx > rho_max_nodes:
            break
        s, cnt = _box_sums(prefix, wx, wt)
        np.maximum(out, s / cnt, out=out)
    return out


def _left_window_max(a, L):
    """out[..., t] = max(a[..., max(0, t - L + 1) : t + 1]) via block cummax."""
    n = a.shape[-1]
    if L <= 1:
        return a.copy()
    nblk = -(-n // L)
    pad = nblk * L - n
    ap = np.pad(a, [(0, 0)] * (a.ndim - 1) + [(0, pad)], constant_values=-np.inf)
    blocks = ap.reshape(a.shape[:-1] + (nblk, L))
    fwd = np.maximum.accumulate(blocks, axis=-1).reshape(a.shape[:-1] + (nblk * L,))[..., :n]
    bwd = np.maximum.accumulate(blocks[..., ::-1], axis=-1)[..., ::-1]
    bwd = bwd.reshape(a.shape[:-1] + (nblk * L,))[..., :n]
    out = fwd.copy()
    t = np.arange(L - 1, n)
    out[..., t] = np.maximum(fwd[..., t], bwd[..., t - L + 1])
    return out


def _max1d_uncentered(a, axis):
    """Sup of interval averages over dyadic-length windows containing the node.

    Windows slide inside the domain (no clipping), so the average over any
    dyadic-length interval through the point is attained exactly.
    """
    a = np.moveaxis(a, axis, -1)
    n = a.shape[-1]
    prefix = np.zeros(a.shape[:-1] + (n + 1,))
    np.cumsum(a, axis=-1, out=prefix[..., 1:])
    out = np.full_like(a, -np.inf)
    L = 1
    while L <= n:
        means = (prefix[..., L:] - prefix[..., :-L]) / L  # window start positions
        padded = np.pad(means, [(0, 0)] * (a.ndim - 1) + [(0, L - 1)], constant_values=-np.inf)
        np.maximum(out, _left_window_max(padded, L), out=out)
        L *= 2
    np.maximum(out, prefix[..., -1:] / n, out=out)  # whole-domain window
    return np.moveaxis(out, -1, axis)


def maximal_iterated(g):
    """Iterated euclidean maximal function: 1-d in t per row, then 1-d in x.

    Uses uncentered windows of dyadic length, so the iterated value
    dominates the average of |g| over any dyadic-sided rectangle through
    the point.
    """
    g = np.abs(np.asarray(g, dtype=float))
    return _max1d_uncentered(_max1d_uncentered(g, axis=1), axis=0)


@dataclass
class _Target:
    index: int
    wx: int  # x halfwidth in nodes
    wtg: int  # t halfwidth in pooled groups
    band: tuple  # row indices with lam/2 < mu <= lam


class StackMaxAccumulator:
    """Streaming non-tangential maximal function over a lambda stack.

    Rows (fields at fixed lambda) are ingested in ascending lambda order;
    for each stack lambda the Whitney box gathers the rows in (lam/2, lam]
    and the (x, t)-window of halfwidths (lam, lam^2).  ``kind`` selects the
    sup ("sup") or the root mean square ("rms") over the box.

    ``t_decimate`` pools the time axis by an integer factor at ingestion
    (strided max or sum), quantizing window endpoints to whole groups; with
    the default 1 the operator is exact.
    """

    def __init__(self, lams, h, k, nx, nt, kind="sup", t_decimate=1):
        self.lams = np.asarray(lams, dtype=float)
        if np.any(np.diff(self.lams) <= 0):
            raise ValueError("stack lambdas must be strictly increasing")
        self.h, self.k = h, k
        self.kind = kind
        self.d = int(t_decimate)
        self.nx = nx
        self.ng = (nt + self.d - 1) // self.d
        # group sizes along t after pooling (tail group may be short)
        sizes = np.full(self.ng, self.d, dtype=np.int64)
        sizes[-1] = nt - self.d * (self.ng - 1)
        self._group_sizes = sizes
        self.targets = []
        for i, lam in enumerate(self.lams):
            band = tuple(int(m) for m in np.nonzero(
                (self.lams > lam / 2 + 1e-12) & (self.lams <= lam + 1e-12))[0])
            wx = max(1, int(round(lam / h)))
            wt = max(1, int(round(lam * lam / k)))
            self.targets.append(_Target(i, wx, max(1, -(-wt // self.d)), band))
        self._rows = {}
        self._out = np.zeros((nx, self.ng))
        self._done = np.zeros(len(self.lams), dtype=bool)

    def _pool(self, row):
        nt = row.shape[1]
        pad = self.ng * self.d - nt
        if pad:
            fill = -np.inf if self.kind == "sup" else 0.0
            row = np.pad(row, ((0, 0), (0, pad)), constant_values=fill)
        blocks = row.reshape(self.nx, self.ng, self.d)
        if self.kind == "sup":
            return blocks.max(axis=2)
        return blocks.sum(axis=2)

    def ingest(self, index, row):
        """Feed the field at stack row ``index`` (shape (nx, nt))."""
        row = np.abs(np.asarray(row, dtype=float))
        if self.kind == "rms":
            row = row * row
        self._rows[index] = self._pool(row)
        for tgt in self.targets:
            if self._done[tgt.index] or not tgt.band:
                continue
            if all(r in self._rows for r in tgt.band):
                self._finalize(tgt)
        # drop rows no pending target needs
        needed = set()
        for tgt in self.targets:
            if not self._done[tgt.index]:
                needed.update(tgt.band)
        for r in list(self._rows):
            if r not in needed:
                del self._rows[r]

    def _finalize(self, tgt):
        rows = [self._rows[r] for r in tgt.band]
        if self.kind == "sup":
            band = np.maximum.reduce(rows)
            f = maximum_filter1d(band, size=2 * tgt.wx + 1, axis=0, mode="nearest")
            f = maximum_filter1d(f, size=2 * tgt.wtg + 1, axis=1, mode="nearest")
        else:
            band = np.add.reduce(rows)
            prefix = _padded_cumsum2(band)
            s, _ = _box_sums(prefix, tgt.wx, tgt.wtg)
            # clipped cell count: x-nodes times original-t cells, per band row
            i = np.arange(self.nx)
            xcnt = np.clip(i + tgt.wx + 1, 0, self.nx) - np.clip(i - tgt.wx, 0, self.nx)
            cs = np.concatenate([[0], np.cumsum(self._group_sizes)])
            jg = np.arange(self.ng)
            tcnt = cs[np.clip(jg + tgt.wtg + 1, 0, self.ng)] - cs[np.clip(jg - tgt.wtg, 0, self.ng)]
            f = np.sqrt(s / (len(rows) * np.outer(xcnt, tcnt)))
        np.maximum(self._out, f, out=self._out)
        self._done[tgt.index] = True

    def result(self):
        """Field (nx, n_groups); with t_decimate=1 this is per time node."""
        if not self._done.all():
            missing = [i for i in range(len(self.lams)) if not self._done[i]]
            raise RuntimeError(f"stack rows never ingested for lambda indices {missing}")
        return self._out

    def t_group(self, t_index):
        return min(t_index // self.d, self.ng - 1)


def _stack_reduce(lams, rows, h, k, kind):
    rows = np.asarray(rows, dtype=float)
    acc = StackMaxAccumulator(lams, h, k, rows.shape[1], rows.shape[2], kind=kind)
    for i in range(rows.shape[0]):
        acc.ingest(i, rows[i])
    return acc.result()


def ntmax_pointwise(lams, rows, h, k):
    """N*: sup of |F| over Whitney boxes (lam/2, lam] x B(x,lam) x I(t,lam^2)."""
    return _stack_reduce(lams, rows, h, k, "sup")


def ntmax_integrated(lams, rows, h, k):
    """Integrated variant: root mean square of F over the same Whitney boxes."""
    return _stack_reduce(lams, rows, h, k, "rms")


@nb.njit(cache=True)
def _max_diff_kernel(v, h, k, pts_i, pts_j, wxs, wts):
    nx, nt = v.shape
    out = np.zeros(len(pts_i))
    for p in range(len(pts_i)):
        i0 = pts_i[p]
        j0 = pts_j[p]
        v0 = v[i0, j0]
        best = 0.0
        for w in range(len(wxs)):
            wx = wxs[w]
            wt = wts[w]
            ilo = max(0, i0 - wx)
            ihi = min(nx - 1, i0 + wx)
            jlo = max(0, j0 - wt)
            jhi = min(nt - 1, j0 + wt)
            acc = 0.0
            cnt = 0
            for i in range(ilo, ihi + 1):
                dx = abs(i - i0) * h
                for j in range(jlo, jhi + 1):
                    if i == i0 and j == j0:
                        continue
                    acc += abs(v[i, j] - v0) / (dx + np.sqrt(abs(j - j0) * k))
                    cnt += 1
            if cnt > 0 and acc / cnt > best:
                best = acc / cnt
        out[p] = best
    return out


def max_diff(v, h, k, points=None, rho_max=None):
    """Maximal differential operator D of a boundary field.

    Sup over dyadic radii rho of the average over the parabolic box
    Delta_rho(x,t) of |v(x,t) - v(y,s)| / ||(x-y, t-s)||; the diagonal cell
    is excluded from the average (it is the one point where the quotient is
    undefined on the lattice).

    Parameters
    ----------
    points : (idx_x, idx_t) arrays, optional
        Evaluation subset; default every node (use only on small fields).
    rho_max : float, optional
        Radius cap; default covers the domain dyadically.
    """
    v = np.asarray(v, dtype=float)
    nx, nt = v.shape
    if points is None:
        ii, jj = np.meshgrid(np.arange(nx), np.arange(nt), indexing="ij")
        pts_i, pts_j = ii.ravel(), jj.ravel()
    else:
        pts_i = np.asarray(points[0], dtype=np.int64).ravel()
        pts_j = np.asarray(points[1], dtype=np.int64).ravel()
    wins = _dyadic_windows(nx, nt)
    if rho_max is not None:
        cap = max(1, int(round(rho_max / h)))
        wins = [(wx, wt) for wx, wt in wins if wx <= cap] or wins[:1]
    wxs = np.array([w[0] for w in wins], dtype=np.int64)
    wts = np.array([w[1] for w in wins], dtype=np.int64)
    out = _max_diff_kernel(v, h, k, pts_i, pts_j, wxs, wts)
    if points is None:
        return out.reshape(nx, nt)
    return out
