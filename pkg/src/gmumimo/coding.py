"""Binary LDPC codes: PEG construction, GF(2) encoding and sum-product decoding.

Codes are stored as an edge list sorted by check node.  The decoder pads
every check to the largest check degree so the check update is a dense
(batch, checks, degree) array operation; variable-node sums go through a
sparse incidence matrix.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .constellation import Constellation, symbol_moments_from_llrs

__all__ = [
    "ConstructionError",
    "DecodeResult",
    "FourCycleWarning",
    "LdpcCode",
    "TransferMeasurement",
    "bp_decode",
    "build_irregular",
    "build_regular",
    "girth",
    "has_four_cycles",
    "measure_code_transfer",
    "passthrough_code",
]

LLR_CLIP = 50.0


class FourCycleWarning(UserWarning):
    pass


class ConstructionError(ValueError):
    pass


# --------------------------------------------------------------------------
# code container


@dataclass(frozen=True, eq=False)
class LdpcCode:
    """Parity-check structure given by edges (check[e], var[e]).

    ``m`` may be zero, which gives the rate-1 code (no constraint).
    """

    n: int
    m: int
    edge_check: np.ndarray
    edge_var: np.ndarray
    name: str = ""

    def __post_init__(self):
        ec = np.asarray(self.edge_check, dtype=np.int64)
        ev = np.asarray(self.edge_var, dtype=np.int64)
        order = np.lexsort((ev, ec))
        ec, ev = ec[order], ev[order]
        if ec.size and (ec.min() < 0 or ec.max() >= self.m or ev.min() < 0 or ev.max() >= self.n):
            raise ValueError("edge index out of range")
        if ec.size > 1 and np.any((np.diff(ec) == 0) & (np.diff(ev) == 0)):
            raise ConstructionError("repeated edge")
        object.__setattr__(self, "edge_check", ec)
        object.__setattr__(self, "edge_var", ev)

    @property
    def n_edges(self) -> int:
        return self.edge_check.size

    @cached_property
    def H(self) -> sp.csr_matrix:
        data = np.ones(self.n_edges, dtype=np.uint8)
        return sp.csr_matrix((data, (self.edge_check, self.edge_var)), shape=(self.m, self.n))

    @property
    def var_degrees(self) -> np.ndarray:
        return np.bincount(self.edge_var, minlength=self.n)

    @property
    def check_degrees(self) -> np.ndarray:
        return np.bincount(self.edge_check, minlength=self.m)

    @property
    def design_rate(self) -> float:
        return 1.0 - self.m / self.n

    @cached_property
    def _encoder(self):
        return _systematic_form(self)

    @property
    def k(self) -> int:
        return self.n - self._encoder[0].size

    @property
    def rank(self) -> int:
        return self._encoder[0].size

    @property
    def rate(self) -> float:
        return self.k / self.n

    def encode(self, info) -> np.ndarray:
        """Codewords for ``info`` bits of shape (..., k)."""
        pivots, free, p = self._encoder
        info = np.asarray(info, dtype=np.uint8)
        if info.shape[-1] != self.k:
            raise ValueError(f"expected {self.k} info bits, got {info.shape[-1]}")
        out = np.zeros(info.shape[:-1] + (self.n,), dtype=np.uint8)
        out[..., free] = info
        if pivots.size:
            # float matmul is exact here: sums are integers below 2^53
            out[..., pivots] = (info.astype(np.float64) @ p.T).astype(np.int64) & 1
        return out

    def syndrome(self, bits) -> np.ndarray:
        bits = np.asarray(bits, dtype=np.int64)
        if self.m == 0:
            return np.zeros(bits.shape[:-1] + (0,), dtype=np.uint8)
        return ((self.H @ bits.T).T & 1).astype(np.uint8)

    def is_codeword(self, bits) -> np.ndarray:
        return ~np.any(self.syndrome(bits), axis=-1)

    @cached_property
    def _layout(self):
        """Padded check-major edge layout used by the decoder."""
        deg = self.check_degrees
        dmax = int(deg.max()) if self.m else 0
        start = np.concatenate(([0], np.cumsum(deg)[:-1]))
        slot = np.arange(self.n_edges) - start[self.edge_check]
        flat = self.edge_check * dmax + slot
        inc = sp.csr_matrix(
            (np.ones(self.n_edges), (self.edge_var, np.arange(self.n_edges))),
            shape=(self.n, self.n_edges),
        )
        return dmax, flat, inc

    def to_alist(self) -> str:
        """alist text (MacKay's format) of H."""
        vdeg, cdeg = self.var_degrees, self.check_degrees
        lines = [f"{self.n} {self.m}", f"{vdeg.max(initial=0)} {cdeg.max(initial=0)}",
                 " ".join(map(str, vdeg)), " ".join(map(str, cdeg))]
        csc = self.H.tocsc()
        for j in range(self.n):
            rows = np.sort(csc.indices[csc.indptr[j]:csc.indptr[j + 1]]) + 1
            lines.append(" ".join(map(str, rows)))
        for i in range(self.m):
            cols = np.sort(self.H.indices[self.H.indptr[i]:self.H.indptr[i + 1]]) + 1
            lines.append(" ".join(map(str, cols)))
        return "\n".join(lines) + "\n"


def passthrough_code(n: int) -> LdpcCode:
    """Rate-1 code with no parity checks."""
    return LdpcCode(n, 0, np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64), "uncoded")


def _systematic_form(code: LdpcCode):
    """Gaussian elimination of H over GF(2).

    Returns ``(pivots, free, P)`` with pivot bits = P @ free bits (mod 2).
    Rows are packed into uint64 words so each elimination step is one
    vectorised XOR over the rows that contain the pivot.
    """
    n, m = code.n, code.m
    if m == 0:
        return np.zeros(0, dtype=np.int64), np.arange(n), np.zeros((0, n))
    words = (n + 63) // 64
    dense = np.zeros((m, words * 64), dtype=np.uint8)
    dense[code.edge_check, code.edge_var] = 1
    rows = np.packbits(dense, axis=1, bitorder="little").view(np.uint64).copy()

    def bit(col):
        return ((rows[:, col >> 6] >> np.uint64(col & 63)) & np.uint64(1)).astype(bool)

    pivots = []
    r = 0
    for col in range(n):
        if r == m:
            break
        hits = np.nonzero(bit(col)[r:])[0]
        if hits.size == 0:
            continue
        p = r + hits[0]
        if p != r:
            rows[[r, p]] = rows[[p, r]]
        mask = bit(col)
        mask[r] = False
        rows[mask] ^= rows[r]
        pivots.append(col)
        r += 1
    pivots = np.array(pivots, dtype=np.int64)
    free = np.setdiff1d(np.arange(n), pivots)
    red = np.unpackbits(rows[: pivots.size].view(np.uint8), axis=1, bitorder="little")[:, :n]
    return pivots, free, red[:, free].astype(np.float64)


def has_four_cycles(code: LdpcCode) -> bool:
    if code.m == 0:
        return False
    h = code.H.astype(np.int32)
    overlap = (h.T @ h).tocoo()
    off = overlap.row != overlap.col
    return bool(np.any(overlap.data[off] > 1))


def girth(code: LdpcCode, max_len: int = 20) -> float:
    """Length of the shortest cycle in the Tanner graph (inf if none below max_len)."""
    if code.m == 0:
        return np.inf
    h = code.H
    hc = h.tocsc()
    best = np.inf
    # BFS from each variable node over the bipartite graph
    for root in range(code.n):
        dist = {("v", root): 0}
        parent = {("v", root): None}
        frontier = [("v", root)]
        d = 0
        while frontier and 2 * d < min(best, max_len):
            nxt = []
            for node in frontier:
                kind, idx = node
                if kind == "v":
                    nbrs = [("c", int(c)) for c in hc.indices[hc.indptr[idx]:hc.indptr[idx + 1]]]
                else:
                    nbrs = [("v", int(v)) for v in h.indices[h.indptr[idx]:h.indptr[idx + 1]]]
                for nb in nbrs:
                    if nb == parent[node]:
                        continue
                    if nb in dist:
                        best = min(best, dist[node] + dist[nb] + 1)
                    else:
                        dist[nb] = dist[node] + 1
                        parent[nb] = node
                        nxt.append(nb)
            frontier = nxt
            d += 1
    return best


# --------------------------------------------------------------------------
# progressive edge growth


def _peg(n: int, var_deg: np.ndarray, check_deg: np.ndarray, rng, depth: int, name: str) -> LdpcCode:
    """PEG with a depth-limited tree expansion.

    Each new edge of variable v goes to a check outside the depth-limited
    neighbourhood of v (or, if every check is inside it, to one in the last
    layer reached), choosing the check with the fewest edges so far and
    breaking ties at random.  Checks never exceed their target degree.
    """
    m = check_deg.size
    if var_deg.sum() != check_deg.sum():
        raise ConstructionError(f"edge counts differ: {var_deg.sum()} variable vs {check_deg.sum()} check")
    # padded adjacency (-1 = empty slot) so neighbourhood expansion is vectorised
    var_nb = np.full((n + 1, int(var_deg.max())), -1, dtype=np.int64)
    chk_nb = np.full((m + 1, int(check_deg.max())), -1, dtype=np.int64)
    var_fill = np.zeros(n, dtype=np.int64)
    chk_fill = np.zeros(m, dtype=np.int64)
    room = check_deg.copy()
    order = np.argsort(var_deg, kind="stable")
    for v in order:
        for _ in range(int(var_deg[v])):
            mine = var_nb[v, : var_fill[v]]
            open_ = room > 0
            open_[mine] = False
            if not np.any(open_):
                raise ConstructionError(f"no check left for variable {v}; (dv, dc, n) infeasible")
            cands = open_
            if mine.size:
                reached = np.zeros(m + 1, dtype=bool)
                reached[mine] = True
                seen = np.zeros(n + 1, dtype=bool)
                seen[v] = True
                layer = mine
                prev = open_ & ~reached[:m]
                for _ in range(depth):
                    us = chk_nb[layer].ravel()
                    us = us[us >= 0]
                    us = us[~seen[us]]
                    seen[us] = True
                    cs = var_nb[us].ravel()
                    cs = cs[cs >= 0]
                    cs = cs[~reached[cs]]
                    if cs.size == 0:
                        break
                    reached[cs] = True
                    here = open_ & ~reached[:m]
                    if not np.any(here):
                        break
                    prev = here
                    fresh = np.zeros(m, dtype=bool)
                    fresh[cs] = True
                    layer = np.flatnonzero(fresh)
                cands = prev if np.any(prev) else open_
            idx = np.nonzero(cands)[0]
            load = chk_fill[idx]
            low = idx[load == load.min()]
            c = int(rng.choice(low))
            var_nb[v, var_fill[v]] = c
            var_fill[v] += 1
            chk_nb[c, chk_fill[c]] = v
            chk_fill[c] += 1
            room[c] -= 1
    var_adj = [list(var_nb[v, : var_fill[v]]) for v in range(n)]
    chk_adj = [list(chk_nb[c, : chk_fill[c]]) for c in range(m)]
    # a 4-cycle-free graph uses each variable pair in at most one check
    pairs = int(np.sum(check_deg * (check_deg - 1) // 2))
    if pairs <= n * (n - 1) // 2:
        _remove_four_cycles(var_adj, chk_adj, rng)
    else:
        warnings.warn(f"{name}: too short to avoid 4-cycles; keeping the PEG graph", FourCycleWarning)
    ec = np.concatenate([np.full(len(a), i) for i, a in enumerate(chk_adj)]) if m else np.zeros(0)
    ev = np.concatenate([np.array(a, dtype=np.int64) for a in chk_adj]) if m else np.zeros(0)
    return LdpcCode(n, m, ec, ev, name)


def _in_four_cycle(var_adj, chk_adj, v, c, skip=None) -> bool:
    """Would edge (v, c) close a 4-cycle?  ``skip`` is an edge to ignore."""
    mine = set(var_adj[v]) - {c}
    if skip is not None and skip[0] == v:
        mine.discard(skip[1])
    for u in chk_adj[c]:
        if u == v:
            continue
        theirs = set(var_adj[u])
        if skip is not None and skip[0] == u:
            theirs.discard(skip[1])
        if mine & theirs:
            return True
    return False


def _remove_four_cycles(var_adj, chk_adj, rng, max_tries: int = 200000):
    """Break 4-cycles left by PEG with degree-preserving edge swaps.

    An edge (v, c) on a 4-cycle is exchanged with a random edge (w, d) to
    give (v, d) and (w, c) whenever neither new edge closes a 4-cycle.
    """
    n = len(var_adj)
    bad = [(v, c) for v in range(n) for c in var_adj[v] if _in_four_cycle(var_adj, chk_adj, v, c)]
    tries = 0
    while bad and tries < max_tries:
        v, c = bad.pop()
        if c not in var_adj[v] or not _in_four_cycle(var_adj, chk_adj, v, c):
            continue
        while tries < max_tries:
            tries += 1
            w = int(rng.integers(n))
            d = var_adj[w][int(rng.integers(len(var_adj[w])))]
            if w == v or d == c or d in var_adj[v] or c in var_adj[w]:
                continue
            # apply tentatively, then test both new edges
            var_adj[v][var_adj[v].index(c)] = d
            var_adj[w][var_adj[w].index(d)] = c
            chk_adj[c][chk_adj[c].index(v)] = w
            chk_adj[d][chk_adj[d].index(w)] = v
            if not (_in_four_cycle(var_adj, chk_adj, v, d) or _in_four_cycle(var_adj, chk_adj, w, c)):
                break
            var_adj[v][var_adj[v].index(d)] = c
            var_adj[w][var_adj[w].index(c)] = d
            chk_adj[c][chk_adj[c].index(w)] = v
            chk_adj[d][chk_adj[d].index(v)] = w
    if bad and tries >= max_tries:
        raise ConstructionError("could not remove all 4-cycles; code too dense for its length")


def build_regular(n_bits: int, dv: int, dc: int, seed=0, depth: int = 3) -> LdpcCode:
    """Regular (dv, dc) code by PEG; deterministic for a fixed seed."""
    if dv < 2 or dc < 2:
        raise ConstructionError("degrees must be at least 2")
    if (n_bits * dv) % dc:
        raise ConstructionError(f"n*dv = {n_bits * dv} not divisible by dc = {dc}")
    m = n_bits * dv // dc
    if dv > m:
        raise ConstructionError(f"dv={dv} exceeds the number of checks {m}")
    rng = np.random.default_rng(seed)
    return _peg(n_bits, np.full(n_bits, dv), np.full(m, dc), rng, depth, f"reg({dv},{dc})n{n_bits}")


def _node_counts(profile: dict, n_edges_per_node_norm: float, total: int) -> dict:
    """Integer node counts per degree from an edge-perspective profile."""
    degs = np.array(sorted(profile), dtype=int)
    frac = np.array([profile[d] for d in degs]) / degs / n_edges_per_node_norm
    raw = frac * total
    counts = np.floor(raw).astype(int)
    # hand out the rounding remainder to the largest fractional parts
    short = total - counts.sum()
    counts[np.argsort(-(raw - counts))[:short]] += 1
    return dict(zip(degs.tolist(), counts.tolist()))


def _check_profile(profile: dict, what: str):
    if not profile:
        raise ValueError(f"empty {what} profile")
    s = sum(profile.values())
    if abs(s - 1.0) > 1e-9:
        raise ValueError(f"{what} profile sums to {s}, not 1")
    for d, w in profile.items():
        if int(d) != d or d < 1 or w < 0:
            raise ValueError(f"bad {what} profile entry {d}: {w}")


def build_irregular(n_bits: int, lambda_profile: dict, rho_profile: dict, seed=0,
                    depth: int = 3) -> LdpcCode:
    """PEG code for edge-perspective degree profiles ``{degree: fraction}``."""
    _check_profile(lambda_profile, "variable")
    _check_profile(rho_profile, "check")
    if min(lambda_profile) < 2:
        raise ConstructionError("variable degree class 1 not allowed (every variable needs degree >= 2)")
    int_lam = sum(w / d for d, w in lambda_profile.items())
    int_rho = sum(w / d for d, w in rho_profile.items())
    vcount = _node_counts(lambda_profile, int_lam, n_bits)
    var_deg = np.repeat(list(vcount), list(vcount.values()))
    e = int(var_deg.sum())
    m = int(round(n_bits * int_rho / int_lam))
    ccount = _node_counts(rho_profile, int_rho, m)
    check_deg = np.repeat(list(ccount), list(ccount.values()))
    # fix the edge total by nudging check degrees by one
    diff = e - int(check_deg.sum())
    i = 0
    while diff:
        step = 1 if diff > 0 else -1
        j = i % m
        if check_deg[j] + step >= 2:
            check_deg[j] += step
            diff -= step
        i += 1
        if i > 10 * m + abs(diff):
            raise ConstructionError("cannot match edge counts for the check profile")
    for d, cnt in vcount.items():
        if cnt == 0 and lambda_profile[d] > 0:
            raise ConstructionError(f"variable degree class {d} gets no nodes at n={n_bits}")
    rng = np.random.default_rng(seed)
    return _peg(n_bits, var_deg, check_deg, rng, depth, f"irr n{n_bits}")


# --------------------------------------------------------------------------
# sum-product decoding


@dataclass
class DecodeResult:
    llr: np.ndarray
    bits: np.ndarray
    converged: np.ndarray
    iterations: int


def bp_decode(code: LdpcCode, channel_llrs, max_iters: int = 50, clip: float = LLR_CLIP,
              early_stop: bool = True) -> DecodeResult:
    """Sum-product decoding with the exact tanh check rule.

    Parameters
    ----------
    code : LdpcCode
    channel_llrs : array, shape (n,) or (B, n)
        ``log P(b=0) / P(b=1)`` per bit.
    max_iters : int
    early_stop : bool
        Stop once every word in the batch satisfies all checks.

    Returns
    -------
    DecodeResult
        Posterior (channel + extrinsic) LLRs, hard decisions, a per-word
        converged flag (syndrome zero and no zero LLR) and the iterations run.
    """
    llr_in = np.asarray(channel_llrs, dtype=float)
    single = llr_in.ndim == 1
    L = np.clip(np.atleast_2d(llr_in), -clip, clip)
    if L.shape[1] != code.n:
        raise ValueError(f"expected {code.n} LLRs per word, got {L.shape[1]}")
    b = L.shape[0]

    def finish(post, iters):
        bits = (post < 0).astype(np.uint8)
        ok = code.is_codeword(bits) & np.all(post != 0, axis=1)
        if single:
            return DecodeResult(post[0], bits[0], bool(ok[0]), iters)
        return DecodeResult(post, bits, ok, iters)

    if code.m == 0:
        return finish(L.copy(), 0)

    dmax, flat, inc = code._layout
    ev = code.edge_var
    c2v = np.zeros((b, code.n_edges))
    post = L.copy()
    iters = 0
    for it in range(max_iters):
        iters = it + 1
        v2c = np.clip(post[:, ev] - c2v, -clip, clip)
        t = np.ones((b, code.m * dmax))
        t[:, flat] = np.tanh(0.5 * v2c)
        t = t.reshape(b, code.m, dmax)
        # leave-one-out products from prefix and suffix products
        pre = np.ones_like(t)
        suf = np.ones_like(t)
        pre[:, :, 1:] = np.cumprod(t[:, :, :-1], axis=2)
        suf[:, :, :-1] = np.cumprod(t[:, :, :0:-1], axis=2)[:, :, ::-1]
        ext = (pre * suf).reshape(b, -1)[:, flat]
        c2v = np.clip(2.0 * np.arctanh(np.clip(ext, -1 + 1e-15, 1 - 1e-15)), -clip, clip)
        post = L + (inc @ c2v.T).T
        if early_stop and np.all(code.is_codeword((post < 0).astype(np.uint8))):
            break
    return finish(np.clip(post, -clip, clip), iters)


# --------------------------------------------------------------------------
# transfer measurement


@dataclass
class TransferMeasurement:
    rho: np.ndarray
    mse: np.ndarray
    stderr: np.ndarray
    post_var: np.ndarray = field(default=None)

    def curve(self):
        """Callable rho -> MSE interpolated in log rho, clamped at the ends."""
        from .state_evolution import interpolated_curve

        return interpolated_curve(self.rho, np.maximum.accumulate(self.mse[::-1])[::-1])


def measure_code_transfer(code: LdpcCode, c: Constellation, rho_grid, trials: int = 20,
                          seed=0, max_iters: int = 50) -> TransferMeasurement:
    """Monte-Carlo MSE of the APP decoder on ``r = x + rho^{-1/2} z``.

    Each trial draws a random codeword, maps it to symbols, adds CN(0, 1/rho)
    noise, decodes and records the mean squared error of the posterior
    symbol mean.  Returns per-rho mean and standard error across trials.
    """
    rho_grid = np.asarray(rho_grid, dtype=float)
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if code.n % c.bits_per_symbol:
        raise ValueError("code length must be a multiple of bits per symbol")
    rng = np.random.default_rng(seed)
    n_sym = code.n // c.bits_per_symbol
    mse = np.empty((rho_grid.size, trials))
    pv = np.empty_like(mse)
    info = rng.integers(0, 2, size=(trials, code.k), dtype=np.uint8)
    x = c.modulate(code.encode(info)).reshape(trials, n_sym)
    for i, rho in enumerate(rho_grid):
        z = (rng.standard_normal(x.shape) + 1j * rng.standard_normal(x.shape)) / np.sqrt(2)
        r = x + z / np.sqrt(rho) if rho > 0 else np.zeros_like(x)
        llr = c.demodulate_llr(r, rho) if rho > 0 else np.zeros((trials, code.n))
        res = bp_decode(code, llr, max_iters)
        mean, var = symbol_moments_from_llrs(c, res.llr)
        mse[i] = np.mean(np.abs(x - mean) ** 2, axis=1)
        pv[i] = np.mean(var, axis=1)
    se = mse.std(axis=1, ddof=1) / np.sqrt(trials) if trials > 1 else np.zeros(rho_grid.size)
    return TransferMeasurement(rho_grid, mse.mean(axis=1), se, pv.mean(axis=1))
