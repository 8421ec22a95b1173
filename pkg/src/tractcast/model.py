"""Regression-tree ensembles built from scratch: Random Forest, Extremely
Randomized Trees, and Gradient Boosting over squared-error loss, plus
impurity-based importance and partial dependence.

Trees grow breadth-first with every node of a level processed in a handful
of vectorized passes, so fitting stays fast enough for nested
cross-validation without any compiled extension. All three learners are
deterministic functions of (X, y, params): per-tree RNG streams are derived
from (seed, tree index), so results never depend on scheduling.

Split conventions (fixed for determinism):
  * exact_split scans midpoints between consecutive distinct sorted values
    of each candidate feature; random_split draws one uniform threshold per
    candidate feature in [min, max).
  * rows with x <= threshold go left;
  * gain ties break to the lowest feature index, then lowest threshold;
  * an impure node with any valid boundary splits even at zero gain (this
    is what makes a fully grown tree interpolate distinct training points).
"""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, asdict, replace

import numpy as np

__all__ = [
    "LEARNERS",
    "MAX_FEATURES_CHOICES",
    "HyperParams",
    "DecisionTree",
    "EnsembleModel",
    "fit_tree",
    "fit_random_forest",
    "fit_extra_trees",
    "fit_gradient_boosting",
    "fit_ensemble",
    "predict",
    "impurity_importance",
    "partial_dependence",
    "model_to_json",
    "model_from_json",
]

LEARNERS = ("rf", "et", "gb")
MAX_FEATURES_CHOICES = ("third", "half", "all")


@dataclass(frozen=True)
class HyperParams:
    learner: str = "rf"
    n_trees: int = 100
    max_features: str = "all"       # per-split candidate-feature fraction
    gb_max_depth: int = 3
    gb_learning_rate: float = 0.1
    min_samples_leaf: int = 1
    seed: int = 0
    bootstrap: bool = True          # rf only; disabling is a test switch

    def validate(self):
        if self.learner not in LEARNERS:
            raise ValueError(f"unknown learner {self.learner!r}")
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        if self.max_features not in MAX_FEATURES_CHOICES:
            raise ValueError(f"max_features must be one of {MAX_FEATURES_CHOICES}")
        if not 1 <= self.gb_max_depth:
            raise ValueError("gb_max_depth must be >= 1")
        if not 0.0 <= self.gb_learning_rate <= 1.0:
            raise ValueError("gb_learning_rate must be in [0, 1]")
        if self.min_samples_leaf < 1:
            raise ValueError("min_samples_leaf must be >= 1")
        return self


def resolve_max_features(spec: str, n_features: int) -> int:
    if spec == "third":
        return max(1, n_features // 3)
    if spec == "half":
        return max(1, n_features // 2)
    if spec == "all":
        return n_features
    raise ValueError(f"unknown max_features {spec!r}")


@dataclass
class DecisionTree:
    """Flat array representation: internal nodes carry (feature, threshold,
    children, gain); leaves carry feature == -1 and their mean target."""

    feature: np.ndarray      # int32, -1 for leaves
    threshold: np.ndarray    # float64, nan for leaves
    left: np.ndarray         # int32, -1 for leaves
    right: np.ndarray
    value: np.ndarray        # float64 node mean
    n_samples: np.ndarray    # int32
    gain: np.ndarray         # float64 absolute SSE reduction, 0 for leaves
    n_features: int

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise ValueError(f"expected (n, {self.n_features}) input, got {X.shape}")
        idx = np.zeros(len(X), dtype=np.int64)
        if len(X) == 0:
            return np.empty(0, dtype=np.float64)
        while True:
            f = self.feature[idx]
            active = np.flatnonzero(f >= 0)
            if active.size == 0:
                break
            node = idx[active]
            go_left = X[active, f[active]] <= self.threshold[node]
            idx[active] = np.where(go_left, self.left[node], self.right[node])
        return self.value[idx]


def _presort(X) -> np.ndarray:
    """(p, n) int32 matrix whose row f lists row indices sorted by feature
    f. Computed once per ensemble; bootstraps re-sort gathered integer
    ranks, which is much cheaper than re-sorting floats."""
    return np.argsort(X.T, axis=1, kind="stable").astype(np.int32)


def _ranks_from_order(order_t: np.ndarray) -> np.ndarray:
    ranks = np.empty_like(order_t)
    np.put_along_axis(
        ranks, order_t,
        np.broadcast_to(np.arange(order_t.shape[1], dtype=order_t.dtype), order_t.shape),
        axis=1)
    return ranks


class _Presorted:
    """Per-ensemble fitting cache: transposed features, sort order, ranks,
    and the shared scratch workspace."""

    __slots__ = ("xt", "order_t", "ranks_t", "_ws")

    def __init__(self, X):
        self.xt = np.ascontiguousarray(X.T)
        self.order_t = _presort(X)
        self.ranks_t = None
        self._ws = None

    def workspace(self) -> "_Workspace":
        if self._ws is None:
            self._ws = _Workspace(*self.order_t.shape)
        return self._ws

    def ranks(self) -> np.ndarray:
        if self.ranks_t is None:
            self.ranks_t = _ranks_from_order(self.order_t)
        return self.ranks_t


class _Workspace:
    """Reusable (p, n)-shaped scratch buffers shared by every tree of an
    ensemble fit; per-level views avoid re-allocating ~100 KB temporaries in
    the hot loop, where allocation and page-fault cost would dominate."""

    __slots__ = ("fa", "fb", "fc", "fd", "ia", "ib", "ic", "ba")

    def __init__(self, p, n):
        self.fa = np.empty((p, n), dtype=np.float64)
        self.fb = np.empty((p, n), dtype=np.float64)
        self.fc = np.empty((p, n), dtype=np.float64)
        self.fd = np.empty((p, n), dtype=np.float64)
        self.ia = np.empty((p, n), dtype=np.int32)
        self.ib = np.empty((p, n), dtype=np.int32)
        self.ic = np.empty((p, n), dtype=np.int32)
        self.ba = np.empty((p, n), dtype=np.int8)


def _grow_forest(xt, y_st, orig, order0, ws, rngs, *, n_per, max_depth,
                 k_features, min_samples_leaf, random_split, train_pred=None):
    """Breadth-first CART growth of len(rngs) trees at once, one batch of
    matrix operations per level.

    The working state is a (p, n_active) matrix whose row f holds active
    stacked-row ids in (node, x_f) order; node segments are shared column
    ranges across all feature rows, so prefix scans, split scoring, and the
    stable partition after a split are plain axis-1 operations and no
    per-level sorting ever happens. Trees share levels but nothing else:
    every random draw comes from the owning tree's generator in the same
    order a solo fit would consume it, so chunking cannot change a model.
    Split quality is ranked by the sums-only proxy
    sum_l^2/n_l + sum_r^2/n_r of node-centered targets, whose argmax equals
    the variance-reduction argmax.

    `orig` maps stacked rows to original rows of xt (None when they are the
    same). When `train_pred` (a stacked buffer) is given, leaf means are
    scattered into it as leaves freeze, letting boosting skip a predict
    pass.
    """
    p = xt.shape[0]
    n_trees = len(rngs)
    N = n_trees * n_per
    y = y_st
    msl = int(min_samples_leaf)
    cap = n_per if max_depth is None else int(max_depth)
    int_pool = (ws.ia, ws.ib, ws.ic)
    sorted_t = order0              # read-only; partitions write into the pool
    cur = -1                       # which pool buffer backs sorted_t (-1: none)

    max_nodes = 2 * N
    nf = np.full(max_nodes, -1, dtype=np.int32)
    nt = np.full(max_nodes, np.nan, dtype=np.float64)
    nl = np.full(max_nodes, -1, dtype=np.int32)
    nr = np.full(max_nodes, -1, dtype=np.int32)
    nv = np.zeros(max_nodes, dtype=np.float64)
    nn = np.zeros(max_nodes, dtype=np.int32)
    ng = np.zeros(max_nodes, dtype=np.float64)
    tree_of = np.zeros(max_nodes, dtype=np.int32)

    ids = np.arange(n_trees, dtype=np.int64)
    tree_of[ids] = ids
    starts = np.arange(n_trees + 1, dtype=np.int64) * n_per
    n_nodes = n_trees
    depth = 0
    row_buf = np.empty(N, dtype=np.float64)
    flag_buf = np.empty(N, dtype=np.int8)

    while len(ids):
        K = len(ids)
        seg_len = np.diff(starts)
        rows0 = sorted_t[0]                    # node-major rows (any feature row)
        y0 = y[rows0]
        s0 = starts[:-1]
        mean = np.add.reduceat(y0, s0) / seg_len
        nv[ids] = mean
        nn[ids] = seg_len
        ymin = np.minimum.reduceat(y0, s0)
        ymax = np.maximum.reduceat(y0, s0)
        can = (ymax > ymin) & (seg_len >= 2 * msl) & (depth < cap)

        seg_of = np.repeat(np.arange(K), seg_len)
        if train_pred is not None and not can.all():
            dead = ~can[seg_of]
            train_pred[rows0[dead]] = mean[seg_of[dead]]
        if not can.any():
            break

        sel = np.flatnonzero(can)
        if len(sel) != K:
            # compact the matrix to splittable segments (shared position mask)
            keep = np.flatnonzero(can[seg_of])
            nxt = (cur + 1) % 3
            np.take(sorted_t, keep, axis=1, out=int_pool[nxt][:, :len(keep)])
            sorted_t = int_pool[nxt][:, :len(keep)]
            cur = nxt
            rows0 = sorted_t[0]
        Ss = len(sel)
        m_s = seg_len[sel]
        st = np.zeros(Ss + 1, dtype=np.int64)
        np.cumsum(m_s, out=st[1:])
        ns = int(st[-1])
        seg_pos = np.repeat(np.arange(Ss), m_s)
        st_seg = st[:-1][seg_pos]
        mean_s = mean[sel]
        pos = np.arange(ns)
        pos_in_seg = pos - st_seg

        # node-centered targets at row level, shared by both scoring paths
        row_buf[rows0] = y[rows0] - mean_s[seg_pos]

        if k_features < p:
            # candidate-only scoring: each node samples k distinct features
            # (ascending, so argmax ties keep the lowest feature index) and
            # its entries come off the sorted matrix already in x order
            k = k_features
            r = _draw_node_rows(rngs, tree_of[ids[sel]], p)
            C = np.sort(np.argpartition(r, k - 1, axis=1)[:, :k], axis=1)
            G = Ss * k
            glen = np.repeat(m_s, k)
            gstart = np.zeros(G + 1, dtype=np.int64)
            np.cumsum(glen, out=gstart[1:])
            T = int(gstart[-1])
            egroup = np.repeat(np.arange(G), glen)
            eoff = np.arange(T) - gstart[:-1][egroup]
            gn = np.repeat(np.arange(Ss), k)
            efeat = C.reshape(-1)[egroup]
            ecol = st[:-1][gn[egroup]] + eoff
            erow = sorted_t[efeat, ecol]
            ye = ws.fa.reshape(-1)[:T]
            xe = ws.fb.reshape(-1)[:T]
            prefe = ws.fc.reshape(-1)[:T]
            scoree = ws.fd.reshape(-1)[:T]
            flagse = ws.ba.reshape(-1).view(bool)[:T]
            np.take(row_buf, erow, out=ye)
            erow_x = erow if orig is None else orig[erow]
            np.take(xt.reshape(-1), erow_x + efeat * xt.shape[1], out=xe)
            kstart = np.arange(Ss) * k
            if random_split:
                lo = xe[gstart[:-1]]
                hi = xe[gstart[1:] - 1]
                okg = hi > lo
                u = _draw_node_flat(rngs, tree_of[ids[sel]], k)
                thr_g = lo + u * (hi - lo)
                thr_g = np.where(thr_g >= hi, np.nextafter(hi, lo), thr_g)
                np.less_equal(xe, thr_g[egroup], out=flagse)
                cnt_l = np.add.reduceat(flagse, gstart[:-1], dtype=np.float64)
                np.multiply(ye, flagse, out=scoree)
                sum_lg = np.add.reduceat(scoree, gstart[:-1])
                totg = np.add.reduceat(ye, gstart[:-1])
                cnt_r = glen - cnt_l
                okg &= (cnt_l >= msl) & (cnt_r >= msl)
                score_g = np.where(
                    okg,
                    sum_lg * sum_lg / np.maximum(cnt_l, 1.0)
                    + (totg - sum_lg) ** 2 / np.maximum(cnt_r, 1.0),
                    -np.inf,
                )
                node_best = np.maximum.reduceat(score_g, kstart)
                g_cand = np.where(score_g == node_best[gn], np.arange(G), G)
                safe_g = np.minimum(np.minimum.reduceat(g_cand, kstart), G - 1)
                thr_node = thr_g[safe_g]
                n_left = cnt_l[safe_g].astype(np.int64)
                sum_left = sum_lg[safe_g]
            else:
                np.cumsum(ye, out=prefe)
                baseg = np.where(gstart[:-1] > 0, prefe[gstart[:-1] - 1], 0.0)
                totg = prefe[gstart[1:] - 1] - baseg
                np.subtract(prefe, baseg[egroup], out=prefe)
                Le = (eoff + 1).astype(np.float64)
                Re = glen[egroup] - Le
                np.subtract(totg[egroup], prefe, out=scoree)
                np.multiply(scoree, scoree, out=scoree)
                np.divide(scoree, np.maximum(Re, 1.0), out=scoree)
                np.multiply(prefe, prefe, out=ye)       # ye is free now
                np.divide(ye, Le, out=ye)
                np.add(scoree, ye, out=scoree)
                if T > 1:
                    np.less(xe[:-1], xe[1:], out=flagse[: T - 1])
                flagse[T - 1] = False
                if msl == 1:
                    flagse &= eoff != glen[egroup] - 1
                else:
                    flagse &= (eoff != glen[egroup] - 1) & (Le >= msl) & (Re >= msl)
                np.copyto(scoree, -np.inf, where=~flagse)
                best_g = np.maximum.reduceat(scoree, gstart[:-1])
                node_best = np.maximum.reduceat(best_g, kstart)
                g_cand = np.where(best_g == node_best[gn], np.arange(G), G)
                safe_g = np.minimum(np.minimum.reduceat(g_cand, kstart), G - 1)
                e_cand = np.where(scoree == best_g[egroup], np.arange(T), T)
                first_e = np.minimum.reduceat(e_cand, gstart[:-1])
                ce = np.minimum(first_e[safe_g], T - 1)
                cen = np.minimum(ce + 1, T - 1)
                # the midpoint of adjacent floats can round up to the larger
                # value; clamp down so the right child keeps its rows
                mid = 0.5 * (xe[ce] + xe[cen])
                thr_node = np.where(mid >= xe[cen], xe[ce], mid)
                n_left = ce - gstart[:-1][safe_g] + 1
                sum_left = prefe[ce]
            j_star = C.reshape(-1)[safe_g]
            tot_sel = totg[safe_g]
            does_split = node_best > -np.inf
        else:
            ys = ws.fa[:, :ns]
            xs = ws.fb[:, :ns]
            pref = ws.fc[:, :ns]
            score = ws.fd[:, :ns]
            flags = ws.ba.view(bool)[:, :ns]
            np.take(row_buf, sorted_t, out=ys)                      # (p, ns)
            gq = (cur + 1) % 3
            gidx = int_pool[gq][:, :ns]
            offs = np.arange(p, dtype=np.int32)[:, None] * np.int32(xt.shape[1])
            if orig is None:
                np.add(sorted_t, offs, out=gidx)
            else:
                np.take(orig, sorted_t, out=gidx)
                np.add(gidx, offs, out=gidx)
            np.take(xt.reshape(-1), gidx, out=xs)                   # (p, ns)
            Lrow = (pos_in_seg + 1).astype(np.float64)
            Rrow = m_s[seg_pos] - Lrow
            if random_split:
                tot = np.add.reduceat(ys, st[:-1], axis=1)          # (p, Ss)
                lo = xs[:, st[:-1]]
                hi = xs[:, st[1:] - 1]
                ok = hi > lo
                u = _draw_node_cols(rngs, tree_of[ids[sel]], p)
                thr = lo + u * (hi - lo)
                thr = np.where(thr >= hi, np.nextafter(hi, lo), thr)
                np.less_equal(xs, thr[:, seg_pos], out=flags)
                cnt_l = np.add.reduceat(flags, st[:-1], axis=1, dtype=np.float64)
                np.multiply(ys, flags, out=score)
                sum_l = np.add.reduceat(score, st[:-1], axis=1)
                cnt_r = m_s[None, :] - cnt_l
                ok &= (cnt_l >= msl) & (cnt_r >= msl)
                score_kp = (sum_l * sum_l / np.maximum(cnt_l, 1.0)
                            + (tot - sum_l) ** 2 / np.maximum(cnt_r, 1.0))
                np.copyto(score_kp, -np.inf, where=~ok)
            else:
                np.cumsum(ys, axis=1, out=pref)
                base = np.where((st[:-1] == 0)[None, :], 0.0, pref[:, st[:-1] - 1])
                tot = pref[:, st[1:] - 1] - base                    # (p, Ss)
                np.subtract(pref, base[:, seg_pos], out=pref)       # in-seg prefix
                # score = pref^2/L + (tot - pref)^2/R, leaving pref intact
                np.subtract(tot[:, seg_pos], pref, out=score)
                np.multiply(score, score, out=score)
                np.divide(score, np.maximum(Rrow, 1.0)[None, :], out=score)
                np.multiply(pref, pref, out=ys)                     # ys is free now
                np.divide(ys, Lrow[None, :], out=ys)
                np.add(score, ys, out=score)
                if msl == 1:
                    valid_row = pos_in_seg != m_s[seg_pos] - 1
                else:
                    valid_row = (pos_in_seg != m_s[seg_pos] - 1) & (Lrow >= msl) & (Rrow >= msl)
                np.less(xs[:, :-1], xs[:, 1:], out=flags[:, : ns - 1])
                flags[:, ns - 1] = False                            # boundary test
                flags &= valid_row[None, :]
                np.copyto(score, -np.inf, where=~flags)
                score_kp = np.maximum.reduceat(score, st[:-1], axis=1)  # (p, Ss)

            j_star = np.argmax(score_kp, axis=0)                    # (Ss,) first max
            ar_s = np.arange(Ss)
            node_best = score_kp[j_star, ar_s]
            does_split = node_best > -np.inf
            tot_sel = tot[j_star, ar_s]
            if random_split:
                thr_node = thr[j_star, ar_s]
                n_left = cnt_l[j_star, ar_s].astype(np.int64)
                sum_left = sum_l[j_star, ar_s]
            else:
                row_score = score[j_star[seg_pos], pos]             # chosen scores
                cand_pos = np.where(row_score == node_best[seg_pos], pos, ns)
                first_pos = np.minimum.reduceat(cand_pos, st[:-1])
                fp = np.minimum(first_pos, ns - 1)
                xsel = xs[j_star, fp]
                xnext = xs[j_star, np.minimum(fp + 1, ns - 1)]
                # the midpoint of adjacent floats can round up to the larger
                # value; clamp down so the right child keeps its rows
                mid = 0.5 * (xsel + xnext)
                thr_node = np.where(mid >= xnext, xsel, mid)
                n_left = fp - st[:-1] + 1
                sum_left = pref[j_star, fp]

        gain_node = np.maximum(node_best - tot_sel * tot_sel / m_s, 0.0)

        sp = np.flatnonzero(does_split)
        if sp.size == 0:
            if train_pred is not None:
                train_pred[rows0] = mean_s[seg_pos]
            break
        node_ids = ids[sel[sp]]
        if sp.size != Ss:
            # segments with no valid boundary freeze as leaves
            dead_pos = ~does_split[seg_pos]
            if train_pred is not None:
                train_pred[rows0[dead_pos]] = mean_s[seg_pos[dead_pos]]
            keep = np.flatnonzero(~dead_pos)
            nxt = (cur + 1) % 3
            np.take(sorted_t, keep, axis=1, out=int_pool[nxt][:, :len(keep)])
            sorted_t = int_pool[nxt][:, :len(keep)]
            cur = nxt
            rows0 = sorted_t[0]
            m_s = m_s[sp]
            j_star = j_star[sp]
            thr_node = thr_node[sp]
            gain_node = gain_node[sp]
            n_left = n_left[sp]
            sum_left = sum_left[sp]
            mean_s = mean_s[sp]
            tot_sel = tot_sel[sp]
            st = np.zeros(len(sp) + 1, dtype=np.int64)
            np.cumsum(m_s, out=st[1:])
            ns = int(st[-1])
            seg_pos = np.repeat(np.arange(len(sp)), m_s)
            st_seg = st[:-1][seg_pos]
            pos = np.arange(ns)
            pos_in_seg = pos - st_seg
        n_sp = len(sp)

        lefts = n_nodes + 2 * np.arange(n_sp)
        rights = lefts + 1
        tree_of[lefts] = tree_of[node_ids]
        tree_of[rights] = tree_of[node_ids]
        nf[node_ids] = j_star
        nt[node_ids] = thr_node
        nl[node_ids] = lefts
        nr[node_ids] = rights
        ng[node_ids] = gain_node
        n_nodes += 2 * n_sp

        if depth + 1 >= cap:
            # children are forced leaves: their means follow from the split
            # sums, no partition of the sorted matrix is needed
            n_right = m_s - n_left
            lv = mean_s + sum_left / n_left
            rv = mean_s + (tot_sel - sum_left) / n_right
            nv[lefts] = lv
            nv[rights] = rv
            nn[lefts] = n_left
            nn[rights] = n_right
            if train_pred is not None:
                rx = rows0 if orig is None else orig[rows0]
                go = xt[j_star[seg_pos], rx] <= thr_node[seg_pos]
                train_pred[rows0] = np.where(go, lv[seg_pos], rv[seg_pos])
            break

        # stable partition of every feature row at once: destinations are
        # start + rank-among-lefts (or left-count + rank-among-rights).
        # Views are re-sliced: ns may have shrunk in the dead-segment pass.
        scratch = ws.fd[:, :ns]
        flags = ws.ba[:, :ns]
        rx = rows0 if orig is None else orig[rows0]
        go_rows = xt[j_star[seg_pos], rx] <= thr_node[seg_pos]
        flag_buf[rows0] = go_rows                               # row -> flag
        np.take(flag_buf, sorted_t, out=flags)                  # (p, ns) int8
        dq = (cur + 1) % 3
        rank_l = int_pool[dq][:, :ns]
        np.cumsum(flags, axis=1, out=rank_l)
        base_l = np.where((st[:-1] == 0)[None, :], np.int32(0), rank_l[:, st[:-1] - 1])
        np.subtract(rank_l, base_l[:, seg_pos], out=rank_l)
        # right destinations: n_left + pos_in_seg - rank_l; left: rank_l - 1
        right_base = (n_left[seg_pos] + pos_in_seg).astype(np.float64)
        np.subtract(right_base[None, :], rank_l, out=scratch)
        np.subtract(rank_l, np.int32(1), out=rank_l)
        np.copyto(rank_l, scratch, where=flags == 0, casting="unsafe")
        np.add(rank_l, st_seg[None, :].astype(np.int32), out=rank_l)
        dest = rank_l
        nq = (dq + 1) % 3
        new_sorted = int_pool[nq][:, :ns]
        np.put_along_axis(new_sorted, dest, sorted_t, axis=1)
        sorted_t = new_sorted
        cur = nq

        ids = np.empty(2 * n_sp, dtype=np.int64)
        ids[0::2] = lefts
        ids[1::2] = rights
        new_starts = np.empty(2 * n_sp + 1, dtype=np.int64)
        new_starts[0:-1:2] = st[:-1]
        new_starts[1:-1:2] = st[:-1] + n_left
        new_starts[-1] = st[-1]
        starts = new_starts
        depth += 1

    # split the flat node arrays back into per-tree trees; creation order
    # within a tree matches a solo fit's breadth-first numbering
    towner = tree_of[:n_nodes]
    order = np.argsort(towner, kind="stable")
    counts = np.bincount(towner, minlength=n_trees)
    offs = np.zeros(n_trees + 1, dtype=np.int64)
    np.cumsum(counts, out=offs[1:])
    loc = np.empty(n_nodes, dtype=np.int64)
    loc[order] = np.arange(n_nodes) - offs[:-1][towner[order]]
    trees = []
    for t in range(n_trees):
        sel_n = order[offs[t]:offs[t + 1]]
        lf = nl[sel_n]
        rt = nr[sel_n]
        trees.append(DecisionTree(
            feature=nf[sel_n].copy(),
            threshold=nt[sel_n].copy(),
            left=np.where(lf >= 0, loc[np.maximum(lf, 0)], -1).astype(np.int32),
            right=np.where(rt >= 0, loc[np.maximum(rt, 0)], -1).astype(np.int32),
            value=nv[sel_n].copy(),
            n_samples=nn[sel_n].copy(),
            gain=ng[sel_n].copy(),
            n_features=p,
        ))
    return trees


def _draw_node_rows(rngs, node_tree, p):
    """(Ss, p) uniforms where each node's row comes from its tree's stream
    (node_tree is nondecreasing: the frontier stays tree-sorted)."""
    if len(rngs) == 1:
        return rngs[0].random((len(node_tree), p))
    counts = np.bincount(node_tree, minlength=len(rngs))
    return np.concatenate([rngs[t].random((c, p)) for t, c in enumerate(counts) if c],
                          axis=0)


def _draw_node_flat(rngs, node_tree, k):
    """(Ss*k,) uniforms drawn per owning tree in frontier order."""
    if len(rngs) == 1:
        return rngs[0].random(len(node_tree) * k)
    counts = np.bincount(node_tree, minlength=len(rngs))
    return np.concatenate([rngs[t].random(c * k) for t, c in enumerate(counts) if c])


def _draw_node_cols(rngs, node_tree, p):
    """(p, Ss) uniforms drawn per owning tree in frontier order."""
    if len(rngs) == 1:
        return rngs[0].random((p, len(node_tree)))
    counts = np.bincount(node_tree, minlength=len(rngs))
    return np.concatenate([rngs[t].random((p, c)) for t, c in enumerate(counts) if c],
                          axis=1)


def _grow_tree(X, y, *, max_depth, k_features, min_samples_leaf, rng, random_split,
               presorted=None, train_pred=None):
    """Single-tree entry over _grow_forest (gb stages and fit_tree)."""
    if presorted is None:
        presorted = _Presorted(X)
    return _grow_forest(
        presorted.xt, np.ascontiguousarray(y, dtype=np.float64), None,
        presorted.order_t, presorted.workspace(), [rng],
        n_per=X.shape[0], max_depth=max_depth, k_features=k_features,
        min_samples_leaf=min_samples_leaf, random_split=random_split,
        train_pred=train_pred,
    )[0]


def fit_tree(X, y, *, mode: str = "exact_split", max_depth: int | None = None,
             max_features: str = "all", min_samples_leaf: int = 1,
             rng: np.random.Generator | None = None) -> DecisionTree:
    """Fit one CART variance-reduction tree.

    exact_split scans every threshold among the candidate features;
    random_split draws one uniform threshold per candidate feature and keeps
    the best (the extra-trees node rule).
    """
    if mode not in ("exact_split", "random_split"):
        raise ValueError(f"unknown split mode {mode!r}")
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError("X must be 2-dimensional")
    if len(X) != len(y) or len(y) == 0:
        raise ValueError("X and y must be non-empty with matching length")
    if rng is None:
        rng = np.random.default_rng(0)
    k = resolve_max_features(max_features, X.shape[1])
    return _grow_tree(
        X, y, max_depth=max_depth, k_features=k,
        min_samples_leaf=int(min_samples_leaf), rng=rng,
        random_split=(mode == "random_split"),
    )


@dataclass
class EnsembleModel:
    """A trained forest or boosted ensemble. Prediction is the mean of tree
    outputs (rf/et) or f0 + learning_rate * sum of stage outputs (gb).
    Immutable after fitting; safe for concurrent prediction."""

    kind: str
    trees: list[DecisionTree]
    params: HyperParams
    f0: float = 0.0
    learning_rate: float = 1.0
    feature_names: tuple[str, ...] | None = None

    @property
    def n_features(self) -> int:
        return self.trees[0].n_features

    def tree_predictions(self, X) -> np.ndarray:
        """(n_trees, n_rows) per-tree raw predictions; the staged-evaluation
        primitive used by grid search."""
        X = np.asarray(X, dtype=np.float64)
        return np.stack([t.predict(X) for t in self.trees]) if len(X) else np.zeros((len(self.trees), 0))

    def predict(self, X, n_trees: int | None = None) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise ValueError(f"expected (n, {self.n_features}) input, got {X.shape}")
        if len(X) == 0:
            return np.empty(0, dtype=np.float64)
        use = self.trees if n_trees is None else self.trees[:n_trees]
        acc = np.zeros(len(X), dtype=np.float64)
        for t in use:
            acc += t.predict(X)
        if self.kind == "gb":
            return self.f0 + self.learning_rate * acc
        return acc / len(use)


def _tree_rng(seed: int, tree_index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(tree_index,)))


_FOREST_CHUNK = 25  # trees grown level-synchronously per batch (fixed)


def _fit_forest_trees(X, y, params: HyperParams, *, random_split: bool) -> list[DecisionTree]:
    """Grow a forest in fixed-size chunks of level-synchronized trees.

    Chunking only batches the linear algebra; every tree draws from its own
    (seed, tree index) stream in solo order, and rf trees bootstrap their
    rows (et trees see the full sample) exactly as the ensemble contracts
    state.
    """
    n, p = X.shape
    k = resolve_max_features(params.max_features, p)
    cache = _Presorted(X)
    base_order = cache.order_t
    bootstrap = params.bootstrap and not random_split
    ranks = cache.ranks() if bootstrap else None
    trees: list[DecisionTree] = []
    ws = None
    for lo in range(0, params.n_trees, _FOREST_CHUNK):
        chunk = range(lo, min(lo + _FOREST_CHUNK, params.n_trees))
        rngs = [_tree_rng(params.seed, i) for i in chunk]
        c = len(rngs)
        if ws is None or ws.fa.shape[1] < c * n:
            ws = _Workspace(p, c * n)
        if bootstrap:
            idx_list = [rng.integers(0, n, n) for rng in rngs]
            orig = np.concatenate(idx_list).astype(np.int32)
            order0 = np.concatenate(
                [np.argsort(ranks[:, idx], axis=1, kind="stable").astype(np.int32)
                 + np.int32(t * n)
                 for t, idx in enumerate(idx_list)], axis=1)
        else:
            orig = None if c == 1 else np.tile(np.arange(n, dtype=np.int32), c)
            order0 = (base_order if c == 1 else np.concatenate(
                [base_order + np.int32(t * n) for t in range(c)], axis=1))
        y_st = y[orig] if orig is not None else y
        trees.extend(_grow_forest(
            cache.xt, np.ascontiguousarray(y_st, dtype=np.float64), orig,
            order0, ws, rngs, n_per=n, max_depth=None, k_features=k,
            min_samples_leaf=params.min_samples_leaf, random_split=random_split,
        ))
    return trees


def fit_random_forest(X, y, params: HyperParams) -> EnsembleModel:
    """Bootstrapped exact-split trees grown without a depth cap;
    regularization comes from max_features and min_samples_leaf."""
    params = replace(params, learner="rf").validate()
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    _check_xy(X, y)
    trees = _fit_forest_trees(X, y, params, random_split=False)
    return EnsembleModel(kind="rf", trees=trees, params=params)


def fit_extra_trees(X, y, params: HyperParams) -> EnsembleModel:
    """Extremely randomized trees: the full sample per tree (no bootstrap)
    and one uniform random threshold per candidate feature at each node."""
    params = replace(params, learner="et").validate()
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    _check_xy(X, y)
    trees = _fit_forest_trees(X, y, params, random_split=True)
    return EnsembleModel(kind="et", trees=trees, params=params)


def fit_gradient_boosting(X, y, params: HyperParams) -> EnsembleModel:
    """Stagewise squared-error boosting: f0 = mean(y), then each stage fits
    an exact-split tree of depth <= gb_max_depth to the current residuals."""
    params = replace(params, learner="gb").validate()
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    _check_xy(X, y)
    f0 = float(y.mean())
    nu = params.gb_learning_rate
    current = np.full(len(y), f0)
    trees = []
    rng = np.random.default_rng(params.seed)  # unused by exact splits; kept for parity
    cache = _Presorted(X)  # X never changes across stages
    stage_pred = np.empty(len(y), dtype=np.float64)
    for _ in range(params.n_trees):
        residual = y - current
        tree = _grow_tree(X, residual, max_depth=params.gb_max_depth,
                          k_features=X.shape[1],
                          min_samples_leaf=params.min_samples_leaf,
                          rng=rng, random_split=False, presorted=cache,
                          train_pred=stage_pred)
        trees.append(tree)
        if nu != 0.0:
            current = current + nu * stage_pred
    return EnsembleModel(kind="gb", trees=trees, params=params, f0=f0,
                         learning_rate=nu)


def fit_ensemble(X, y, params: HyperParams) -> EnsembleModel:
    fitter = {"rf": fit_random_forest, "et": fit_extra_trees, "gb": fit_gradient_boosting}
    return fitter[params.learner](X, y, params)


def predict(model: EnsembleModel, X) -> np.ndarray:
    return model.predict(X)


def _check_xy(X, y):
    if X.ndim != 2:
        raise ValueError("X must be 2-dimensional")
    if len(X) != len(y) or len(y) == 0:
        raise ValueError("X and y must be non-empty with matching length")


def impurity_importance(model: EnsembleModel) -> np.ndarray:
    """Per-feature sum of sample-weighted variance reductions over all
    trees, normalized to 1. If no tree made any split, returns the uniform
    vector with a warning."""
    p = model.n_features
    imp = np.zeros(p, dtype=np.float64)
    for t in model.trees:
        internal = t.feature >= 0
        np.add.at(imp, t.feature[internal], t.gain[internal])
    total = imp.sum()
    if total <= 0.0:
        warnings.warn("no splits in any tree; importance is undefined, returning uniform")
        return np.full(p, 1.0 / p)
    return imp / total


def partial_dependence(model: EnsembleModel, X_background, feature: int,
                       grid=None) -> tuple[np.ndarray, np.ndarray]:
    """Marginal effect curve: mean prediction over background rows as the
    feature column sweeps the grid (deciles of the background by default)."""
    X = np.asarray(X_background, dtype=np.float64)
    if X.ndim != 2 or len(X) == 0:
        raise ValueError("X_background must be a non-empty 2-d array")
    if not 0 <= feature < X.shape[1]:
        raise ValueError(f"feature index {feature} out of range")
    if grid is None:
        grid = np.unique(np.quantile(X[:, feature], np.linspace(0.0, 1.0, 11)))
    grid = np.asarray(grid, dtype=np.float64)
    curve = np.empty(len(grid), dtype=np.float64)
    work = X.copy()
    for i, v in enumerate(grid):
        work[:, feature] = v
        curve[i] = float(model.predict(work).mean())
    return grid, curve


# ---------------------------------------------------------------------------
# Serialization: exact round-trip via repr-format floats in JSON.
# ---------------------------------------------------------------------------

def model_to_json(model: EnsembleModel) -> str:
    doc = {
        "format": "tractcast-ensemble/1",
        "kind": model.kind,
        "f0": model.f0,
        "learning_rate": model.learning_rate,
        "params": asdict(model.params),
        "feature_names": list(model.feature_names) if model.feature_names else None,
        "trees": [
            {
                "feature": t.feature.tolist(),
                "threshold": t.threshold.tolist(),
                "left": t.left.tolist(),
                "right": t.right.tolist(),
                "value": t.value.tolist(),
                "n_samples": t.n_samples.tolist(),
                "gain": t.gain.tolist(),
                "n_features": t.n_features,
            }
            for t in model.trees
        ],
    }
    return json.dumps(doc, sort_keys=True, separators=(",", ":"))


def model_from_json(text: str) -> EnsembleModel:
    doc = json.loads(text)
    if doc.get("format") != "tractcast-ensemble/1":
        raise ValueError(f"unsupported model format {doc.get('format')!r}")
    trees = [
        DecisionTree(
            feature=np.asarray(t["feature"], dtype=np.int32),
            threshold=np.asarray(t["threshold"], dtype=np.float64),
            left=np.asarray(t["left"], dtype=np.int32),
            right=np.asarray(t["right"], dtype=np.int32),
            value=np.asarray(t["value"], dtype=np.float64),
            n_samples=np.asarray(t["n_samples"], dtype=np.int32),
            gain=np.asarray(t["gain"], dtype=np.float64),
            n_features=int(t["n_features"]),
        )
        for t in doc["trees"]
    ]
    names = doc.get("feature_names")
    return EnsembleModel(
        kind=doc["kind"], trees=trees, params=HyperParams(**doc["params"]),
        f0=float(doc["f0"]), learning_rate=float(doc["learning_rate"]),
        feature_names=tuple(names) if names else None,
    )
