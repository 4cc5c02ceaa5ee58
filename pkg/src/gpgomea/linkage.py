"""Linkage learning over a population of template genotypes.

Symbol frequencies per location and per location pair give entropies and
mutual information (in bits). The bias-corrected variant rescales every
entropy term by the reciprocal of its value on the initial population, so the
corrected MI matrix is exactly the identity right after initialization.
Linkage trees are built by average-linkage (UPGMA) clustering on the
similarity matrix using reciprocal-nearest-neighbour chains.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass, field

import numpy as np

ERC_STRATEGIES = ("all", "no", "bin")


class LinkageError(ValueError):
    pass


@dataclass
class ErcBinTable:
    """On-line binning of constants.

    The first ``capacity`` distinct constants become bins; later constants
    are mapped to the nearest bin (ties go to the smaller one).
    """

    capacity: int = 100
    bins: list[float] = field(default_factory=list)

    def __post_init__(self):
        if self.capacity < 1:
            raise LinkageError("bin capacity must be positive")

    def __len__(self) -> int:
        return len(self.bins)

    def reset(self) -> None:
        self.bins.clear()


def bin_constant(table: ErcBinTable, value: float) -> float:
    """Return the bin that ``value`` falls into, creating it if room remains."""
    bins = table.bins
    k = bisect.bisect_left(bins, value)
    if k < len(bins) and bins[k] == value:
        return value
    if len(bins) < table.capacity:
        bins.insert(k, value)
        return value
    if k == 0:
        return bins[0]
    if k == len(bins):
        return bins[-1]
    lo, hi = bins[k - 1], bins[k]
    return lo if value - lo <= hi - value else hi


def _entropy(counts: np.ndarray, n: int) -> float:
    c = counts[counts > 0]
    if c.size == 0:
        return 0.0
    p = c / n
    return float(-np.sum(p * np.log2(p)))


@dataclass
class FrequencyModel:
    """Symbol statistics of one population.

    ``ids`` holds, per location, a dense symbol id for each individual (-1
    where the symbol is excluded from counting). ``labels[i][k]`` is the
    symbol key behind id ``k`` at location ``i``: the integer code for
    functions and features, ``("const", value)`` or ``("bin", value)`` for
    constants.
    """

    n_pop: int
    strategy: str
    ids: np.ndarray
    labels: list[list]
    h1: np.ndarray
    h2: np.ndarray

    @property
    def ell(self) -> int:
        return self.ids.shape[1]

    def location_counts(self, i: int) -> dict:
        col = self.ids[:, i]
        col = col[col >= 0]
        counts = np.bincount(col, minlength=len(self.labels[i]))
        return {self.labels[i][k]: int(c) for k, c in enumerate(counts) if c}

    def pair_counts(self, i: int, j: int) -> dict:
        a, b = self.ids[:, i], self.ids[:, j]
        keep = (a >= 0) & (b >= 0)
        pairs, counts = np.unique(np.stack([a[keep], b[keep]]), axis=1, return_counts=True)
        return {(self.labels[i][x], self.labels[j][y]): int(c)
                for (x, y), c in zip(pairs.T, counts)}


def count_frequencies(codes: np.ndarray, consts: np.ndarray, const_code: int,
                      strategy: str = "all", bins: ErcBinTable | None = None) -> FrequencyModel:
    """Count symbol occurrences per location and per location pair.

    ``strategy`` decides how constants are keyed: ``"all"`` by exact value,
    ``"no"`` not counted at all, ``"bin"`` through ``bins`` (streamed in
    individual-major, pre-order order).
    """
    if strategy not in ERC_STRATEGIES:
        raise LinkageError(f"unknown ERC strategy {strategy!r}")
    codes = np.asarray(codes)
    consts = np.asarray(consts, dtype=np.float64)
    if codes.ndim != 2 or codes.shape[0] == 0:
        raise LinkageError("population must be a non-empty (n_pop, ell) array")
    n_pop, ell = codes.shape
    is_const = codes == const_code

    const_keys = consts.copy()
    if strategy == "bin" and is_const.any():
        if bins is None:
            bins = ErcBinTable()
        rows, cols = np.nonzero(is_const)
        for r, c in zip(rows, cols):
            const_keys[r, c] = bin_constant(bins, consts[r, c])
    tag = {"all": "const", "bin": "bin"}.get(strategy)

    ids = np.full((n_pop, ell), -1, dtype=np.int64)
    labels = []
    h1 = np.empty(ell)
    for i in range(ell):
        col_c = is_const[:, i]
        plain = codes[~col_c, i]
        uniq_plain, inv_plain = np.unique(plain, return_inverse=True)
        lab = [int(c) for c in uniq_plain]
        ids[~col_c, i] = inv_plain
        if strategy != "no" and col_c.any():
            uniq_c, inv_c = np.unique(const_keys[col_c, i], return_inverse=True)
            ids[col_c, i] = len(lab) + inv_c
            lab += [(tag, float(v)) for v in uniq_c]
        labels.append(lab)
        col = ids[:, i]
        h1[i] = _entropy(np.bincount(col[col >= 0], minlength=len(lab)), n_pop)

    card = np.array([len(lab) for lab in labels], dtype=np.int64)
    h2 = np.diag(h1).astype(np.float64)
    excluded = ids < 0
    any_excluded = bool(excluded.any())
    for i in range(ell):
        a = ids[:, i]
        for j in range(i + 1, ell):
            b = ids[:, j]
            joint = a * card[j] + b
            if any_excluded:
                joint = joint[(a >= 0) & (b >= 0)]
            span = card[i] * card[j]
            if span <= 4 * n_pop:
                counts = np.bincount(joint, minlength=span)
            else:
                counts = np.unique(joint, return_counts=True)[1]
            h2[i, j] = h2[j, i] = _entropy(counts, n_pop)
    return FrequencyModel(n_pop, strategy, ids, labels, h1, h2)


def entropy(model: FrequencyModel, i: int) -> float:
    return float(model.h1[i])


def joint_entropy(model: FrequencyModel, i: int, j: int) -> float:
    return float(model.h2[i, j])


def mutual_information(model: FrequencyModel, i: int, j: int) -> float:
    if i == j:
        return float(model.h1[i])
    return float(model.h1[i] + model.h1[j] - model.h2[i, j])


def mi_matrix(model: FrequencyModel) -> np.ndarray:
    m = model.h1[:, None] + model.h1[None, :] - model.h2
    np.fill_diagonal(m, model.h1)
    return m


@dataclass(frozen=True)
class BiasCoefficients:
    beta1: np.ndarray
    beta2: np.ndarray


def capture_bias(model: FrequencyModel) -> BiasCoefficients:
    """Bias coefficients from the freshly initialized population.

    Zero entropies give a zero coefficient instead of a division by zero.
    """
    h1, h2 = model.h1, model.h2
    beta1 = np.zeros_like(h1)
    np.divide(1.0, h1, out=beta1, where=h1 > 0)
    beta2 = np.zeros_like(h2)
    np.divide(2.0, h2, out=beta2, where=h2 > 0)
    np.fill_diagonal(beta2, 0.0)
    return BiasCoefficients(beta1, beta2)


def biased_mi(model: FrequencyModel, bias: BiasCoefficients, i: int, j: int) -> float:
    if i == j:
        return 1.0
    b1 = bias.beta1
    return float(b1[i] * model.h1[i] + b1[j] * model.h1[j] - bias.beta2[i, j] * model.h2[i, j])


def biased_mi_matrix(model: FrequencyModel, bias: BiasCoefficients) -> np.ndarray:
    """Bias-corrected MI for all pairs; the diagonal is 1 by convention."""
    hb = bias.beta1 * model.h1
    m = hb[:, None] + hb[None, :] - bias.beta2 * model.h2
    np.fill_diagonal(m, 1.0)
    return m


@dataclass(frozen=True)
class Fos:
    """Family of subsets with its binary merge structure.

    ``subsets[k]`` is a sorted tuple of locations; ``children[k]`` is the
    pair of subset indices merged into it, or ``None`` for singletons.
    """

    subsets: tuple[tuple[int, ...], ...]
    children: tuple[tuple[int, int] | None, ...]
    ell: int

    def __len__(self) -> int:
        return len(self.subsets)

    def as_sets(self) -> set[frozenset]:
        return {frozenset(s) for s in self.subsets}

    def flat(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Concatenated members, offsets and a mask of full-set subsets."""
        members = np.fromiter((p for s in self.subsets for p in s), dtype=np.int64)
        offsets = np.zeros(len(self.subsets) + 1, dtype=np.int64)
        offsets[1:] = np.cumsum([len(s) for s in self.subsets])
        skip = np.array([len(s) == self.ell for s in self.subsets], dtype=np.bool_)
        return members, offsets, skip


def merged_similarity(s_a: np.ndarray, s_b: np.ndarray, n_a: int, n_b: int) -> np.ndarray:
    """Size-weighted mean similarity of the union of clusters a and b."""
    return (n_a * np.asarray(s_a, dtype=float) + n_b * np.asarray(s_b, dtype=float)) / (n_a + n_b)


def build_linkage_tree(similarity: np.ndarray) -> Fos:
    """UPGMA on a similarity matrix via reciprocal-nearest-neighbour chains.

    The matrix of summed pairwise similarities between clusters is kept and
    divided by the size product on demand, so equal averages compare equal
    whatever the merge order (exactly so for dyadic inputs).

    Clusters are identified by their smallest location. Equal similarities
    go to the pair with the lexicographically largest sorted (id, id) key;
    for one cluster that means the largest candidate id. A merged cluster
    inherits the smaller id, so its pairs never outrank the pairs they
    replace. The order therefore stays reducible and the chain yields the
    same tree as greedy global-maximum merging under the same rule.
    """
    S = np.array(similarity, dtype=np.float64)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise LinkageError("similarity must be a square matrix")
    if not np.all(np.isfinite(S)):
        raise LinkageError("similarity matrix has non-finite entries")
    ell = S.shape[0]
    W = S.copy()  # W[a, b] = sum of S over (a members) x (b members)
    subsets = [(i,) for i in range(ell)]
    children: list = [None] * ell
    node_of = list(range(ell))  # cluster id -> index in subsets
    size = np.ones(ell)
    alive = np.ones(ell, dtype=bool)
    n_alive = ell
    chain: list[int] = []

    def nearest(a: int) -> int:
        row = np.where(alive, W[a] / (size[a] * size), -np.inf)
        row[a] = -np.inf
        return int(np.flatnonzero(row == row.max())[-1])

    while n_alive > 1:
        if not chain:
            chain.append(int(np.flatnonzero(alive)[0]))
        a = chain[-1]
        b = nearest(a)
        if len(chain) > 1 and b == chain[-2]:
            chain.pop()
            chain.pop()
            lo, hi = min(a, b), max(a, b)
            W[lo, :] += W[hi, :]
            W[:, lo] = W[lo, :]
            alive[hi] = False
            n_alive -= 1
            subsets.append(tuple(sorted(subsets[node_of[lo]] + subsets[node_of[hi]])))
            children.append((node_of[lo], node_of[hi]))
            node_of[lo] = len(subsets) - 1
            size[lo] += size[hi]
        elif b in chain:
            # only reachable through rounding in non-dyadic sums; restart from b
            del chain[chain.index(b) + 1:]
        else:
            chain.append(b)
    return Fos(tuple(subsets), tuple(children), ell)


def build_random_tree(rng: np.random.Generator, ell: int) -> Fos:
    """A linkage-tree-shaped FOS obtained by merging random cluster pairs."""
    if ell < 1:
        raise LinkageError("need at least one location")
    subsets = [(i,) for i in range(ell)]
    children: list = [None] * ell
    pool = list(range(ell))
    while len(pool) > 1:
        i, j = rng.choice(len(pool), size=2, replace=False)
        a, b = pool[i], pool[j]
        for k in sorted((i, j), reverse=True):
            pool[k] = pool[-1]
            pool.pop()
        subsets.append(tuple(sorted(subsets[a] + subsets[b])))
        children.append((a, b))
        pool.append(len(subsets) - 1)
    return Fos(tuple(subsets), tuple(children), ell)


def write_matrix_csv(matrix: np.ndarray, path) -> None:
    """Dump a similarity matrix as plain CSV (17 significant digits)."""
    with open(path, "w", encoding="utf-8") as fh:
        for row in np.asarray(matrix):
            fh.write(",".join(format(float(v), ".17g") for v in row) + "\n")
