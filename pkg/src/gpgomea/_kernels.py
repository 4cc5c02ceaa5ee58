"""Compiled inner loops.

Everything here works on plain integer/float arrays so that the same kernels
serve the fixed-template genotypes and the prefix-encoded GP-Trad trees.
Symbol codes are looked up through three small tables built by
:class:`gpgomea.tree.SymbolSet`:

``kinds[c]``   0 = function, 1 = feature, 2 = constant
``args[c]``    operator id (functions) or feature column (features)
``arities[c]`` number of inputs consumed (0 for terminals)
"""

import numpy as np
from numba import njit

KIND_FUNCTION = 0
KIND_FEATURE = 1
KIND_CONSTANT = 2

OP_ADD = 0
OP_SUB = 1
OP_MUL = 2
OP_AQ = 3
OP_SIN = 4
OP_COS = 5
OP_EXP = 6
OP_LOG = 7


@njit(cache=True)
def _apply(op, x1, x2, out):
    n = out.shape[0]
    if op == OP_ADD:
        for k in range(n):
            out[k] = x1[k] + x2[k]
    elif op == OP_SUB:
        for k in range(n):
            out[k] = x1[k] - x2[k]
    elif op == OP_MUL:
        for k in range(n):
            out[k] = x1[k] * x2[k]
    elif op == OP_AQ:
        for k in range(n):
            out[k] = x1[k] / np.sqrt(1.0 + x2[k] * x2[k])
    elif op == OP_SIN:
        for k in range(n):
            out[k] = np.sin(x1[k])
    elif op == OP_COS:
        for k in range(n):
            out[k] = np.cos(x1[k])
    elif op == OP_EXP:
        for k in range(n):
            out[k] = np.exp(x1[k])
    elif op == OP_LOG:
        for k in range(n):
            out[k] = np.log(x1[k])


@njit(cache=True)
def active_mask(codes, arities, children, mask):
    """Fill ``mask`` with the positions reachable from the root.

    Children always have a larger pre-order index than their parent, so one
    forward sweep suffices.
    """
    mask[:] = False
    mask[0] = True
    for p in range(codes.shape[0]):
        if mask[p]:
            for k in range(arities[codes[p]]):
                mask[children[p, k]] = True


@njit(cache=True)
def eval_template(codes, consts, kinds, args, arities, children, XT, buf):
    """Evaluate a template genotype; returns a view on ``buf[0]``."""
    ell = codes.shape[0]
    n = XT.shape[1]
    mask = np.empty(ell, dtype=np.bool_)
    active_mask(codes, arities, children, mask)
    for p in range(ell - 1, -1, -1):
        if not mask[p]:
            continue
        c = codes[p]
        kind = kinds[c]
        if kind == KIND_FUNCTION:
            c0 = children[p, 0]
            c1 = children[p, 1] if arities[c] > 1 else c0
            _apply(args[c], buf[c0], buf[c1], buf[p])
        elif kind == KIND_FEATURE:
            col = args[c]
            for k in range(n):
                buf[p, k] = XT[col, k]
        else:
            v = consts[p]
            for k in range(n):
                buf[p, k] = v
    return buf[0]


@njit(cache=True)
def eval_prefix(codes, consts, kinds, args, arities, XT, buf):
    """Evaluate a prefix (Polish) encoded tree; ``buf`` needs len(codes) rows.

    Sweeps right to left with an explicit stack of row indices into ``buf``.
    """
    size = codes.shape[0]
    n = XT.shape[1]
    stack = np.empty(size, dtype=np.int64)
    top = 0
    for p in range(size - 1, -1, -1):
        c = codes[p]
        kind = kinds[c]
        if kind == KIND_FUNCTION:
            a = arities[c]
            r0 = stack[top - 1]
            r1 = stack[top - 2] if a > 1 else r0
            top -= a
            _apply(args[c], buf[r0], buf[r1], buf[p])
        elif kind == KIND_FEATURE:
            col = args[c]
            for k in range(n):
                buf[p, k] = XT[col, k]
        else:
            v = consts[p]
            for k in range(n):
                buf[p, k] = v
        stack[top] = p
        top += 1
    return buf[0]


@njit(cache=True)
def scaled_mse(y, p):
    """Return ``(mse, a, b)`` of the least-squares fit ``y ~ a + b p``.

    Non-finite predictions give ``(inf, mean(y), 0)``.
    """
    n = y.shape[0]
    my = 0.0
    mp = 0.0
    pmin = np.inf
    pmax = -np.inf
    for k in range(n):
        if not np.isfinite(p[k]):
            return np.inf, np.mean(y), 0.0
        my += y[k]
        mp += p[k]
        if p[k] < pmin:
            pmin = p[k]
        if p[k] > pmax:
            pmax = p[k]
    my /= n
    mp /= n
    b = 0.0
    if pmax > pmin:
        var = 0.0
        cov = 0.0
        for k in range(n):
            dp = p[k] - mp
            var += dp * dp
            cov += (y[k] - my) * dp
        if var > 0.0 and np.isfinite(var) and np.isfinite(cov):
            b = cov / var
    a = my - b * mp
    mse = 0.0
    for k in range(n):
        e = y[k] - (a + b * p[k])
        mse += e * e
    mse /= n
    if not np.isfinite(mse):
        return np.inf, my, 0.0
    return mse, a, b


@njit(cache=True)
def template_fitness(codes, consts, kinds, args, arities, children, XT, y, buf):
    out = eval_template(codes, consts, kinds, args, arities, children, XT, buf)
    return scaled_mse(y, out)


@njit(cache=True)
def _changed(codes_b, consts_b, codes_o, consts_o, mask_b, mask_o):
    for p in range(codes_b.shape[0]):
        if mask_b[p] != mask_o[p]:
            return True
        if mask_o[p]:
            if codes_b[p] != codes_o[p]:
                return True
            if consts_b[p] != consts_o[p]:
                return True
    return False


@njit(cache=True)
def gom_generation(pop_codes, pop_consts, fitness, scale_a, scale_b,
                   fos_members, fos_offsets, skip, perms, donors,
                   kinds, args, arities, children, XT, y):
    """Apply GOM to every member of the population.

    ``perms[i]`` is the subset visiting order and ``donors[i, t]`` the donor
    for the t-th visited subset of individual i. Subsets flagged in ``skip``
    (the one covering every location) are passed over. Returns the offspring
    arrays and the number of fitness evaluations spent.
    """
    n_pop, ell = pop_codes.shape
    out_codes = pop_codes.copy()
    out_consts = pop_consts.copy()
    out_fit = fitness.copy()
    out_a = scale_a.copy()
    out_b = scale_b.copy()
    buf = np.empty((ell, XT.shape[1]))
    mask_b = np.empty(ell, dtype=np.bool_)
    mask_o = np.empty(ell, dtype=np.bool_)
    evaluations = 0
    for i in range(n_pop):
        o_codes = out_codes[i]
        o_consts = out_consts[i]
        b_codes = pop_codes[i].copy()
        b_consts = pop_consts[i].copy()
        f_b = fitness[i]
        a_b = scale_a[i]
        s_b = scale_b[i]
        active_mask(b_codes, arities, children, mask_b)
        for t in range(perms.shape[1]):
            s = perms[i, t]
            if skip[s]:
                continue
            d = donors[i, t]
            lo = fos_offsets[s]
            hi = fos_offsets[s + 1]
            for q in range(lo, hi):
                p = fos_members[q]
                o_codes[p] = pop_codes[d, p]
                o_consts[p] = pop_consts[d, p]
            active_mask(o_codes, arities, children, mask_o)
            if not _changed(b_codes, b_consts, o_codes, o_consts, mask_b, mask_o):
                for q in range(lo, hi):
                    p = fos_members[q]
                    b_codes[p] = o_codes[p]
                    b_consts[p] = o_consts[p]
                continue
            f_o, a_o, s_o = template_fitness(o_codes, o_consts, kinds, args,
                                             arities, children, XT, y, buf)
            evaluations += 1
            if f_o <= f_b:
                for q in range(lo, hi):
                    p = fos_members[q]
                    b_codes[p] = o_codes[p]
                    b_consts[p] = o_consts[p]
                f_b = f_o
                a_b = a_o
                s_b = s_o
                mask_b[:] = mask_o
            else:
                for q in range(lo, hi):
                    p = fos_members[q]
                    o_codes[p] = b_codes[p]
                    o_consts[p] = b_consts[p]
        out_fit[i] = f_b
        out_a[i] = a_b
        out_b[i] = s_b
    return out_codes, out_consts, out_fit, out_a, out_b, evaluations


@njit(cache=True)
def evaluate_population(pop_codes, pop_consts, kinds, args, arities, children, XT, y):
    n_pop, ell = pop_codes.shape
    buf = np.empty((ell, XT.shape[1]))
    fit = np.empty(n_pop)
    sa = np.empty(n_pop)
    sb = np.empty(n_pop)
    for i in range(n_pop):
        f, a, b = template_fitness(pop_codes[i], pop_consts[i], kinds, args,
                                   arities, children, XT, y, buf)
        fit[i] = f
        sa[i] = a
        sb[i] = b
    return fit, sa, sb


@njit(cache=True)
def prefix_fitness(codes, consts, kinds, args, arities, XT, y):
    buf = np.empty((codes.shape[0], XT.shape[1]))
    out = eval_prefix(codes, consts, kinds, args, arities, XT, buf)
    return scaled_mse(y, out)
