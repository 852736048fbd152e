"""Compiled hot loops: losses, analytic gradients, lazy AdamW and whole passes.

Everything here works on raw float64 arrays and integer index arrays that
the Python side prepares for one edge.  Context vectors are addressed
through *slots*: ``slot_rows[s]`` is the row of the context table that slot
``s`` refers to, so repeated (node, relation) pairs share one gradient
accumulator and receive exactly one optimizer update.

Endpoint arrays have length 2 (position 0 is the source ``u``, 1 is ``v``).
``step_src``/``neg_src`` say which endpoint's target embedding a
propagation step or a negative sample pairs with.
"""

import math

import numpy as np
from numba import njit

from .rng import fill_uniform, next_double

E = math.e


@njit(cache=True)
def sigmoid(x):
    if x >= 0.0:
        return 1.0 / (1.0 + math.exp(-x))
    z = math.exp(x)
    return z / (1.0 + z)


@njit(cache=True)
def log_sigmoid(x):
    if x >= 0.0:
        return -math.log1p(math.exp(-x))
    return x - math.log1p(math.exp(x))


@njit(cache=True)
def decay(x):
    return 1.0 / math.log(E + x)


@njit(cache=True)
def decay_slope(x):
    lg = math.log(E + x)
    return -1.0 / ((E + x) * lg * lg)


@njit(cache=True)
def forward_backward(h_long, h_short, contexts, alpha,
                     nodes, node_types, deltas, slot_rows, own_slots,
                     step_src, step_slot, step_coef, neg_src, neg_slot,
                     g_long, g_short, g_ctx, g_alpha, out):
    """Fill gradient buffers for one edge and write losses into ``out``.

    ``out`` receives ``[L_inter, L_prop, L_neg, decay_u, decay_v]``.
    ``g_long``/``g_short``/``g_alpha`` have one row per endpoint (they are
    not merged when both endpoints are the same node or share a type);
    ``g_ctx`` has one row per slot.
    """
    d = h_long.shape[1]
    hstar = np.empty((2, d))
    grad_star = np.zeros((2, d))
    sig_alpha = np.empty(2)
    for x in range(2):
        node = nodes[x]
        sig_alpha[x] = sigmoid(alpha[node_types[x], 0])
        gx = decay(sig_alpha[x] * deltas[x])
        out[3 + x] = gx
        for j in range(d):
            hstar[x, j] = h_long[node, j] + h_short[node, j] * gx
    for s in range(g_ctx.shape[0]):
        for j in range(d):
            g_ctx[s, j] = 0.0

    # interaction between the two relation-specific final embeddings
    cu = slot_rows[own_slots[0]]
    cv = slot_rows[own_slots[1]]
    dot = 0.0
    for j in range(d):
        dot += 0.25 * (hstar[0, j] + contexts[cu, j]) * (hstar[1, j] + contexts[cv, j])
    out[0] = -log_sigmoid(dot)
    a = 0.5 * (sigmoid(dot) - 1.0)
    su = own_slots[0]
    sv = own_slots[1]
    for j in range(d):
        fu = 0.5 * (hstar[0, j] + contexts[cu, j])
        fv = 0.5 * (hstar[1, j] + contexts[cv, j])
        grad_star[0, j] += a * fv
        g_ctx[su, j] += a * fv
        grad_star[1, j] += a * fu
        g_ctx[sv, j] += a * fu

    # propagation: influenced contexts against the attenuated target embedding
    l_prop = 0.0
    for i in range(step_src.shape[0]):
        x = step_src[i]
        s = step_slot[i]
        row = slot_rows[s]
        coef = step_coef[i]
        y = 0.0
        for j in range(d):
            y += contexts[row, j] * hstar[x, j]
        y *= coef
        l_prop -= log_sigmoid(y)
        b = (sigmoid(y) - 1.0) * coef
        for j in range(d):
            g_ctx[s, j] += b * hstar[x, j]
            grad_star[x, j] += b * contexts[row, j]
    out[1] = l_prop

    # negative samples pushed away from the target embeddings
    l_neg = 0.0
    for i in range(neg_src.shape[0]):
        x = neg_src[i]
        s = neg_slot[i]
        row = slot_rows[s]
        w = 0.0
        for j in range(d):
            w += contexts[row, j] * hstar[x, j]
        l_neg -= log_sigmoid(-w)
        c = sigmoid(w)
        for j in range(d):
            g_ctx[s, j] += c * hstar[x, j]
            grad_star[x, j] += c * contexts[row, j]
    out[2] = l_neg

    # chain rule through h* = h_long + h_short * g(sigmoid(alpha) * delta)
    for x in range(2):
        node = nodes[x]
        gx = out[3 + x]
        proj = 0.0
        for j in range(d):
            g_long[x, j] = grad_star[x, j]
            g_short[x, j] = gx * grad_star[x, j]
            proj += grad_star[x, j] * h_short[node, j]
        sa = sig_alpha[x]
        g_alpha[x, 0] = proj * decay_slope(sa * deltas[x]) * deltas[x] * sa * (1.0 - sa)


@njit(cache=True)
def adam_row(p, m, v, g, lr, beta1, beta2, eps, weight_decay, bc1, bc2):
    for j in range(p.shape[0]):
        p[j] -= lr * weight_decay * p[j]
        m[j] = beta1 * m[j] + (1.0 - beta1) * g[j]
        v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j]
        p[j] -= lr * (m[j] / bc1) / (math.sqrt(v[j] / bc2) + eps)


@njit(cache=True)
def adam_rows(param, m, v, rows, grads, lr, beta1, beta2, eps, weight_decay, step):
    """Lazy AdamW: only ``rows`` (assumed unique) and their moments change."""
    bc1 = 1.0 - beta1 ** step
    bc2 = 1.0 - beta2 ** step
    for i in range(rows.shape[0]):
        r = rows[i]
        adam_row(param[r], m[r], v[r], grads[i], lr, beta1, beta2, eps, weight_decay, bc1, bc2)


@njit(cache=True)
def _all_finite(a):
    for x in a.ravel():
        if not np.isfinite(x):
            return False
    return True


@njit(cache=True)
def train_step(h_long, h_short, contexts, alpha,
               m_long, v_long, m_short, v_short, m_ctx, v_ctx, m_alpha, v_alpha,
               nodes, node_types, deltas, slot_rows, own_slots,
               step_src, step_slot, step_coef, neg_src, neg_slot,
               lr, beta1, beta2, eps, weight_decay, step, out):
    """Forward, backward, decay commit and optimizer update for one edge.

    Returns False (leaving every parameter untouched) if any loss or
    gradient is non-finite.
    """
    d = h_long.shape[1]
    g_long = np.empty((2, d))
    g_short = np.empty((2, d))
    g_alpha = np.empty((2, 1))
    g_ctx = np.empty((slot_rows.shape[0], d))
    forward_backward(h_long, h_short, contexts, alpha,
                     nodes, node_types, deltas, slot_rows, own_slots,
                     step_src, step_slot, step_coef, neg_src, neg_slot,
                     g_long, g_short, g_ctx, g_alpha, out)
    if not (_all_finite(out) and _all_finite(g_long) and _all_finite(g_short)
            and _all_finite(g_ctx) and _all_finite(g_alpha)):
        return False

    bc1 = 1.0 - beta1 ** step
    bc2 = 1.0 - beta2 ** step
    n_nodes = 2
    if nodes[0] == nodes[1]:
        n_nodes = 1
        for j in range(d):
            g_long[0, j] += g_long[1, j]
            g_short[0, j] += g_short[1, j]
    for x in range(n_nodes):
        node = nodes[x]
        gx = out[3 + x]
        # the elapsed interval is about to be forgotten, so bake the decay in
        for j in range(d):
            h_short[node, j] *= gx
        adam_row(h_long[node], m_long[node], v_long[node], g_long[x],
                 lr, beta1, beta2, eps, weight_decay, bc1, bc2)
        adam_row(h_short[node], m_short[node], v_short[node], g_short[x],
                 lr, beta1, beta2, eps, weight_decay, bc1, bc2)

    n_types = 2
    if node_types[0] == node_types[1]:
        n_types = 1
        g_alpha[0, 0] += g_alpha[1, 0]
    for x in range(n_types):
        t = node_types[x]
        adam_row(alpha[t], m_alpha[t], v_alpha[t], g_alpha[x],
                 lr, beta1, beta2, eps, weight_decay, bc1, bc2)

    for s in range(slot_rows.shape[0]):
        r = slot_rows[s]
        adam_row(contexts[r], m_ctx[r], v_ctx[r], g_ctx[s],
                 lr, beta1, beta2, eps, weight_decay, bc1, bc2)
    return True


# -- whole training passes ------------------------------------------------------
#
# The functions below mirror GraphStore.sample_neighbor, NoiseTable.sample,
# sampler.sample_influenced_graph and Supa.prepare_edge draw for draw, so a
# pass run here leaves exactly the state the per-edge Python path would.

PASS_DONE = 0
PASS_NEED_ROOM = 1
PASS_NON_FINITE = 2

# layout of the ``counters`` array shared with the caller
C_NEXT, C_N_CTX, C_STEP, C_LOOKUPS, C_SLOTS, C_CLAMPED, C_SHORT_NEG = range(7)


@njit(cache=True)
def draw_neighbor(hop_ptr, hop_entries, timestamp, c, idx, until, rng):
    """Uniform draw among entries of ``idx`` that satisfy hop constraint ``c``
    and are no newer than ``until``; returns the entry index or -1.

    ``hop_entries[hop_ptr[c, idx]:hop_ptr[c, idx + 1]]`` lists the qualifying
    entries in ascending time, so the cut-off is a binary search.
    """
    lo = hop_ptr[c, idx]
    a = lo
    b = hop_ptr[c, idx + 1]
    while a < b:
        mid = (a + b) // 2
        if timestamp[hop_entries[mid]] > until:
            b = mid
        else:
            a = mid + 1
    n = a - lo
    if n == 0:
        return -1
    return hop_entries[lo + int(next_double(rng) * n)]


@njit(cache=True)
def draw_negatives(type_ptr, noise_items, noise_cum, node_weight, node_type,
                   want_type, n, u, v, rng, out):
    """Degree**0.75 draws of type ``want_type`` excluding ``u`` and ``v``.

    Writes into ``out`` and returns how many were drawn.
    """
    lo = type_ptr[want_type]
    hi = type_ptr[want_type + 1]
    if n <= 0 or hi == lo:
        return 0
    total = noise_cum[hi - 1]
    excluded = 0.0
    if node_type[u] == want_type:
        excluded += node_weight[u]
    if v != u and node_type[v] == want_type:
        excluded += node_weight[v]
    if total <= 0.0 or total - excluded <= total * 1e-12:
        return 0
    got = 0
    tries = 0
    while got < n:
        tries += 1
        if tries > 1000 * n:
            break
        x = next_double(rng) * total
        a = lo
        b = hi
        while a < b:
            mid = (a + b) // 2
            if x < noise_cum[mid]:
                b = mid
            else:
                a = mid + 1
        if a > hi - 1:
            a = hi - 1
        item = noise_items[a]
        if item == u or item == v:
            continue
        out[got] = item
        got += 1
    return got


@njit(cache=True)
def _slot(node, rel, ctx_index, ctx_keys, contexts, m_ctx, v_ctx, node_hash, seed, half,
          slot_rows, n_slots, counters):
    """Slot of (node, rel) for the current edge, allocating the context if needed."""
    row = ctx_index[node, rel]
    if row < 0:
        row = counters[C_N_CTX]
        counters[C_N_CTX] = row + 1
        fill_uniform(seed, node_hash[node], 1, rel, half, contexts[row])
        for j in range(contexts.shape[1]):
            m_ctx[row, j] = 0.0
            v_ctx[row, j] = 0.0
        ctx_keys[row, 0] = node
        ctx_keys[row, 1] = rel
        ctx_index[node, rel] = row
    for s in range(n_slots):
        if slot_rows[s] == row:
            return s
    slot_rows[n_slots] = row
    return n_slots


@njit(cache=True)
def train_pass(h_long, h_short, contexts, alpha,
               m_long, v_long, m_short, v_short, m_ctx, v_ctx, m_alpha, v_alpha,
               ctx_index, ctx_keys, node_hash, seed,
               neighbor, edge_type, timestamp, node_type, last_active,
               type_ptr, noise_items, noise_cum, node_weight,
               head_ptr, head_schema, schema_ptr, hop_constraint, hop_ptr, hop_entries,
               eu, ev, er, et,
               walks, walk_length, n_neg, tau,
               lr, beta1, beta2, eps, weight_decay,
               rng, counters, losses):
    """Train on edges ``counters[C_NEXT]:`` in order, one optimizer step each.

    Stops early with PASS_NEED_ROOM when the context table might overflow
    (the caller grows it and calls again) and with PASS_NON_FINITE at the
    offending edge, which is then left untrained.
    """
    d = h_long.shape[1]
    half = 0.5 / d
    max_slots = 2 + 2 * walks * max(walk_length - 1, 0) + 2 * n_neg
    slot_rows = np.empty(max_slots, dtype=np.int64)
    step_src = np.empty(max_slots, dtype=np.int64)
    step_slot = np.empty(max_slots, dtype=np.int64)
    step_coef = np.empty(max_slots)
    neg_src = np.empty(2 * n_neg, dtype=np.int64)
    neg_slot = np.empty(2 * n_neg, dtype=np.int64)
    negs = np.empty(max(n_neg, 1), dtype=np.int64)
    nodes = np.empty(2, dtype=np.int64)
    types = np.empty(2, dtype=np.int64)
    deltas = np.empty(2)
    own = np.empty(2, dtype=np.int64)
    out = np.empty(5)
    # entries visited per walk, and the walk's source endpoint
    walk_entries = np.empty((2 * walks, max(walk_length - 1, 1)), dtype=np.int64)
    walk_len = np.empty(2 * walks, dtype=np.int64)
    walk_src = np.empty(2 * walks, dtype=np.int64)

    for i in range(counters[C_NEXT], eu.shape[0]):
        if counters[C_N_CTX] + max_slots > contexts.shape[0]:
            counters[C_NEXT] = i
            return PASS_NEED_ROOM
        u = eu[i]
        v = ev[i]
        r = er[i]
        t = et[i]
        nodes[0] = u
        nodes[1] = v
        types[0] = node_type[u]
        types[1] = node_type[v]

        # walks from u then from v, each on a uniformly drawn eligible schema
        n_walks = 0
        for x in range(2):
            start = nodes[x]
            h = types[x]
            n_eligible = head_ptr[h + 1] - head_ptr[h]
            if n_eligible == 0 or walks == 0:
                continue
            for _ in range(walks):
                if n_eligible == 1:
                    sid = head_schema[head_ptr[h]]
                else:
                    sid = head_schema[head_ptr[h] + int(next_double(rng) * n_eligible)]
                period = schema_ptr[sid + 1] - schema_ptr[sid]
                node = start
                n_steps = 0
                for k in range(walk_length - 1):
                    hop = schema_ptr[sid] + k % period
                    counters[C_LOOKUPS] += 1
                    entry = draw_neighbor(hop_ptr, hop_entries, timestamp, hop_constraint[hop],
                                          node, t, rng)
                    if entry < 0:
                        break
                    walk_entries[n_walks, n_steps] = entry
                    n_steps += 1
                    node = neighbor[entry]
                walk_len[n_walks] = n_steps
                walk_src[n_walks] = x
                n_walks += 1

        n_neg_u = draw_negatives(type_ptr, noise_items, noise_cum, node_weight, node_type,
                                 types[1], n_neg, u, v, rng, negs)
        if n_neg_u < n_neg:
            counters[C_SHORT_NEG] += 1
        for k in range(n_neg_u):
            neg_slot[k] = negs[k]
        n_neg_v = draw_negatives(type_ptr, noise_items, noise_cum, node_weight, node_type,
                                 types[0], n_neg, u, v, rng, negs)
        if n_neg_v < n_neg:
            counters[C_SHORT_NEG] += 1
        for k in range(n_neg_v):
            neg_slot[n_neg_u + k] = negs[k]

        for x in range(2):
            delta = t - last_active[nodes[x]]
            if delta < 0.0:
                counters[C_CLAMPED] += 1
                delta = 0.0
            deltas[x] = delta

        # slots in the same order the Python path allocates them
        n_slots = 0
        for x in range(2):
            s = _slot(nodes[x], r, ctx_index, ctx_keys, contexts, m_ctx, v_ctx, node_hash, seed,
                      half, slot_rows, n_slots, counters)
            if s == n_slots:
                n_slots += 1
            own[x] = s
        n_prop = 0
        for w in range(n_walks):
            coef = 1.0
            for k in range(walk_len[w]):
                entry = walk_entries[w, k]
                age = t - timestamp[entry]
                if age > tau:
                    break
                coef /= math.log(E + age)
                s = _slot(neighbor[entry], edge_type[entry], ctx_index, ctx_keys, contexts, m_ctx,
                          v_ctx, node_hash, seed, half, slot_rows, n_slots, counters)
                if s == n_slots:
                    n_slots += 1
                step_src[n_prop] = walk_src[w]
                step_slot[n_prop] = s
                step_coef[n_prop] = coef
                n_prop += 1
        n_negs = n_neg_u + n_neg_v
        for k in range(n_negs):
            s = _slot(neg_slot[k], r, ctx_index, ctx_keys, contexts, m_ctx, v_ctx, node_hash, seed,
                      half, slot_rows, n_slots, counters)
            if s == n_slots:
                n_slots += 1
            neg_slot[k] = s
            neg_src[k] = 0 if k < n_neg_u else 1
        counters[C_SLOTS] += n_slots

        step = counters[C_STEP] + 1
        ok = train_step(h_long, h_short, contexts, alpha,
                        m_long, v_long, m_short, v_short, m_ctx, v_ctx, m_alpha, v_alpha,
                        nodes, types, deltas, slot_rows[:n_slots], own,
                        step_src[:n_prop], step_slot[:n_prop], step_coef[:n_prop],
                        neg_src[:n_negs], neg_slot[:n_negs],
                        lr, beta1, beta2, eps, weight_decay, step, out)
        if not ok:
            counters[C_NEXT] = i
            return PASS_NON_FINITE
        counters[C_STEP] = step
        last_active[u] = t
        last_active[v] = t
        losses[i, 0] = out[0]
        losses[i, 1] = out[1]
        losses[i, 2] = out[2]
    counters[C_NEXT] = eu.shape[0]
    return PASS_DONE
