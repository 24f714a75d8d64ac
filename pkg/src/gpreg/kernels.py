"""Hot numeric kernels.

Every kernel exists twice: a numba version (``*_nb``) and a vectorised numpy
version (``*_np``). The public names point at one or the other depending on
:data:`gpreg._accel.USE_JIT`. Both versions follow the same arithmetic so
the two backends agree to rounding on every input.

Expression trees reach the kernels as flat postfix programs: an ``int8``
opcode array plus a parallel ``float64`` array holding constant values.
"""

import math

import numpy as np

from ._accel import USE_JIT, njit

OP_CONST = 0
OP_X = 1
OP_Y = 2
OP_E = 3
OP_ADD = 4
OP_SUB = 5
OP_MUL = 6
OP_DIV = 7
OP_POW = 8
OP_COS = 9
OP_SIN = 10
OP_ROTX = 11
OP_ROTY = 12
OP_RBF = 13
OP_IRBF = 14

OP_ARITY = np.array([0, 0, 0, 0, 2, 2, 2, 2, 2, 1, 1, 1, 1, 3, 3], dtype=np.int64)

CLAMP = 1e8
DIV_EPS = 1e-9
RBF_EPS = 1e-9
POW_EXP_LIMIT = 20.0


def max_stack_depth(ops):
    depth = 0
    peak = 0
    for op in ops:
        depth += 1 - OP_ARITY[op]
        peak = max(peak, depth)
    return peak


# ---------------------------------------------------------------------------
# postfix interpreter
# ---------------------------------------------------------------------------


@njit
def _clamp_nb(v):
    if v > CLAMP:
        return CLAMP
    if v < -CLAMP:
        return -CLAMP
    return v


@njit
def _pow_nb(a, b):
    a = abs(a)
    if b > POW_EXP_LIMIT:
        b = POW_EXP_LIMIT
    elif b < -POW_EXP_LIMIT:
        b = -POW_EXP_LIMIT
    if a == 0.0:
        if b > 0.0:
            return 0.0
        if b == 0.0:
            return 1.0
        return CLAMP
    return a**b


@njit
def _binary_nb(op, a, b):
    if op == OP_ADD:
        return a + b
    if op == OP_SUB:
        return a - b
    if op == OP_MUL:
        return a * b
    if op == OP_DIV:
        if abs(b) < DIV_EPS:
            return 1.0
        return a / b
    return _pow_nb(a, b)


@njit
def eval_program_nb(ops, consts, xs, ys, width, height, stack_size):
    """Op-major interpreter; slots that do not depend on (x, y) stay scalar."""
    n = xs.shape[0]
    depth = max(stack_size, 1)
    vec = np.empty((depth, n), dtype=np.float64)
    scal = np.zeros(depth, dtype=np.float64)
    is_scal = np.zeros(depth, dtype=np.bool_)
    cx = width / 2.0
    cy = height / 2.0
    sp = 0
    for k in range(ops.shape[0]):
        op = ops[k]
        if op == OP_CONST or op == OP_E:
            scal[sp] = consts[k] if op == OP_CONST else math.e
            is_scal[sp] = True
            sp += 1
        elif op == OP_X or op == OP_Y:
            src = xs if op == OP_X else ys
            for i in range(n):
                vec[sp, i] = src[i]
            is_scal[sp] = False
            sp += 1
        elif op == OP_COS or op == OP_SIN:
            s = sp - 1
            if is_scal[s]:
                scal[s] = _clamp_nb(math.cos(scal[s]) if op == OP_COS else math.sin(scal[s]))
            elif op == OP_COS:
                for i in range(n):
                    vec[s, i] = math.cos(vec[s, i])
            else:
                for i in range(n):
                    vec[s, i] = math.sin(vec[s, i])
        elif op == OP_ROTX or op == OP_ROTY:
            s = sp - 1
            if is_scal[s]:
                c = math.cos(scal[s])
                sn = math.sin(scal[s])
                if op == OP_ROTX:
                    for i in range(n):
                        vec[s, i] = _clamp_nb((xs[i] - cx) * c - (ys[i] - cy) * sn + cx)
                else:
                    for i in range(n):
                        vec[s, i] = _clamp_nb((ys[i] - cy) * c + (xs[i] - cx) * sn + cy)
                is_scal[s] = False
            else:
                for i in range(n):
                    a = vec[s, i]
                    if op == OP_ROTX:
                        v = (xs[i] - cx) * math.cos(a) - (ys[i] - cy) * math.sin(a) + cx
                    else:
                        v = (ys[i] - cy) * math.cos(a) + (xs[i] - cx) * math.sin(a) + cy
                    vec[s, i] = _clamp_nb(v)
        elif op == OP_RBF or op == OP_IRBF:
            s1 = sp - 3
            s2 = sp - 2
            s3 = sp - 1
            for i in range(n):
                c1 = scal[s1] if is_scal[s1] else vec[s1, i]
                c2 = scal[s2] if is_scal[s2] else vec[s2, i]
                c3 = scal[s3] if is_scal[s3] else vec[s3, i]
                r = math.sqrt((xs[i] - c1) * (xs[i] - c1) + (ys[i] - c2) * (ys[i] - c2) + c3 * c3)
                if op == OP_RBF:
                    v = r
                elif r < RBF_EPS:
                    v = CLAMP
                else:
                    v = 1.0 / r
                vec[s1, i] = _clamp_nb(v)
            is_scal[s1] = False
            sp -= 2
        else:
            sa = sp - 2
            sb = sp - 1
            if is_scal[sa] and is_scal[sb]:
                scal[sa] = _clamp_nb(_binary_nb(op, scal[sa], scal[sb]))
            elif is_scal[sa]:
                a = scal[sa]
                for i in range(n):
                    vec[sa, i] = _clamp_nb(_binary_nb(op, a, vec[sb, i]))
                is_scal[sa] = False
            elif is_scal[sb]:
                b = scal[sb]
                for i in range(n):
                    vec[sa, i] = _clamp_nb(_binary_nb(op, vec[sa, i], b))
            else:
                for i in range(n):
                    vec[sa, i] = _clamp_nb(_binary_nb(op, vec[sa, i], vec[sb, i]))
            sp -= 1
    out = np.empty(n, dtype=np.float64)
    if is_scal[0]:
        for i in range(n):
            out[i] = scal[0]
    else:
        for i in range(n):
            out[i] = vec[0, i]
    return out


def eval_program_np(ops, consts, xs, ys, width, height, stack_size=0):
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    cx = width / 2.0
    cy = height / 2.0
    stack = []
    with np.errstate(all="ignore"):
        for k, op in enumerate(ops):
            if op == OP_CONST:
                v = np.full(xs.shape, consts[k])
            elif op == OP_X:
                v = xs.copy()
            elif op == OP_Y:
                v = ys.copy()
            elif op == OP_E:
                v = np.full(xs.shape, math.e)
            elif OP_ARITY[op] == 1:
                a = stack.pop()
                if op == OP_COS:
                    v = np.cos(a)
                elif op == OP_SIN:
                    v = np.sin(a)
                elif op == OP_ROTX:
                    v = (xs - cx) * np.cos(a) - (ys - cy) * np.sin(a) + cx
                else:
                    v = (ys - cy) * np.cos(a) + (xs - cx) * np.sin(a) + cy
            elif OP_ARITY[op] == 3:
                c3 = stack.pop()
                c2 = stack.pop()
                c1 = stack.pop()
                r = np.sqrt((xs - c1) * (xs - c1) + (ys - c2) * (ys - c2) + c3 * c3)
                if op == OP_RBF:
                    v = r
                else:
                    v = np.where(r < RBF_EPS, CLAMP, 1.0 / np.where(r < RBF_EPS, 1.0, r))
            else:
                b = stack.pop()
                a = stack.pop()
                if op == OP_ADD:
                    v = a + b
                elif op == OP_SUB:
                    v = a - b
                elif op == OP_MUL:
                    v = a * b
                elif op == OP_DIV:
                    small = np.abs(b) < DIV_EPS
                    v = np.where(small, 1.0, a / np.where(small, 1.0, b))
                else:
                    base = np.abs(a)
                    ex = np.clip(b, -POW_EXP_LIMIT, POW_EXP_LIMIT)
                    zero = base == 0.0
                    v = np.power(np.where(zero, 1.0, base), ex)
                    v = np.where(zero, np.where(ex > 0, 0.0, np.where(ex == 0, 1.0, CLAMP)), v)
            stack.append(np.clip(v, -CLAMP, CLAMP))
    return stack[0]


# ---------------------------------------------------------------------------
# bilinear sampling
# ---------------------------------------------------------------------------


@njit
def _bilinear_at_nb(img, x, y):
    h, w = img.shape
    x0 = int(math.floor(x))
    y0 = int(math.floor(y))
    if x0 > w - 2:
        x0 = max(w - 2, 0)
    if y0 > h - 2:
        y0 = max(h - 2, 0)
    x1 = min(x0 + 1, w - 1)
    y1 = min(y0 + 1, h - 1)
    fx = x - x0
    fy = y - y0
    top = img[y0, x0] * (1.0 - fx) + img[y0, x1] * fx
    bottom = img[y1, x0] * (1.0 - fx) + img[y1, x1] * fx
    return top * (1.0 - fy) + bottom * fy


@njit
def bilinear_sample_nb(img, xs, ys):
    h, w = img.shape
    n = xs.shape[0]
    values = np.zeros(n, dtype=np.float64)
    inside = np.zeros(n, dtype=np.bool_)
    for i in range(n):
        x = xs[i]
        y = ys[i]
        if x >= 0.0 and x <= w - 1 and y >= 0.0 and y <= h - 1:
            inside[i] = True
            values[i] = _bilinear_at_nb(img, x, y)
    return values, inside


def bilinear_sample_np(img, xs, ys):
    h, w = img.shape
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    with np.errstate(invalid="ignore"):
        inside = (xs >= 0.0) & (xs <= w - 1) & (ys >= 0.0) & (ys <= h - 1)
    values = np.zeros(xs.shape, dtype=np.float64)
    x = xs[inside]
    y = ys[inside]
    x0 = np.minimum(np.floor(x).astype(np.int64), max(w - 2, 0))
    y0 = np.minimum(np.floor(y).astype(np.int64), max(h - 2, 0))
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = x - x0
    fy = y - y0
    f = img.astype(np.float64)
    top = f[y0, x0] * (1.0 - fx) + f[y0, x1] * fx
    bottom = f[y1, x0] * (1.0 - fx) + f[y1, x1] * fx
    values[inside] = top * (1.0 - fy) + bottom * fy
    return values, inside


# ---------------------------------------------------------------------------
# joint histogram and mutual information
# ---------------------------------------------------------------------------


@njit
def mapped_joint_histogram_nb(sensed_bins, ref, xs, ys, bin_width, n_bins):
    """Counts (sensed bin, interpolated reference bin) over in-raster samples.

    Returns ``(counts, n_inside, n_nonfinite)``.
    """
    h, w = ref.shape
    counts = np.zeros((n_bins, n_bins), dtype=np.int64)
    n_inside = 0
    n_nonfinite = 0
    for i in range(xs.shape[0]):
        x = xs[i]
        y = ys[i]
        if not (math.isfinite(x) and math.isfinite(y)):
            n_nonfinite += 1
            continue
        if x >= 0.0 and x <= w - 1 and y >= 0.0 and y <= h - 1:
            v = _bilinear_at_nb(ref, x, y)
            b = int(v // bin_width)
            if b > n_bins - 1:
                b = n_bins - 1
            counts[sensed_bins[i], b] += 1
            n_inside += 1
    return counts, n_inside, n_nonfinite


def mapped_joint_histogram_np(sensed_bins, ref, xs, ys, bin_width, n_bins):
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    finite = np.isfinite(xs) & np.isfinite(ys)
    values, inside = bilinear_sample_np(ref, np.where(finite, xs, -1.0), np.where(finite, ys, -1.0))
    ref_bins = np.minimum((values[inside] // bin_width).astype(np.int64), n_bins - 1)
    flat = sensed_bins[inside].astype(np.int64) * n_bins + ref_bins
    counts = np.bincount(flat, minlength=n_bins * n_bins).reshape(n_bins, n_bins)
    return counts.astype(np.int64), int(inside.sum()), int((~finite).sum())


@njit
def mutual_information_nb(counts):
    n_a, n_b = counts.shape
    total = 0
    row = np.zeros(n_a, dtype=np.int64)
    col = np.zeros(n_b, dtype=np.int64)
    for a in range(n_a):
        for b in range(n_b):
            c = counts[a, b]
            row[a] += c
            col[b] += c
            total += c
    if total == 0:
        return 0.0
    n = float(total)
    mi = 0.0
    for a in range(n_a):
        for b in range(n_b):
            c = counts[a, b]
            if c > 0:
                mi += (c / n) * math.log(c * n / (float(row[a]) * float(col[b])))
    return mi


def mutual_information_np(counts):
    counts = np.asarray(counts, dtype=np.int64)
    total = counts.sum()
    if total == 0:
        return 0.0
    n = float(total)
    row = counts.sum(axis=1).astype(np.float64)
    col = counts.sum(axis=0).astype(np.float64)
    a, b = np.nonzero(counts)
    c = counts[a, b].astype(np.float64)
    terms = (c / n) * np.log(c * n / (row[a] * col[b]))
    # sequential sum in row-major order, matching the compiled loop
    mi = 0.0
    for t in terms:
        mi += t
    return float(mi)


# ---------------------------------------------------------------------------
# forward splatting for renderings
# ---------------------------------------------------------------------------


@njit
def splat_nb(values, xs, ys, out_h, out_w):
    """Write ``values`` at rounded targets; later sources overwrite earlier ones."""
    out = np.zeros((out_h, out_w), dtype=np.uint8)
    mask = np.zeros((out_h, out_w), dtype=np.bool_)
    for i in range(values.shape[0]):
        x = xs[i]
        y = ys[i]
        if not (math.isfinite(x) and math.isfinite(y)):
            continue
        tx = math.floor(x + 0.5)
        ty = math.floor(y + 0.5)
        if tx < 0 or ty < 0 or tx >= out_w or ty >= out_h:
            continue
        out[int(ty), int(tx)] = values[i]
        mask[int(ty), int(tx)] = True
    return out, mask


def splat_np(values, xs, ys, out_h, out_w):
    out = np.zeros((out_h, out_w), dtype=np.uint8)
    mask = np.zeros((out_h, out_w), dtype=bool)
    with np.errstate(invalid="ignore"):
        tx = np.floor(np.asarray(xs, dtype=np.float64) + 0.5)
        ty = np.floor(np.asarray(ys, dtype=np.float64) + 0.5)
        keep = (tx >= 0) & (ty >= 0) & (tx < out_w) & (ty < out_h)
    src = np.flatnonzero(keep)
    if src.size == 0:
        return out, mask
    flat = ty[src].astype(np.int64) * out_w + tx[src].astype(np.int64)
    # last writer wins: first occurrence in the reversed order
    rev_flat = flat[::-1]
    targets, first = np.unique(rev_flat, return_index=True)
    winners = src[::-1][first]
    out.reshape(-1)[targets] = np.asarray(values)[winners]
    mask.reshape(-1)[targets] = True
    return out, mask


if USE_JIT:
    eval_program = eval_program_nb
    bilinear_sample = bilinear_sample_nb
    mapped_joint_histogram = mapped_joint_histogram_nb
    mutual_information_counts = mutual_information_nb
    splat = splat_nb
else:
    eval_program = eval_program_np
    bilinear_sample = bilinear_sample_np
    mapped_joint_histogram = mapped_joint_histogram_np
    mutual_information_counts = mutual_information_np
    splat = splat_np
