"""Independent reference implementations used as test oracles.

Everything here is deliberately written the slow, obvious way (explicit
loops, no shared code with the package) so it can stand as an independent
check of the fast paths.
"""

from __future__ import annotations

import numpy as np

from tristream import tensor as T
from tristream.tensor import Tape, Tensor, backward


def finite_difference(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar function of one array."""
    x = x.astype(np.float64).copy()
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * h)
    return grad


def max_rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-6)
    return float((np.abs(analytic - numeric) / denom).max())


def gradcheck(build, arrays: dict[str, np.ndarray], h: float = 1e-5, tol: float = 1e-4) -> float:
    """Compare tape gradients of ``build`` against central differences.

    ``build`` maps a dict of Tensors to a scalar Tensor; the same function
    is re-evaluated (without a tape) for the numeric estimates. Returns the
    worst relative error across all inputs.
    """
    with Tape() as tape:
        tensors = {k: Tensor(v, requires_grad=True) for k, v in arrays.items()}
        loss = build(tensors)
        backward(loss, tape)

    worst = 0.0
    for key, base in arrays.items():
        def f(perturbed, key=key):
            ts = {k: Tensor(perturbed if k == key else v) for k, v in arrays.items()}
            return build(ts).item()

        numeric = finite_difference(f, np.asarray(base, dtype=np.float64), h=h)
        analytic = tensors[key].grad
        assert analytic is not None, f"no gradient reached input {key!r}"
        worst = max(worst, max_rel_error(analytic, numeric))
    assert worst < tol, f"gradient mismatch: max rel error {worst:.3e} >= {tol:.0e}"
    return worst


def conv2d_loops(x: np.ndarray, k: np.ndarray, stride: int, padding: int) -> np.ndarray:
    """Direct nested-loop convolution, channels-last."""
    h, w, cin = x.shape
    kh, kw, _, cout = k.shape
    xp = np.zeros((h + 2 * padding, w + 2 * padding, cin))
    xp[padding : padding + h, padding : padding + w] = x
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (w + 2 * padding - kw) // stride + 1
    out = np.zeros((ho, wo, cout))
    for i in range(ho):
        for j in range(wo):
            for co in range(cout):
                acc = 0.0
                for a in range(kh):
                    for b in range(kw):
                        for ci in range(cin):
                            acc += xp[i * stride + a, j * stride + b, ci] * k[a, b, ci, co]
                out[i, j, co] = acc
    return out


def cmc_map_bruteforce(sims: np.ndarray, q_ids, g_ids, max_rank: int):
    """CMC curve and mAP recomputed from scratch with explicit scans.

    Ranking ties break by ascending gallery index (stable sort on -sim).
    Queries without a relevant gallery item are skipped for mAP.
    """
    nq, ng = sims.shape
    cmc_hits = [0] * max_rank
    aps = []
    for qi in range(nq):
        order = sorted(range(ng), key=lambda gi: (-sims[qi, gi], gi))
        ranked = [g_ids[gi] for gi in order]
        first = None
        for pos, gid in enumerate(ranked):
            if gid == q_ids[qi]:
                first = pos
                break
        if first is not None:
            for k in range(max_rank):
                if first <= min(k, ng - 1):
                    cmc_hits[k] += 1
        relevant = [pos for pos, gid in enumerate(ranked, start=1) if gid == q_ids[qi]]
        if relevant:
            total = 0.0
            for idx, pos in enumerate(relevant, start=1):
                total += idx / pos
            aps.append(total / len(relevant))
    cmc = np.array([h / nq for h in cmc_hits])
    if not aps:
        return cmc, None
    mean_ap = 0.0
    for ap in aps:
        mean_ap += ap
    return cmc, mean_ap / len(aps)


def nearest_centroid(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    """Exhaustive nearest-centroid assignment (lowest index on ties)."""
    out = np.zeros(len(points), dtype=np.int64)
    for i, p in enumerate(points):
        best, best_d = 0, np.inf
        for c in range(len(centroids)):
            d = float(((p - centroids[c]) ** 2).sum())
            if d < best_d:
                best, best_d = c, d
        out[i] = best
    return out


def build_stream_scalar(arrays: dict) -> "Tensor":
    """Scalar probe through stem -> two branches -> gmp/ae/gap heads.

    Exercises the full global-stream composite including adversarial
    erasing; used by gradient-check tests.
    """
    from tristream.heads import adversarial_erase, gap, gmp

    x = arrays["image"]
    stem = T.relu(T.add(T.conv2d(x, arrays["k_stem"], stride=2, padding=1), arrays["b_stem"]))
    f21 = T.relu(T.add(T.conv2d(stem, arrays["k_a"], stride=2, padding=1), arrays["b_a"]))
    f22 = T.relu(T.add(T.conv2d(stem, arrays["k_b"], stride=2, padding=1), arrays["b_b"]))
    v_gmp = gmp(f21)
    _, v_ae = adversarial_erase(f22)
    v_gap = gap(f22)
    combo = T.concat([v_gmp, v_ae, v_gap], axis=-1)
    return T.tsum(T.mul(combo, combo))
