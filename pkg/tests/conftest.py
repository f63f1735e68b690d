import numpy as np
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ecos import FeatureDataset

finite32 = st.floats(
    min_value=-1e5, max_value=1e5, allow_nan=False, allow_infinity=False, width=32
)


@st.composite
def datasets(draw, min_n=0, max_n=12, min_dim=1, max_dim=5, with_labels=None, with_domains=None):
    n = draw(st.integers(min_n, max_n))
    dim = draw(st.integers(min_dim, max_dim))
    data = draw(arrays(np.float32, (n, dim), elements=finite32))
    if with_labels is None:
        with_labels = draw(st.booleans())
    if with_domains is None:
        with_domains = draw(st.booleans())
    labels = (
        draw(arrays(np.int32, (n,), elements=st.integers(0, 9))) if with_labels else None
    )
    domains = (
        draw(arrays(np.int32, (n,), elements=st.integers(0, 4))) if with_domains else None
    )
    return FeatureDataset(data, labels=labels, domains=domains)


def naive_min_dist(queries, refs):
    """Sequential-accumulation double loop; the independent distance oracle."""
    q = np.asarray(queries, dtype=np.float64)
    r = np.asarray(refs, dtype=np.float64)
    dists = np.empty(q.shape[0])
    args = np.empty(q.shape[0], dtype=np.int64)
    for i in range(q.shape[0]):
        best_d, best_j = None, None
        for j in range(r.shape[0]):
            s = 0.0
            for k in range(q.shape[1]):
                diff = q[i, k] - r[j, k]
                s += diff * diff
            if best_d is None or s < best_d:
                best_d, best_j = s, j
        dists[i], args[i] = best_d, best_j
    return dists, args
