"""Why concatenating two normalized embeddings averages their similarities.

Run: python3 demos/01_score_identity.py
"""

import numpy as np

from mafin.core import EmbeddingVector, cosine, dot
from mafin.scoring import lambda_mafin_embed, lambda_weights, mafin_embed


def unit(rng, d):
    v = rng.standard_normal(d)
    return EmbeddingVector(v / np.linalg.norm(v))


rng = np.random.default_rng(0)
bq, bx = unit(rng, 8), unit(rng, 8)  # black-box query / passage
aq, ax = unit(rng, 4), unit(rng, 4)  # augmenting encoder query / passage

# Concatenate and rescale by 1/sqrt(2): the cosine of the joint vectors is
# exactly the mean of the two component similarities.
zq, zx = mafin_embed(bq, aq), mafin_embed(bx, ax)
print(f"black-box sim      {dot(bq, bx):+.6f}")
print(f"augmenting sim     {dot(aq, ax):+.6f}")
print(f"joint cosine       {cosine(zq, zx):+.6f}")
print(f"mean of the two    {(dot(bq, bx) + dot(aq, ax)) / 2:+.6f}")

# Leaving the augmenting vector unnormalized lets its norm act as a learned
# per-text weight between the two similarities.
print("\nnorm a  norm b   w_bb    w_aug")
for a, b in [(0.0, 0.0), (1.0, 1.0), (2.0, 0.5), (3.0, 3.0)]:
    l1, l2 = lambda_weights(a, b)
    zq = lambda_mafin_embed(bq, EmbeddingVector(a * aq.values))
    zx = lambda_mafin_embed(bx, EmbeddingVector(b * ax.values))
    assert abs(cosine(zq, zx) - (l1 * dot(bq, bx) + l2 * dot(aq, ax))) < 1e-12
    print(f"{a:6.1f} {b:6.1f}   {l1:.3f}  {l2:.3f}")
