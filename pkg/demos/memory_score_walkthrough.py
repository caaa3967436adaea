"""
Scoring a sample against a normal feature memory
================================================

A toy two-dimensional walk through the memory score: which feature row is
picked as representative, which memory row it is matched to, and how the
neighbourhood of that memory row shrinks the raw distance.
"""

import numpy as np

from nfmbench import MemoryBank, memory_score, select_representative

# A dense cluster of normal features near the origin plus one isolated normal
# far out on the x axis.
rng = np.random.default_rng(0)
dense = rng.normal(0.0, 0.1, size=(30, 2))
lonely = np.array([[4.0, 0.0]])
memory = np.vstack([dense, lonely]).astype(np.float32)
bank = MemoryBank(memory, [(f"n{i}", 0) for i in range(len(memory))])

###############################################################################
# A sample is a block of feature rows. The representative row is the one whose
# nearest memory row is farthest away.
sample = np.array([[0.05, 0.0], [1.5, 0.0]], dtype=np.float32)
match = select_representative(sample, bank)
print("representative row:", match.x_star_row, "matched memory row:", match.m_star)
print("raw distance d*: %.4f" % match.d_star)

###############################################################################
# The score discounts d* by how the representative row sits among the b
# neighbours of its match. In the dense cluster those neighbours are about as
# far from the query as the match itself, so g is close to (1 - 1/b) d*: the
# discount is largest for small b.
for b in (2, 3, 5, 10):
    print("b=%2d  g=%.4f" % (b, memory_score(sample, bank, b)))

###############################################################################
# Next to the lonely normal, the other neighbours of the match lie back in the
# dense cluster, far from the query, so the score stays close to d*. Next to
# the dense cluster a similar raw distance loses about a third.
near_lonely = np.array([[4.0, 1.0]], dtype=np.float32)
near_dense = np.array([[0.0, 1.0]], dtype=np.float32)
for name, s in (("next to the lonely normal", near_lonely), ("next to the dense cluster", near_dense)):
    m = select_representative(s, bank)
    print("%-26s d*=%.3f  g=%.3f" % (name, m.d_star, memory_score(s, bank, b=3)))

###############################################################################
# A row that is already stored in memory always scores exactly zero.
print("stored row scores", memory_score(memory[:1], bank, b=3))
