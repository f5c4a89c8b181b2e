"""
Keyed random streams
====================

Every chain in a run draws from its own stream, named by
``(master_seed, purpose, level, replicate)``. This tour shows replay,
seeking and the prefix property that coupled chains depend on.
"""

# %%
# Deriving streams
# ----------------
import numpy as np

from mlmcmc.rng import Purpose, derive_stream

s = derive_stream(42, Purpose.LEVEL_PAIR, level=3, replicate=0)
print("first uniforms:", s.uniforms(3), "position:", s.position)

# %%
# Replay and seek
# ---------------
# ``(key, position)`` pins down every later draw, so a stream can be
# rewound or jumped forward without re-drawing.
again = s.replay(0).uniforms(3)
print("replayed equal:", np.array_equal(again, derive_stream(42, "level_pair", 3).uniforms(3)))
far = s.replay(1_000_000).uniform()
print("draw #1,000,000:", far)

# %%
# Prefix property
# ---------------
# Normals are made one uniform at a time, so a short Gaussian vector is the
# start of a longer one drawn from the same position.
long = derive_stream(42, Purpose.LEVEL0).normals(16)
short = derive_stream(42, Purpose.LEVEL0).normals(8)
print("prefix shared:", np.array_equal(long[:8], short))

# %%
# Independence comes from the key
# -------------------------------
a = derive_stream(42, Purpose.LEVEL_PAIR, 1).uniforms(100_000)
b = derive_stream(42, Purpose.LEVEL_PAIR, 2).uniforms(100_000)
print("corr(level 1, level 2): %.4f" % np.corrcoef(a, b)[0, 1])
