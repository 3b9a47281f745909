"""
Row-wise cross-view attention
=============================

Feeds two shifted feature maps through the attention primitives and shows
that the left-from-right map concentrates on the matching column.
"""
import torch

from segsr.attention import compute_attention, mean_subtract, valid_mask, warp

torch.manual_seed(0)
d = 2
base = torch.randn(1, 16, 1, 12 + d)
f_l = base[..., d:]
f_r = base[..., :12]  # right[c] == left[c - d]

# sharpen the scores so the map is nearly a permutation
maps = compute_attention(mean_subtract(f_l) * 3, mean_subtract(f_r) * 3)
m = maps.m_r_to_l[0, 0]
print("each row sums to one:", torch.allclose(m.sum(-1), torch.ones(12)))
# left column c matches right column c + d; the last d columns have no match
print("argmax column per left column:", m.argmax(-1).tolist()[: 12 - d])
print("expected c + d:               ", [c + d for c in range(12 - d)])

# left columns near the right border have no partner in the right view
v_l = valid_mask(maps.m_l_to_r)[0, 0]
print("left validity:", [round(float(x), 2) for x in v_l])

warped = warp(maps.m_r_to_l, f_r)
err = (warped - f_l)[..., : 12 - d].abs().max()
print("warp error on columns that have a match:", float(err))
