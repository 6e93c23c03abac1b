"""
Patch position codes
====================

The generator appends a binary code of each pixel's patch index to its
feature maps. This script prints the code table for a 2x2 and a 4x4 grid and
shows which code a few pixels of a 16x16 map receive.
"""
import torch

from restore_ad.generator import append_position_channels, positional_codes

###############################################################################
# A 2x2 grid needs ceil(log2(4) + 1) = 3 bits per code.
table = positional_codes(2)
print(f"N=2, code length {table.dim}")
for k, code in enumerate(table.codes):
    print(f"  patch {k} (row {k // 2}, col {k % 2}):", code.astype(int).tolist())

###############################################################################
# Larger grids use longer codes; every patch still gets a distinct one.
for n in (1, 4, 8):
    t = positional_codes(n)
    print(f"N={n}: {n * n} codes of length {t.dim}")

###############################################################################
# Appending codes to a feature map adds ``dim`` constant-per-patch channels.
features = torch.zeros(1, 2, 16, 16)
coded = append_position_channels(features, positional_codes(4))
print("feature map", tuple(features.shape), "->", tuple(coded.shape))
for y, x in [(0, 0), (3, 12), (9, 5), (15, 15)]:
    print(f"  pixel ({y:2d},{x:2d}) -> code", coded[0, 2:, y, x].int().tolist())
