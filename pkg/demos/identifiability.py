"""Why a linear readout pins the code down to a structured permutation.

Every row bijection of the (2, 2, 2) code matrix is tried. Only the ones
that a linear map can reproduce survive, and each survivor turns out to be a
block swap combined with within-block relabelling.
"""
from wtasym.latents import LatentStructure, enumerate_code_matrix
from wtasym.theory import count_structured_permutations, enumerate_structured_permutations, verify_theorem1

s = LatentStructure((2, 2, 2))
C = enumerate_code_matrix(s)
print("code matrix, one row per latent combination:")
print(C.astype(int))

report = verify_theorem1(3, 2)
print(f"\n{report.bijections_tested} row orders tried, {report.realizable} reachable by a linear map")
print(f"structured permutations expected: {count_structured_permutations(s)}, violations: {report.violations}")

# One survivor: swap the first two factors and flip the labels of the third.
sp = next(p for p in enumerate_structured_permutations(s) if p.factor_map == (1, 0, 2) and p.within[2] == (1, 0))
print("\nexample recoding matrix R (z_hat = z R):")
print(sp.matrix.astype(int))
assert {r.tobytes() for r in C @ sp.matrix} == {r.tobytes() for r in C}
print("C R is the same set of rows as C, just reordered.")
