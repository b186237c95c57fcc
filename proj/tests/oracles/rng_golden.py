"""Independent reference for the generator stack, used to freeze golden values
in tests/test_numerics.cpp and tests/test_projection.cpp.

Run: python3 tests/oracles/rng_golden.py
"""
import math

M64 = (1 << 64) - 1


def splitmix64(state):
    state = (state + 0x9E3779B97F4A7C15) & M64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & M64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & M64
    return state, z ^ (z >> 31)


def rotl(x, k):
    return ((x << k) | (x >> (64 - k))) & M64


class Xoshiro:
    def __init__(self, seed):
        self.s = []
        st = seed
        for _ in range(4):
            st, v = splitmix64(st)
            self.s.append(v)

    def u64(self):
        s = self.s
        result = (rotl((s[0] + s[3]) & M64, 23) + s[0]) & M64
        t = (s[1] << 17) & M64
        s[2] ^= s[0]
        s[3] ^= s[1]
        s[1] ^= s[2]
        s[0] ^= s[3]
        s[2] ^= t
        s[3] = rotl(s[3], 45)
        return result

    def uniform(self):
        return (self.u64() >> 11) * 2.0**-53

    def gaussian(self):
        while True:
            u = 2.0 * self.uniform() - 1.0
            v = 2.0 * self.uniform() - 1.0
            s = u * u + v * v
            if 0.0 < s < 1.0:
                return u * math.sqrt(-2.0 * math.log(s) / s)

    def below(self, n):
        return int(self.uniform() * n)


TAGS = {"projection": 0x50524F4A, "weights": 0x57454947, "data": 0x44415441,
        "shuffle": 0x53485546, "base": 0x42415345}


def derive_seed(seed, tag, index=0):
    return splitmix64((seed + TAGS[tag] + (index << 32)) & M64)[1]


def shuffled(n, rng):
    idx = list(range(n))
    for i in range(n, 1, -1):
        j = rng.below(i)
        idx[i - 1], idx[j] = idx[j], idx[i - 1]
    return idx


def projection(seed, rho, r, d_in):
    rng = Xoshiro(seed)
    out = []
    for i in range(r):
        for j in range(d_in):
            if rng.uniform() < rho:
                out.append((i, j, 1 if rng.uniform() < 0.5 else -1))
    return out


def fnv_entries(entries):
    h = 0xCBF29CE484222325
    def mix(v, nbytes):
        nonlocal h
        for b in range(nbytes):
            h ^= (v >> (8 * b)) & 0xFF
            h = (h * 0x100000001B3) & M64
    for (i, j, s) in entries:
        mix(i, 4)
        mix(j, 4)
        mix(s & 0xFF, 1)
    return h


if __name__ == "__main__":
    st = 0
    vals = []
    for _ in range(3):
        st, v = splitmix64(st)
        vals.append(v)
    print("splitmix64(0):", ", ".join(f"0x{v:016X}ULL" for v in vals))
    g = Xoshiro(42)
    print("xoshiro(42) u64:", ", ".join(f"0x{g.u64():016X}ULL" for _ in range(5)))
    g = Xoshiro(7)
    print("xoshiro(7) uniform:", ", ".join(repr(g.uniform()) for _ in range(4)))
    g = Xoshiro(7)
    print("xoshiro(7) gaussian:", ", ".join(repr(g.gaussian()) for _ in range(4)))
    for tag in TAGS:
        print(f"derive_seed(7, {tag}):", f"0x{derive_seed(7, tag):016X}ULL")
    print("derive_seed(1234, data, 2):", f"0x{derive_seed(1234, 'data', 2):016X}ULL")
    print("shuffle(10, Xoshiro(3)):", shuffled(10, Xoshiro(3)))
    e = projection(11, 0.25, 3, 8)
    print("projection(11, .25, 3, 8):", e)
    print("hash:", f"0x{fnv_entries(e):016X}ULL")
