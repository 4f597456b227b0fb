"""Reference computations written independently of the package internals."""

import numpy as np


def branch_currents(net, v):
    """i = Y v accumulated branch by branch with explicit scalar loops."""
    pos = {pair: i for i, pair in enumerate(net.index)}
    cur = np.zeros(len(pos), complex)
    for line in net.lines:
        zinv = np.linalg.inv(np.asarray(line.z))
        ysh = np.asarray(line.y_shunt)
        t = line.tap
        ph = line.phases
        for a, pa in enumerate(ph):
            fa, ta = pos[(line.from_bus, pa)], pos[(line.to_bus, pa)]
            for b, pb in enumerate(ph):
                fb, tb = pos[(line.from_bus, pb)], pos[(line.to_bus, pb)]
                series = zinv[a, b] * (v[fb] / t - v[tb])
                cur[fa] += (series + 0.5 * ysh[a, b] * v[fb] / t) / t
                cur[ta] += -series + 0.5 * ysh[a, b] * v[tb]
    for bus in net.buses:
        for p, y in bus.shunt.items():
            cur[pos[(bus.id, p)]] += y * v[pos[(bus.id, p)]]
    return cur


def random_hermitian(rng, n, scale=1.0):
    a = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    return scale * (a + a.conj().T) / 2
