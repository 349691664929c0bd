"""Shared test helpers."""

import numpy as np


def h_dofs_for_potential(h_space, potential):
    """Coefficients representing the gradient of a scalar potential
    inside the conducting region, honouring the grounded boundary node.

    The boundary node DOFs carry the ground-shifted potential; interior
    edge DOFs carry the circulation left over after removing the
    boundary-hat contributions on their endpoints.
    """
    mesh = h_space.mesh
    x = np.zeros(h_space.n_dofs)
    ground = {c.id: c.ground_node for c in h_space.meta["conductors"]}
    p = {int(n): potential(*mesh.nodes[n])
         for n in np.unique(mesh.triangles[h_space.meta["sc_tris"]])}
    ring = set()
    pg = {}
    for c in h_space.meta["conductors"]:
        g = p[c.ground_node]
        for n in c.ring_nodes:
            key = ("node", int(n))
            x[h_space.index[key]] = p[int(n)] - g
            ring.add(int(n))
            pg[int(n)] = g
    for k, (kind, ent) in enumerate(h_space.entries):
        if kind != "edge":
            continue
        a, b = (int(v) for v in mesh.edges[ent])
        circ = p[b] - p[a]
        if a in ring:
            circ += p[a] - pg[a]
        if b in ring:
            circ -= p[b] - pg[b]
        x[k] = circ
    return x
