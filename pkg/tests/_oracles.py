"""Independent oracles shared by the unit and acceptance suites."""

import numpy as np

from dynmc import cells
from dynmc.continua import classify, ContinuumSpec
from dynmc.grids import CoarseGrid, FineGrid, oversample_block


def random_partition_region(nx, ny, blocks_x, blocks_y, seed, contrast,
                            thresholds):
    """An oversampled region covering a randomized labeled grid.

    Returns (ov, lam_local, labels_local, n) for the central block with one
    oversampling layer (the window spans the whole grid).
    """
    rng = np.random.Generator(np.random.Philox(seed))
    fine = FineGrid(nx, ny, float(nx), float(ny))
    coarse = CoarseGrid(fine, blocks_x, blocks_y)
    c = rng.random((nx, ny))
    spec = ContinuumSpec(thresholds)
    labels = classify(c, spec)
    lam = np.where(rng.random((nx, ny)) < 0.5, float(contrast), 1.0)
    ov = oversample_block(coarse, (blocks_x // 2, blocks_y // 2), 1,
                          rule="none")
    return ov, ov.sample(lam), ov.sample(labels), spec.count


def dense_kkt_solve(A, C, b, g):
    """Dense factorization of the same saddle system [[A, C^T], [C, 0]]."""
    Ad = np.asarray(A.todense())
    Cd = np.asarray(C.todense())
    n, m = Ad.shape[0], Cd.shape[0]
    K = np.zeros((n + m, n + m))
    K[:n, :n] = Ad
    K[:n, n:] = Cd.T
    K[n:, :n] = Cd
    sol = np.linalg.solve(K, np.concatenate([b, g]))
    return sol[:n], sol[n:]


def elliptic_oracle(ov, lam_local, labels_local, n, family, direction=0):
    """Replays one constrained elliptic family through the dense path."""
    A = cells.assemble_stiffness(ov.grid, lam_local)
    C, rows = cells.region_moment_matrix(ov, labels_local, n)
    centers = None
    if family == "gradient":
        centers = cells.gradient_centers(ov, labels_local, n, direction)
    out = {}
    present = sorted({r.continuum for r in rows})
    for i in present:
        if family == "average":
            b = np.zeros(ov.grid.n_cells)
            g = cells.moment_targets(ov, labels_local, rows, i, "average")
        elif family == "gradient":
            lam_i = lam_local * (labels_local == i)
            b = cells.gradient_boundary_source(ov.grid, lam_i,
                                               direction).ravel()
            g = cells.moment_targets(ov, labels_local, rows, i, "gradient",
                                     direction, centers)
        else:
            psi = (labels_local == i).astype(float)
            mass = psi[ov.central.sx, ov.central.sy].sum() * ov.grid.cell_area
            s = psi / mass if mass > 0 else psi
            b = cells.gravity_volume_source(ov.grid, lam_local, s).ravel()
            g = np.zeros(len(rows))
        u, _mu = dense_kkt_solve(A, C, b, g)
        out[i] = u.reshape(ov.grid.nx, ov.grid.ny)
    return out, rows


def moment_residuals(ov, labels_local, rows, basis_continuum, field,
                     family, direction=0, centers=None):
    """Achieved region moments minus their targets, one value per row."""
    area = ov.grid.cell_area
    coord = ov.grid.cell_centers()[direction]
    res = []
    for row in rows:
        reg = ov.regions[row.region]
        sel = labels_local[reg.sx, reg.sy] == row.continuum
        got = (field[reg.sx, reg.sy] * sel).sum() * area
        if row.continuum != basis_continuum:
            target = 0.0
        elif family == "average":
            target = row.mass
        else:
            x = coord[reg.sx, reg.sy]
            target = ((x - centers[row.continuum]) * sel).sum() * area
        res.append(got - target)
    return np.array(res)
