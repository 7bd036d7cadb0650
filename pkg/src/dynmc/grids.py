"""Structured fine/coarse grid geometry, oversampling, and extended domains.

Fine fields are cell centered with shape ``(nx, ny)``.  Face-normal data
lives on staggered arrays: x-faces ``(nx + 1, ny)``, y-faces ``(nx, ny + 1)``,
with positive orientation along +x / +y.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import ConfigError

EXTENSION_KINDS = ("none", "two-sided", "right")


@dataclass(frozen=True)
class FineGrid:
    """Uniform rectangular grid over ``[x0, x0+L1] x [y0, y0+L2]``."""

    nx: int
    ny: int
    L1: float
    L2: float
    x0: float = 0.0
    y0: float = 0.0

    def __post_init__(self):
        if self.nx <= 0 or self.ny <= 0 or self.L1 <= 0 or self.L2 <= 0:
            raise ConfigError(f"grid extents/counts must be positive: {self}")

    @property
    def hx(self) -> float:
        return self.L1 / self.nx

    @property
    def hy(self) -> float:
        return self.L2 / self.ny

    @property
    def cell_area(self) -> float:
        return self.hx * self.hy

    @property
    def n_cells(self) -> int:
        return self.nx * self.ny

    def xc(self) -> np.ndarray:
        """Cell-center x coordinates, shape (nx,)."""
        return self.x0 + (np.arange(self.nx) + 0.5) * self.hx

    def yc(self) -> np.ndarray:
        return self.y0 + (np.arange(self.ny) + 0.5) * self.hy

    def cell_centers(self) -> tuple[np.ndarray, np.ndarray]:
        """Meshgrid of centers, each shape (nx, ny)."""
        return np.meshgrid(self.xc(), self.yc(), indexing="ij")

    def zeros(self) -> np.ndarray:
        return np.zeros((self.nx, self.ny))

    def zero_faces(self) -> tuple[np.ndarray, np.ndarray]:
        return np.zeros((self.nx + 1, self.ny)), np.zeros((self.nx, self.ny + 1))


@dataclass(frozen=True)
class CoarseEdge:
    """One coarse edge: a line of fine faces between (or bounding) blocks.

    ``orientation`` is the face-normal direction.  For an 'x' edge, ``pos``
    is the fine x-face column index and ``row`` the block index along y; the
    neighbor blocks are (pos//mx - 1, row) and (pos//mx, row) where present.
    """

    orientation: str  # 'x' or 'y'
    index: int  # block-lattice position along the normal (0..N)
    row: int  # block index along the other direction

    def key(self) -> tuple:
        return (self.orientation, self.index, self.row)


@dataclass(frozen=True)
class CoarseGrid:
    """Partition of a fine grid into Nx x Ny rectangular blocks."""

    fine: FineGrid
    Nx: int
    Ny: int

    def __post_init__(self):
        if self.fine.nx % self.Nx:
            raise ConfigError(
                f"fine nx={self.fine.nx} not divisible by coarse Nx={self.Nx}")
        if self.fine.ny % self.Ny:
            raise ConfigError(
                f"fine ny={self.fine.ny} not divisible by coarse Ny={self.Ny}")

    @property
    def mx(self) -> int:
        """Fine cells per block along x."""
        return self.fine.nx // self.Nx

    @property
    def my(self) -> int:
        return self.fine.ny // self.Ny

    @property
    def block_area(self) -> float:
        return self.mx * self.my * self.fine.cell_area

    def blocks(self) -> list[tuple[int, int]]:
        return [(i, j) for j in range(self.Ny) for i in range(self.Nx)]

    def block_slices(self, I: int, J: int) -> tuple[slice, slice]:
        return (slice(I * self.mx, (I + 1) * self.mx),
                slice(J * self.my, (J + 1) * self.my))

    def block_of_cell(self, i: int, j: int) -> tuple[int, int]:
        return (i // self.mx, j // self.my)

    def block_center_x(self, I: int) -> float:
        return self.fine.x0 + (I + 0.5) * self.mx * self.fine.hx

    # --- edges ---------------------------------------------------------

    def edges(self, include_boundary: bool = True) -> list[CoarseEdge]:
        out = []
        lo = 0 if include_boundary else 1
        for J in range(self.Ny):
            for I in range(lo, self.Nx + 1 - lo):
                out.append(CoarseEdge("x", I, J))
        for I in range(self.Nx):
            for J in range(lo, self.Ny + 1 - lo):
                out.append(CoarseEdge("y", J, I))
        return out

    def interior_edges(self) -> list[CoarseEdge]:
        return [e for e in self.edges() if self.is_interior(e)]

    def is_interior(self, e: CoarseEdge) -> bool:
        n = self.Nx if e.orientation == "x" else self.Ny
        return 0 < e.index < n

    def edge_faces(self, e: CoarseEdge) -> tuple[int, slice]:
        """(face line index, slice along the edge) into the face array."""
        if e.orientation == "x":
            return (e.index * self.mx, slice(e.row * self.my, (e.row + 1) * self.my))
        return (e.index * self.my, slice(e.row * self.mx, (e.row + 1) * self.mx))

    def edge_length_per_face(self, e: CoarseEdge) -> float:
        return self.fine.hy if e.orientation == "x" else self.fine.hx

    def edge_neighbors(self, e: CoarseEdge) -> tuple[tuple[int, int] | None,
                                                     tuple[int, int] | None]:
        """Blocks on the minus and plus side of the edge (None outside)."""
        if e.orientation == "x":
            lo = (e.index - 1, e.row) if e.index > 0 else None
            hi = (e.index, e.row) if e.index < self.Nx else None
        else:
            lo = (e.row, e.index - 1) if e.index > 0 else None
            hi = (e.row, e.index) if e.index < self.Ny else None
        return lo, hi

    def edge_donor_cells(self, e: CoarseEdge, sign: np.ndarray):
        """Fine cell indices on the upwind side of each edge face.

        ``sign`` holds the face-normal flux values; positive flux donates
        from the minus side.
        """
        fi, sl = self.edge_faces(e)
        idx = np.arange(sl.start, sl.stop)
        if e.orientation == "x":
            i_lo = np.clip(fi - 1, 0, self.fine.nx - 1)
            i_hi = np.clip(fi, 0, self.fine.nx - 1)
            i_don = np.where(sign >= 0, i_lo, i_hi)
            return i_don, idx
        j_lo = np.clip(fi - 1, 0, self.fine.ny - 1)
        j_hi = np.clip(fi, 0, self.fine.ny - 1)
        j_don = np.where(sign >= 0, j_lo, j_hi)
        return idx, j_don


@dataclass(frozen=True)
class OversampleRegion:
    """One constituent block of an oversampled region, in local indices."""

    offset: tuple[int, int]  # block offset relative to the central block
    sx: slice
    sy: slice

    @property
    def is_central(self) -> bool:
        return self.offset == (0, 0)


@dataclass(frozen=True)
class Oversample:
    """Block K extended by ``layers`` rings, with out-of-domain source maps.

    ``src_ix``/``src_iy`` map each local cell column/row to the fine-grid
    cell it samples (periodic or mirror image for extended cells).  Local
    coordinates continue the uniform spacing beyond the domain so gradient
    moments see the virtual positions.
    """

    coarse: CoarseGrid
    block: tuple[int, int]
    layers: int
    rule: str
    grid: FineGrid  # local grid (origin at the virtual lower-left corner)
    src_ix: np.ndarray
    src_iy: np.ndarray
    regions: tuple[OversampleRegion, ...]
    truncated: bool = False

    @property
    def central(self) -> OversampleRegion:
        for r in self.regions:
            if r.is_central:
                return r
        raise AssertionError("oversample lost its central block")

    def sample(self, fine_field: np.ndarray) -> np.ndarray:
        """Pull a fine cell field onto the local grid through the source map."""
        return fine_field[np.ix_(self.src_ix, self.src_iy)]


def _parse_rule(rule: str) -> set[str]:
    parts = {p.strip() for p in rule.split(",") if p.strip()}
    known = {"none", "periodic-left", "reflect-right"}
    bad = parts - known
    if bad:
        raise ConfigError(f"unknown extension rule(s): {sorted(bad)}")
    parts.discard("none")
    return parts


def oversample_block(coarse: CoarseGrid, block: tuple[int, int], layers: int,
                     rule: str = "none") -> Oversample:
    """Build K+ = K plus ``layers`` rings of neighbor blocks.

    Out-of-domain columns are mapped periodically (left) or mirrored
    (right) when the rule allows; otherwise the region is truncated to the
    domain and flagged.  The y direction always truncates (all target
    geometries are no-flow top/bottom).
    """
    I, J = block
    if not (0 <= I < coarse.Nx and 0 <= J < coarse.Ny):
        raise ConfigError(f"block {block} outside coarse grid")
    if layers < 0:
        raise ConfigError("layers must be >= 0")
    parts = _parse_rule(rule)
    fine = coarse.fine
    mx, my = coarse.mx, coarse.my

    truncated = False
    bI = []
    for dI in range(-layers, layers + 1):
        gI = I + dI
        if 0 <= gI < coarse.Nx:
            bI.append(gI)
        elif gI < 0 and "periodic-left" in parts:
            bI.append(gI)
        elif gI >= coarse.Nx and "reflect-right" in parts:
            bI.append(gI)
        else:
            truncated = True
    bJ = []
    for dJ in range(-layers, layers + 1):
        gJ = J + dJ
        if 0 <= gJ < coarse.Ny:
            bJ.append(gJ)
        else:
            truncated = True

    nxl = len(bI) * mx
    nyl = len(bJ) * my
    src_ix = np.empty(nxl, dtype=int)
    for k, gI in enumerate(bI):
        cols = gI * mx + np.arange(mx)
        cols = np.where(cols < 0, cols % fine.nx, cols)
        cols = np.where(cols >= fine.nx, 2 * fine.nx - 1 - cols, cols)
        src_ix[k * mx:(k + 1) * mx] = cols
    src_iy = np.empty(nyl, dtype=int)
    for k, gJ in enumerate(bJ):
        src_iy[k * my:(k + 1) * my] = gJ * my + np.arange(my)

    x0l = fine.x0 + bI[0] * mx * fine.hx
    y0l = fine.y0 + bJ[0] * my * fine.hy
    grid = FineGrid(nxl, nyl, nxl * fine.hx, nyl * fine.hy, x0=x0l, y0=y0l)

    regions = []
    for kJ, gJ in enumerate(bJ):
        for kI, gI in enumerate(bI):
            regions.append(OversampleRegion(
                offset=(gI - I, gJ - J),
                sx=slice(kI * mx, (kI + 1) * mx),
                sy=slice(kJ * my, (kJ + 1) * my)))
    return Oversample(coarse=coarse, block=block, layers=layers, rule=rule,
                      grid=grid, src_ix=src_ix, src_iy=src_iy,
                      regions=tuple(regions), truncated=truncated)


@dataclass(frozen=True)
class DomainLayout:
    """Target domain plus the (possibly identical) extended fine grid.

    The target fine grid is an exact cell-for-cell restriction of the
    extended grid; ``offset_x`` counts the extension cells on the left.
    """

    target_fine: FineGrid
    extended_fine: FineGrid
    coarse: CoarseGrid  # coarse grid over the target domain
    extension: str  # 'none' | 'two-sided' | 'right'
    ext_margin: float
    offset_x: int
    flow_coarse: CoarseGrid | None = None  # refined coarse grid for flow

    @property
    def ext_cells(self) -> int:
        return self.extended_fine.nx - self.target_fine.nx

    def restrict(self, ext_field: np.ndarray) -> np.ndarray:
        """Extended cell field -> target cell field."""
        return ext_field[self.offset_x:self.offset_x + self.target_fine.nx, :]

    def restrict_faces(self, fx: np.ndarray, fy: np.ndarray):
        o, n = self.offset_x, self.target_fine.nx
        return fx[o:o + n + 1, :], fy[o:o + n, :]

    def embed(self, target_field: np.ndarray, fill: float = 0.0) -> np.ndarray:
        out = np.full((self.extended_fine.nx, self.extended_fine.ny), fill)
        out[self.offset_x:self.offset_x + self.target_fine.nx, :] = target_field
        return out


def build_layout(L1: float, L2: float, nx: int, ny: int, Nx: int, Ny: int,
                 extension: str = "none", ext_margin: float = 0.0,
                 flow_refine_x: int = 1) -> DomainLayout:
    """Construct the target/extended grids and the coarse partition.

    ``nx, ny`` count fine cells of the *target* domain.  With extension
    'two-sided' the fine grid grows by ``ext_margin`` on both x sides, with
    'right' by ``2 * ext_margin`` on the right (the paper-style variants).
    """
    if extension not in EXTENSION_KINDS:
        raise ConfigError(f"unknown extension kind {extension!r}")
    target = FineGrid(nx, ny, L1, L2)
    hx = target.hx
    if extension == "none":
        ext = target
        off = 0
    else:
        m = ext_margin / hx
        mc = round(m)
        if abs(m - mc) > 1e-9 or mc <= 0:
            raise ConfigError(
                f"ext_margin={ext_margin} is not a positive whole number of "
                f"fine cells (hx={hx})")
        if extension == "two-sided":
            ext = FineGrid(nx + 2 * mc, ny, L1 + 2 * ext_margin, L2,
                           x0=-ext_margin)
            off = mc
        else:
            ext = FineGrid(nx + 2 * mc, ny, L1 + 2 * ext_margin, L2)
            off = 0
    coarse = CoarseGrid(target, Nx, Ny)
    flow_coarse = None
    if flow_refine_x > 1:
        flow_coarse = CoarseGrid(target, Nx * flow_refine_x, Ny)
    return DomainLayout(target_fine=target, extended_fine=ext, coarse=coarse,
                        extension=extension, ext_margin=ext_margin,
                        offset_x=off, flow_coarse=flow_coarse)
