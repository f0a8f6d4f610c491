"""The seven element-coarsening algorithms, cleanup, and agglomerate statistics.

Every algorithm maps one grid level (a :class:`~agglomg.mesh.LevelTopology`)
to an element -> agglomerate assignment, then runs the shared cleanup stage
so the result is total, contiguous and densely numbered. Weighted-face
growth (jones, kraus) is deterministic; the randomized algorithms consume
an explicit 64-bit seed through a counter-based generator, never global
RNG state.
"""
from __future__ import annotations

import heapq
from collections import deque
from dataclasses import dataclass

import numpy as np

from .mesh import LevelTopology, _csr_from_pairs
from . import partitioner

ALGORITHMS = ("jones", "kraus", "rgb", "node", "greedy", "sizebased", "aspect")
SIZE_BASED = ("greedy", "sizebased", "aspect")

ASPECT_MAX_PASSES = 10


@dataclass(frozen=True)
class CoarsenConfig:
    """Which algorithm to run, its desired agglomerate size, and the seed.

    ``desired_size`` only matters for the size-based algorithms (greedy,
    sizebased, aspect); jones/kraus/rgb/node ignore it.
    """

    algorithm: str
    desired_size: int | None = None
    seed: int = 0

    def validate(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}")
        if self.algorithm in SIZE_BASED:
            if self.desired_size is None or self.desired_size < 2:
                raise ValueError(
                    f"{self.algorithm} needs desired_size >= 2, got {self.desired_size}")


@dataclass
class Agglomeration:
    """Element -> agglomerate id map for one coarsening step (-1 = unassigned)."""

    element_to_agg: np.ndarray
    level: int = 0

    def __post_init__(self):
        self.element_to_agg = np.asarray(self.element_to_agg, dtype=np.int64)

    @property
    def n_elements(self) -> int:
        return self.element_to_agg.shape[0]

    @property
    def n_agglomerates(self) -> int:
        return int(self.element_to_agg.max()) + 1 if self.n_elements else 0

    @property
    def sizes(self) -> np.ndarray:
        assigned = self.element_to_agg[self.element_to_agg >= 0]
        return np.bincount(assigned, minlength=self.n_agglomerates)

    def groups(self) -> list:
        """Per-agglomerate element index arrays (unassigned elements dropped)."""
        a = self.element_to_agg
        order = np.argsort(a, kind="stable")
        order = order[a[order] >= 0]
        splits = np.searchsorted(a[order], np.arange(1, self.n_agglomerates))
        return np.split(order, splits)

    def is_total(self) -> bool:
        return bool((self.element_to_agg >= 0).all())


@dataclass
class WeightState:
    """Face (and edge, in 3D) growth weights; -1 marks a consumed entity."""

    face_weight: np.ndarray
    edge_weight: np.ndarray | None = None


@dataclass
class CleanupReport:
    unused_attached: int = 0
    isolated_resolved: int = 0
    disconnected_split: int = 0
    enclosed_merged: int = 0


@dataclass
class AgglomerateStats:
    average_size: float
    size_histogram: np.ndarray
    mean_surface_sq_over_volume: float
    edge_cut: int


# ---------------------------------------------------------------------------
# shared incidence helpers

def _group_pairs(indptr, ids):
    """All ordered (a, b), a != b pairs inside each CSR group."""
    counts = np.diff(indptr)
    reps = np.repeat(counts, counts)
    src = np.repeat(ids, reps)
    # tile each group's ids along the group's rows
    total = int((counts * counts).sum())
    dst = np.empty(total, dtype=ids.dtype)
    pos = 0
    for g in range(len(counts)):
        c = int(counts[g])
        if c == 0:
            continue
        block = ids[indptr[g]:indptr[g + 1]]
        dst[pos:pos + c * c] = np.tile(block, c)
        pos += c * c
    keep = src != dst
    return src[keep], dst[keep]


def _face_adjacency(topo: LevelTopology):
    """CSR of interior-face neighbourships (shared node in 2D, edge in 3D).

    On coarse levels the face node sets are coarse nodes and the same rule
    applies: at least one shared node in 2D, at least two in 3D.
    """
    faces = topo.faces
    interior = faces.interior
    if topo.dim == 3 and topo.edges is not None:
        src, dst = _group_pairs(topo.edges.face_indptr, topo.edges.face_ids)
        keep = interior[src] & interior[dst]
        src, dst = src[keep], dst[keep]
        # distinct fine faces share at most one edge, so pairs are unique;
        # coarse faces may share several, so dedup by pair key
        key = src * faces.n_faces + dst
        uniq = np.unique(key)
        src, dst = uniq // faces.n_faces, uniq % faces.n_faces
    else:
        src, dst = _group_pairs(faces.node_face_indptr, faces.node_face_ids)
        keep = interior[src] & interior[dst]
        src, dst = src[keep], dst[keep]
        key = src * faces.n_faces + dst
        if topo.dim == 3:
            # generic 3D rule without an EdgeSet: >= 2 shared nodes
            key, counts = np.unique(key, return_counts=True)
            key = key[counts >= 2]
        else:
            key = np.unique(key)
        src, dst = key // faces.n_faces, key % faces.n_faces
    order = np.argsort(src, kind="stable")
    indptr = np.zeros(faces.n_faces + 1, dtype=np.int64)
    np.cumsum(np.bincount(src, minlength=faces.n_faces), out=indptr[1:])
    return indptr, dst[order]


def _element_companion_faces(topo: LevelTopology):
    """CSR: for each interior face, the other interior faces of its elements."""
    faces = topo.faces
    n = faces.n_faces
    src_list, dst_list = [], []
    for f in range(n):
        if faces.right[f] < 0:
            continue
        companions = np.concatenate([
            faces.element_faces(faces.left[f]),
            faces.element_faces(faces.right[f]),
        ])
        companions = companions[(companions != f) & (faces.right[companions] >= 0)]
        src_list.append(np.full(len(companions), f, dtype=np.int64))
        dst_list.append(companions)
    src = np.concatenate(src_list) if src_list else np.zeros(0, np.int64)
    dst = np.concatenate(dst_list) if dst_list else np.zeros(0, np.int64)
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(src, minlength=n), out=indptr[1:])
    return indptr, dst


def _csr_row(indptr, ids, i):
    return ids[indptr[i]:indptr[i + 1]]


# ---------------------------------------------------------------------------
# jones / kraus : weighted-face (and edge) growth

def _face_sweep(topo, face_w, assign, next_id, restrict_g):
    """Grow agglomerates by repeatedly following maximal-weight faces.

    Mutates ``face_w`` and ``assign``; returns the next free agglomerate id.
    ``restrict_g`` confines the growth-face choice to faces sharing an
    element with the current face (the kraus variant).
    """
    faces = topo.faces
    adj_indptr, adj_ids = _face_adjacency(topo)
    comp_indptr, comp_ids = _element_companion_faces(topo)
    elem_faces = faces.element_faces

    heap = [(-int(face_w[f]), int(f)) for f in np.flatnonzero(face_w >= 0)]
    heapq.heapify(heap)

    def push(f):
        heapq.heappush(heap, (-int(face_w[f]), int(f)))

    while heap:
        negw, f = heapq.heappop(heap)
        if face_w[f] != -negw or face_w[f] < 0:
            continue  # stale entry
        aid = next_id
        next_id += 1
        members = []
        while True:
            w_max = face_w[f]
            face_w[f] = -1
            for e in (faces.left[f], faces.right[f]):
                if assign[e] < 0:
                    assign[e] = aid
                    members.append(e)
            neighbours = _csr_row(adj_indptr, adj_ids, f)
            for g in neighbours:
                if face_w[g] >= 0:
                    face_w[g] += 1
                    push(g)
            for g in _csr_row(comp_indptr, comp_ids, f):
                if face_w[g] >= 0:
                    face_w[g] += 1
                    push(g)
            pool = _csr_row(comp_indptr, comp_ids, f) if restrict_g else neighbours
            g_best = -1
            g_w = -1
            for g in pool:
                wg = face_w[g]
                if wg > g_w or (wg == g_w and g < g_best):
                    g_best, g_w = int(g), int(wg)
            if g_best < 0 or g_w < w_max:
                break
            f = g_best
        for e in members:
            for g in elem_faces(e):
                if faces.right[g] >= 0:
                    face_w[g] = -1
    return next_id


def jones_coarsen(topo: LevelTopology, *, do_cleanup=True):
    """Deterministic growth along maximal-weight interior faces."""
    assign, _ = _jones_sweep(topo)
    agg = Agglomeration(assign)
    return cleanup(topo, agg)[0] if do_cleanup else agg


def _jones_sweep(topo):
    face_w = np.where(topo.faces.interior, 0, -1).astype(np.int64)
    assign = np.full(topo.n_elements, -1, dtype=np.int64)
    _face_sweep(topo, face_w, assign, 0, restrict_g=False)
    return assign, WeightState(face_weight=face_w)


def kraus_coarsen(topo: LevelTopology, *, do_cleanup=True):
    """Edge-weighted growth (3D) with a restricted face phase afterwards.

    In 2D only the face phase runs; unlike jones, the growth face must
    share an element with the current one.
    """
    assign, _ = _kraus_sweep(topo)
    agg = Agglomeration(assign)
    return cleanup(topo, agg)[0] if do_cleanup else agg


def _kraus_sweep(topo):
    face_w = np.where(topo.faces.interior, 0, -1).astype(np.int64)
    assign = np.full(topo.n_elements, -1, dtype=np.int64)
    edge_w = None
    next_id = 0
    if topo.dim == 3 and topo.edges is not None and topo.edges.n_edges:
        edge_w = np.zeros(topo.edges.n_edges, dtype=np.int64)
        next_id = _edge_sweep(topo, edge_w, face_w, assign, next_id)
    _face_sweep(topo, face_w, assign, next_id, restrict_g=True)
    return assign, WeightState(face_weight=face_w, edge_weight=edge_w)


def _edge_sweep(topo, edge_w, face_w, assign, next_id):
    edges = topo.edges
    faces = topo.faces
    n_edges = edges.n_edges
    fadj_indptr, fadj_ids = _face_adjacency(topo)

    # edge -> edges sharing a node
    nsrc, ndst = _group_pairs(edges.node_edge_indptr, edges.node_edge_ids)
    nkey = np.unique(nsrc * n_edges + ndst)
    adj_indptr = np.zeros(n_edges + 1, dtype=np.int64)
    np.cumsum(np.bincount(nkey // n_edges, minlength=n_edges), out=adj_indptr[1:])
    adj_ids = nkey % n_edges

    # edge -> edges that are neighbours AND share a face
    face_edge_indptr, face_edge_ids = _invert_csr(
        edges.face_indptr, edges.face_ids, faces.n_faces)
    fsrc, fdst = _group_pairs(face_edge_indptr, face_edge_ids)
    fkey = np.unique(fsrc * n_edges + fdst)
    fkey = np.intersect1d(fkey, nkey, assume_unique=True)
    sadj_indptr = np.zeros(n_edges + 1, dtype=np.int64)
    np.cumsum(np.bincount(fkey // n_edges, minlength=n_edges), out=sadj_indptr[1:])
    sadj_ids = fkey % n_edges

    # element -> its edges, for consumption at completion
    eel_indptr, eel_ids = _invert_csr(edges.elem_indptr, edges.elem_ids,
                                      topo.n_elements)

    heap = [(0, e) for e in range(n_edges)]
    heapq.heapify(heap)

    while heap:
        negw, e = heapq.heappop(heap)
        if edge_w[e] != -negw or edge_w[e] < 0:
            continue
        aid = next_id
        next_id += 1
        members = []
        while True:
            w_max = edge_w[e]
            edge_w[e] = -1
            for el in edges.edge_elements(e):
                if assign[el] < 0:
                    assign[el] = aid
                    members.append(el)
            for d in _csr_row(adj_indptr, adj_ids, e):
                if edge_w[d] >= 0:
                    edge_w[d] += 1
                    heapq.heappush(heap, (-int(edge_w[d]), int(d)))
            for d in _csr_row(sadj_indptr, sadj_ids, e):
                if edge_w[d] >= 0:
                    edge_w[d] += 1
                    heapq.heappush(heap, (-int(edge_w[d]), int(d)))
            seen = set()
            for fc in edges.edge_faces(e):
                for g in _csr_row(fadj_indptr, fadj_ids, fc):
                    g = int(g)
                    if g not in seen:
                        seen.add(g)
                        if face_w[g] >= 0:
                            face_w[g] += 1
            d_best, d_w = -1, -1
            for d in _csr_row(sadj_indptr, sadj_ids, e):
                wd = edge_w[d]
                if wd > d_w or (wd == d_w and d < d_best):
                    d_best, d_w = int(d), int(wd)
            if d_best < 0 or d_w < w_max:
                break
            e = d_best
        for el in members:
            for d in _csr_row(eel_indptr, eel_ids, el):
                edge_w[d] = -1
            for g in topo.faces.element_faces(el):
                if faces.right[g] >= 0:
                    face_w[g] = -1
    return next_id


def _invert_csr(indptr, ids, n_targets):
    """Invert a CSR mapping a->b into b->a."""
    src = np.repeat(np.arange(len(indptr) - 1), np.diff(indptr))
    return _csr_from_pairs(np.asarray(ids), src, n_targets)


# ---------------------------------------------------------------------------
# rgb / node / greedy

def _rng(seed):
    return np.random.Generator(np.random.Philox(seed))


def rgb_coarsen(topo: LevelTopology, seed: int = 0, *, do_cleanup=True):
    """Red-green-black colouring: random seeds absorb their whole neighbourhood.

    Grey fringe elements join the adjacent agglomerate they fit best:
    most shared dual edges, then fewest elements, then lowest id.
    """
    dual = topo.dual
    n = topo.n_elements
    UNCOLOURED, BLACK, RED, GREY = 0, 1, 2, 3
    state = np.zeros(n, dtype=np.int8)
    assign = np.full(n, -1, dtype=np.int64)
    order = _rng(seed).permutation(n)
    next_id = 0
    for e in order:
        if state[e] != UNCOLOURED:
            continue
        aid = next_id
        next_id += 1
        state[e] = BLACK
        assign[e] = aid
        reds = []
        for nb in dual.neighbors(e):
            if state[nb] in (UNCOLOURED, GREY):
                state[nb] = RED
                assign[nb] = aid
                reds.append(nb)
        for r in reds:
            for nb in dual.neighbors(r):
                if state[nb] == UNCOLOURED:
                    state[nb] = GREY
    sizes = np.bincount(assign[assign >= 0], minlength=next_id)
    for e in np.flatnonzero(state == GREY):
        tally = {}
        for nb in dual.neighbors(e):
            a = assign[nb]
            if a >= 0:
                tally[int(a)] = tally.get(int(a), 0) + 1
        best = min(tally, key=lambda a: (-tally[a], sizes[a], a))
        assign[e] = best
        sizes[best] += 1
    agg = Agglomeration(assign)
    return cleanup(topo, agg)[0] if do_cleanup else agg


def node_coarsen(topo: LevelTopology, seed: int = 0, *, do_cleanup=True):
    """Each selected unused node claims every element sharing it.

    Interior nodes are visited in seeded random order before boundary
    nodes; claimed elements mark all their nodes used.
    """
    n = topo.n_elements
    assign = np.full(n, -1, dtype=np.int64)
    node_used = np.zeros(topo.n_nodes, dtype=bool)
    elem_nodes_indptr, elem_nodes_ids = _invert_csr(
        topo.node_elem_indptr, topo.node_elem_ids, n)
    rng = _rng(seed)
    interior = np.flatnonzero(~topo.node_boundary)
    boundary = np.flatnonzero(topo.node_boundary)
    order = np.concatenate([rng.permutation(interior), rng.permutation(boundary)])
    next_id = 0
    for node in order:
        if node_used[node]:
            continue
        elems = topo.node_elements(node)
        elems = elems[assign[elems] < 0]
        if elems.size == 0:
            node_used[node] = True
            continue
        assign[elems] = next_id
        next_id += 1
        for e in elems:
            node_used[_csr_row(elem_nodes_indptr, elem_nodes_ids, e)] = True
    agg = Agglomeration(assign)
    return cleanup(topo, agg)[0] if do_cleanup else agg


def greedy_coarsen(topo: LevelTopology, s: int, seed: int = 0, *, do_cleanup=True):
    """Breadth-first absorption of unused neighbours up to the desired size."""
    if s < 2:
        raise ValueError(f"desired size must be >= 2, got {s}")
    dual = topo.dual
    n = topo.n_elements
    assign = np.full(n, -1, dtype=np.int64)
    order = _rng(seed).permutation(n)
    next_id = 0
    for e in order:
        if assign[e] >= 0:
            continue
        aid = next_id
        next_id += 1
        assign[e] = aid
        size = 1
        frontier = deque()
        in_frontier = set()
        for nb in dual.neighbors(e):
            if assign[nb] < 0 and int(nb) not in in_frontier:
                frontier.append(int(nb))
                in_frontier.add(int(nb))
        while frontier and size < s:
            en = frontier.popleft()
            in_frontier.discard(en)
            if assign[en] >= 0:
                continue
            assign[en] = aid
            size += 1
            if size == s:
                break
            for nb in dual.neighbors(en):
                nb = int(nb)
                if assign[nb] < 0 and nb not in in_frontier:
                    frontier.append(nb)
                    in_frontier.add(nb)
    agg = Agglomeration(assign)
    return cleanup(topo, agg)[0] if do_cleanup else agg


# ---------------------------------------------------------------------------
# sizebased / aspect

def sizebased_coarsen(topo: LevelTopology, s: int, seed: int = 0, *,
                      contiguous=True, do_cleanup=True):
    """Partition the weighted dual graph into floor(n/s) parts."""
    if s < 2:
        raise ValueError(f"desired size must be >= 2, got {s}")
    k = topo.n_elements // s
    if k < 1:
        raise ValueError(
            f"desired size {s} exceeds the {topo.n_elements}-element level; reduce s")
    graph = partitioner.scale_weights(topo.dual)
    part = partitioner.partition_kway(graph, k, contiguous=contiguous, seed=seed)
    agg = Agglomeration(part.part.copy())
    return cleanup(topo, agg)[0] if do_cleanup else agg


def aspect_ratio_coarsen(topo: LevelTopology, s: int, seed: int = 0, *,
                         do_cleanup=True):
    """Greedy start, then local moves lowering surface^2/volume of agglomerates.

    Single boundary elements migrate between adjacent agglomerates while
    sizes stay within [max(2, s/2), 2s]; passes stop at the first one with
    no improving move, or after a fixed cap.
    """
    start = greedy_coarsen(topo, s, seed, do_cleanup=True)
    assign = start.element_to_agg.copy()
    _aspect_refine(topo, assign, s)
    agg = Agglomeration(assign)
    return cleanup(topo, agg)[0] if do_cleanup else agg


def aspect_objective(topo: LevelTopology, assign: np.ndarray) -> float:
    """Sum over agglomerates of (external surface area)^2 / volume."""
    surf, vol = _surface_volume(topo, assign)
    return float((surf * surf / vol).sum())


def _surface_volume(topo, assign):
    nagg = int(assign.max()) + 1
    vol = np.bincount(assign, weights=topo.elem_volume, minlength=nagg)
    surf = np.bincount(assign, weights=topo.elem_boundary_area, minlength=nagg)
    dual = topo.dual
    src = np.repeat(np.arange(topo.n_elements), np.diff(dual.indptr))
    cross = assign[src] != assign[dual.indices]
    np.add.at(surf, assign[src[cross]], dual.edge_weight[cross])
    return surf, vol


def _aspect_refine(topo, assign, s):
    dual = topo.dual
    lower = max(2.0, s / 2.0)
    upper = 2.0 * s
    surf, vol = _surface_volume(topo, assign)
    sizes = np.bincount(assign, minlength=len(vol))
    total_area = topo.elem_boundary_area + np.array([
        dual.neighbor_weights(e).sum() for e in range(topo.n_elements)])
    for _ in range(ASPECT_MAX_PASSES):
        src = np.repeat(np.arange(topo.n_elements), np.diff(dual.indptr))
        boundary_elems = np.unique(src[assign[src] != assign[dual.indices]])
        improved = False
        for e in boundary_elems:
            a = int(assign[e])
            if sizes[a] - 1 < lower:
                continue
            ve = topo.elem_volume[e]
            if vol[a] - ve <= 0:
                continue
            nbrs = dual.neighbors(e)
            wts = dual.neighbor_weights(e)
            area_to = {}
            for nb, w in zip(nbrs, wts):
                b = int(assign[nb])
                area_to[b] = area_to.get(b, 0.0) + float(w)
            obj_a = surf[a] ** 2 / vol[a]
            best_delta, best_b = -1e-12 * (1.0 + obj_a), -1
            for b, ab in sorted(area_to.items()):
                if b == a or sizes[b] + 1 > upper:
                    continue
                surf_a_new = surf[a] - total_area[e] + 2.0 * area_to.get(a, 0.0)
                surf_b_new = surf[b] + total_area[e] - 2.0 * ab
                delta = (surf_a_new ** 2 / (vol[a] - ve) - obj_a
                         + surf_b_new ** 2 / (vol[b] + ve) - surf[b] ** 2 / vol[b])
                if delta < best_delta:
                    best_delta, best_b = delta, b
            if best_b >= 0:
                b = best_b
                surf[a] = surf[a] - total_area[e] + 2.0 * area_to.get(a, 0.0)
                surf[b] = surf[b] + total_area[e] - 2.0 * area_to[b]
                vol[a] -= ve
                vol[b] += ve
                sizes[a] -= 1
                sizes[b] += 1
                assign[e] = b
                improved = True
        if not improved:
            break


# ---------------------------------------------------------------------------
# cleanup

def cleanup(topo: LevelTopology, agg: Agglomeration):
    """Repair an agglomeration into a total, contiguous, densely-numbered one.

    In order: unused elements join the face-adjacent agglomerate sharing
    the most faces (ties to the smallest, then lowest id); enclaves of
    unused elements are absorbed frontier by frontier; non-contiguous
    agglomerates keep their largest component and re-home the rest; fully
    enclosed agglomerates merge into their single neighbour. The split
    step runs once more after merging, then ids are re-densified.
    """
    assign = agg.element_to_agg.copy()
    report = CleanupReport()
    dual = topo.dual

    if (assign < 0).all():
        assign[0] = 0

    sizes = _live_sizes(assign)
    first_round = True
    while True:
        unassigned = np.flatnonzero(assign < 0)
        if unassigned.size == 0:
            break
        frontier = [e for e in unassigned
                    if (assign[dual.neighbors(e)] >= 0).any()]
        if not frontier:
            # pocket disconnected from every agglomerate: becomes its own
            pocket = _components_of(dual, unassigned)
            for comp in pocket:
                assign[comp] = len(sizes)
                sizes.append(len(comp))
                report.isolated_resolved += len(comp)
            break
        for e in frontier:
            tally = {}
            lo_ptr, hi_ptr = dual.indptr[e], dual.indptr[e + 1]
            for idx in range(lo_ptr, hi_ptr):
                a = int(assign[dual.indices[idx]])
                if a >= 0:
                    tally[a] = tally.get(a, 0) + int(dual.edge_faces[idx])
            best = min(tally, key=lambda a: (-tally[a], sizes[a], a))
            assign[e] = best
            sizes[best] += 1
        if first_round:
            report.unused_attached += len(frontier)
            first_round = False
        else:
            report.isolated_resolved += len(frontier)

    report.disconnected_split += _split_noncontiguous(topo, assign)
    report.enclosed_merged += _merge_enclosed(topo, assign)
    report.disconnected_split += _split_noncontiguous(topo, assign)

    # densify ids in first-appearance order
    first_seen = {}
    remap = np.empty(int(assign.max()) + 1, dtype=np.int64)
    next_id = 0
    for a in assign:
        a = int(a)
        if a not in first_seen:
            first_seen[a] = next_id
            next_id += 1
    for a, d in first_seen.items():
        remap[a] = d
    out = Agglomeration(remap[assign], level=agg.level)
    return out, report


def _live_sizes(assign):
    nagg = int(assign.max()) + 1 if (assign >= 0).any() else 0
    return list(np.bincount(assign[assign >= 0], minlength=nagg))


def _components_of(dual, members):
    member_set = set(int(m) for m in members)
    seen = set()
    comps = []
    for m in members:
        m = int(m)
        if m in seen:
            continue
        comp = [m]
        seen.add(m)
        stack = [m]
        while stack:
            u = stack.pop()
            for v in dual.neighbors(u):
                v = int(v)
                if v in member_set and v not in seen:
                    seen.add(v)
                    comp.append(v)
                    stack.append(v)
        comps.append(np.array(sorted(comp), dtype=np.int64))
    return comps


def _split_noncontiguous(topo, assign) -> int:
    from scipy.sparse import csgraph, csr_matrix

    dual = topo.dual
    n = topo.n_elements
    src = np.repeat(np.arange(n), np.diff(dual.indptr))
    same = assign[src] == assign[dual.indices]
    G = csr_matrix((np.ones(int(same.sum())), (src[same], dual.indices[same])),
                   shape=(n, n))
    _, labels = csgraph.connected_components(G, directed=False)
    # agglomerates spanning more than one component need splitting
    key = assign * (labels.max() + 1) + labels
    uniq_pairs = np.unique(key)
    agg_of_pair = uniq_pairs // (labels.max() + 1)
    multi = np.flatnonzero(np.bincount(agg_of_pair) > 1)
    if multi.size == 0:
        return 0

    moved = 0
    sizes = _live_sizes(assign)
    for a in multi:
        members = np.flatnonzero(assign == a)
        comps = {}
        for e in members:
            comps.setdefault(int(labels[e]), []).append(int(e))
        ordered = sorted(comps.values(), key=lambda c: (-len(c), c[0]))
        for comp in ordered[1:]:
            comp = np.array(comp, dtype=np.int64)
            tally = {}
            for e in comp:
                lo_ptr, hi_ptr = dual.indptr[e], dual.indptr[e + 1]
                for idx in range(lo_ptr, hi_ptr):
                    b = int(assign[dual.indices[idx]])
                    if b != a and b >= 0:
                        tally[b] = tally.get(b, 0) + int(dual.edge_faces[idx])
            if not tally:
                # isolated island (disconnected mesh): becomes its own agglomerate
                assign[comp] = len(sizes)
                sizes.append(len(comp))
            else:
                best = min(tally, key=lambda b: (-tally[b], sizes[b], b))
                assign[comp] = best
                sizes[best] += len(comp)
            sizes[a] -= len(comp)
            moved += 1
    return moved


def _merge_enclosed(topo, assign) -> int:
    dual = topo.dual
    merges = 0
    has_boundary = topo.elem_boundary_area > 0
    src_all = np.repeat(np.arange(topo.n_elements), np.diff(dual.indptr))
    while True:
        nagg = int(assign.max()) + 1
        a_side = assign[src_all]
        b_side = assign[dual.indices]
        cross = a_side != b_side
        touches_boundary = np.zeros(nagg, dtype=bool)
        touches_boundary[assign[has_boundary]] = True
        pair_key = np.unique(a_side[cross] * nagg + b_side[cross])
        pair_a = pair_key // nagg
        n_neighbours = np.bincount(pair_a, minlength=nagg)
        candidates = np.flatnonzero(~touches_boundary & (n_neighbours == 1))
        if candidates.size == 0:
            break
        # the single neighbour of each candidate, via its unique pair
        single_target = np.zeros(nagg, dtype=np.int64)
        single_target[pair_a] = pair_key % nagg
        parent = np.arange(nagg, dtype=np.int64)
        round_merges = 0
        for a in candidates:
            a = int(a)
            target = int(single_target[a])
            seen = {a}
            while parent[target] != target and target not in seen:
                seen.add(target)
                target = int(parent[target])
            if target == a:
                continue  # mutual enclosure: keep the pair as-is
            parent[a] = target
            round_merges += 1
        if round_merges == 0:
            break
        for a in range(nagg):
            root = a
            while parent[root] != root:
                root = int(parent[root])
            parent[a] = root
        assign[:] = parent[assign]
        merges += round_merges
    return merges


# ---------------------------------------------------------------------------

def agglomerate_stats(topo: LevelTopology, agg: Agglomeration) -> AgglomerateStats:
    """Average size, size histogram, mean surface^2/volume, dual edge-cut."""
    if not agg.is_total():
        raise ValueError("statistics need a total agglomeration")
    assign = agg.element_to_agg
    nagg = agg.n_agglomerates
    sizes = agg.sizes
    surf, vol = _surface_volume(topo, assign)
    dual = topo.dual
    src = np.repeat(np.arange(topo.n_elements), np.diff(dual.indptr))
    cut = int((assign[src] != assign[dual.indices]).sum()) // 2
    return AgglomerateStats(
        average_size=topo.n_elements / nagg,
        size_histogram=np.bincount(sizes),
        mean_surface_sq_over_volume=float((surf * surf / vol).mean()),
        edge_cut=cut,
    )


def coarsen(topo: LevelTopology, config: CoarsenConfig, *, do_cleanup=True):
    """Dispatch one coarsening step according to the configuration."""
    config.validate()
    alg = config.algorithm
    if alg == "jones":
        return jones_coarsen(topo, do_cleanup=do_cleanup)
    if alg == "kraus":
        return kraus_coarsen(topo, do_cleanup=do_cleanup)
    if alg == "rgb":
        return rgb_coarsen(topo, config.seed, do_cleanup=do_cleanup)
    if alg == "node":
        return node_coarsen(topo, config.seed, do_cleanup=do_cleanup)
    s = config.desired_size
    if alg == "greedy":
        return greedy_coarsen(topo, s, config.seed, do_cleanup=do_cleanup)
    if alg == "sizebased":
        return sizebased_coarsen(topo, s, config.seed, do_cleanup=do_cleanup)
    return aspect_ratio_coarsen(topo, s, config.seed, do_cleanup=do_cleanup)
