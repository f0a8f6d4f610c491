import numpy as np
import pytest
import scipy.sparse as sp

from agglomg import hierarchy as hi
from agglomg.agglomerate import ALGORITHMS, Agglomeration, CoarsenConfig
from agglomg.hierarchy import (CoarseningError, ElementMaterials,
                               build_hierarchy, build_prolongation,
                               galerkin_operator, grid_complexity, level_schedule,
                               operator_complexity, project_materials, restriction,
                               select_coarse_edges, select_coarse_faces,
                               select_coarse_nodes)
from agglomg.mesh import (BOUNDARY, LevelTopology, MaterialProperties,
                          generate_mesh)


@pytest.fixture(scope="module")
def block_case():
    """4x4-cell structured mesh agglomerated into 2x2 blocks by hand."""
    mesh = generate_mesh(2, 4, extent=1.0)
    topo = LevelTopology.from_mesh(mesh)
    cells = np.stack(np.meshgrid(np.arange(4), np.arange(4), indexing="ij"),
                     axis=-1).reshape(-1, 2)
    block = (cells[:, 0] // 2) * 2 + cells[:, 1] // 2
    agg = Agglomeration(np.repeat(block, 2))
    return mesh, topo, agg


class TestCoarseFaces:
    def test_two_sides_per_interface(self, block_case):
        _, topo, agg = block_case
        cfs = select_coarse_faces(topo, agg)
        interior = [cf for cf in cfs if cf.opposite != BOUNDARY]
        # 4 blocks in a square: 4 interfaces, two sides each
        assert len(interior) == 8
        pairs = {(cf.owner, cf.opposite) for cf in interior}
        assert len(pairs) == 8

    def test_single_agglomerate_boundary_tags(self, tri_pair):
        topo = LevelTopology.from_mesh(tri_pair)
        agg = Agglomeration(np.zeros(2, dtype=np.int64))
        cfs = select_coarse_faces(topo, agg)
        assert all(cf.opposite == BOUNDARY for cf in cfs)
        assert sorted(cf.tag for cf in cfs) == [1, 2, 3, 4]

    def test_disconnected_interface_splits(self):
        # two columns interleaved (A B A B) over a 4x1-ish strip: the A|B
        # interface between column pairs is disconnected, giving extra faces
        mesh = generate_mesh(2, 4, extent=1.0)
        topo = LevelTopology.from_mesh(mesh)
        cells = np.stack(np.meshgrid(np.arange(4), np.arange(4), indexing="ij"),
                         axis=-1).reshape(-1, 2)
        col = cells[:, 0]
        assign = np.repeat(np.where(col % 2 == 0, 0, 1), 2)
        agg = Agglomeration(assign)
        cfs = select_coarse_faces(topo, agg)
        interior = [cf for cf in cfs if cf.opposite != BOUNDARY]
        # interfaces at x=1, x=2, x=3: strips 1 and 3 belong to the same
        # (0, 1) pair but are disconnected -> components split them
        comps = {(cf.owner, cf.opposite, cf.component) for cf in interior}
        assert len(comps) == 6  # 3 disconnected strips x 2 sides
        assert max(cf.component for cf in interior) == 2


class TestCoarseNodes:
    def test_block_corner_oracle(self, block_case):
        _, topo, agg = block_case
        cfs = select_coarse_faces(topo, agg)
        nodes = select_coarse_nodes(topo, agg, cfs)
        expected = sorted(i * 5 + j for i in (0, 2, 4) for j in (0, 2, 4))
        assert sorted(int(v) for v in nodes) == expected

    def test_rule_instances(self):
        # direct instances of the counting rule
        assert 8 > 2 ** 0 * 4          # 2D: 8 faces, 4 elements -> coarse
        assert not (2 > 2 ** 0 * 2)    # 2D interface-interior node
        assert not (6 > 2 ** 1 * 3)    # 3D: 6 faces, 3 elements -> not coarse

    def test_no_coarse_nodes_error(self, tri_pair):
        topo = LevelTopology.from_mesh(tri_pair)
        agg = Agglomeration(np.array([0, 1]))
        cfs = select_coarse_faces(topo, agg)
        with pytest.raises(CoarseningError):
            build_prolongation(topo, agg, cfs, np.zeros(0, dtype=np.int64))

    def test_deficient_agglomerates_repaired_in_hierarchy(self):
        # 3D greedy regularly produces lens-shaped agglomerates with no
        # vertex under the counting rule; the hierarchy merges them away
        # so every agglomerate on every level owns a coarse node
        mesh = generate_mesh(3, 6, jitter=0.15, seed=4)
        h = build_hierarchy(mesh, CoarsenConfig("greedy", desired_size=8, seed=7))
        topo = h.fine_topology
        for lvl in h.levels:
            an, aa = hi._node_agg_pairs(topo, lvl.agglomeration)
            covered = np.zeros(lvl.agglomeration.n_agglomerates, dtype=bool)
            is_coarse = np.zeros(topo.n_nodes, dtype=bool)
            is_coarse[lvl.coarse_nodes] = True
            covered[aa[is_coarse[an]]] = True
            assert covered.all()
            topo = lvl.topology


class TestCoarseEdges:
    def test_slab_interface_rim(self):
        # cube cut into two slabs: coarse edges trace the interface rim
        # as open chains (the per-tag boundary faces cut the ring at the
        # box edges before the loop rule is ever needed)
        mesh = generate_mesh(3, 2, extent=1.0)
        topo = LevelTopology.from_mesh(mesh)
        cells = np.stack(np.meshgrid(*[np.arange(2)] * 3, indexing="ij"),
                         axis=-1).reshape(-1, 3)
        assign = np.repeat(cells[:, 0], 6)
        agg = Agglomeration(assign)
        cfs = select_coarse_faces(topo, agg)
        ces = select_coarse_edges(topo, cfs)
        assert len(ces) > 0
        for ce in ces.edges:
            ends = ce.endpoints
            assert len(ends) == 2
            assert ends[0] != ends[1]

    def test_cycle_broken_into_two_chains(self, mesh3d_small):
        # the loop repair itself: a pure 4-cycle of fine edges splits at
        # its two farthest nodes into two open chains
        topo = LevelTopology.from_mesh(generate_mesh(3, 2, extent=1.0))
        edges = topo.edges
        # find a 4-cycle: nodes of one lattice square
        keys = {tuple(sorted(e)): i for i, e in enumerate(edges.nodes.tolist())}
        n = 3  # (n+1) = 3 nodes per axis

        def nid(i, j, k):
            return (i * 3 + j) * 3 + k

        quad = [nid(0, 0, 0), nid(0, 1, 0), nid(0, 1, 1), nid(0, 0, 1)]
        cyc = []
        for a, b in zip(quad, quad[1:] + quad[:1]):
            cyc.append(keys[tuple(sorted((a, b)))])
        chains = hi._edge_chains(edges, cyc)
        assert len(chains) == 2
        assert sorted(len(c) for c in chains) == [2, 2]

    def test_straight_chain_endpoints(self):
        mesh = generate_mesh(3, 3, extent=1.0)
        topo = LevelTopology.from_mesh(mesh)
        cells = np.stack(np.meshgrid(*[np.arange(3)] * 3, indexing="ij"),
                         axis=-1).reshape(-1, 3)
        assign = np.repeat(cells[:, 0], 6)  # three slabs
        agg = Agglomeration(assign)
        cfs = select_coarse_faces(topo, agg)
        ces = select_coarse_edges(topo, cfs)
        # every chain is a connected simple path over its fine edges
        for ce in ces.edges:
            nodes = {}
            for e in ce.fine_edges:
                for v in topo.edges.nodes[e]:
                    nodes[int(v)] = nodes.get(int(v), 0) + 1
            degree_one = [v for v, c in nodes.items() if c == 1]
            assert len(degree_one) == 2 or len(ce.fine_edges) == 1


class TestProlongation:
    def test_injection_and_row_sums(self, block_case):
        _, topo, agg = block_case
        cfs = select_coarse_faces(topo, agg)
        cn = select_coarse_nodes(topo, agg, cfs)
        P = build_prolongation(topo, agg, cfs, cn)
        assert P.shape == (topo.n_nodes, len(cn))
        sums = np.asarray(P.sum(axis=1)).ravel()
        assert np.abs(sums - 1.0).max() < 1e-14
        for col, node in enumerate(cn):
            row = P.getrow(int(node))
            assert row.nnz == 1
            assert row.data[0] == 1.0
            assert row.indices[0] == col

    def test_face_node_two_point_average(self, block_case):
        # a node interior to an interface averages the two endpoint
        # coarse nodes: value (1 + 3) / 2 = 2
        _, topo, agg = block_case
        cfs = select_coarse_faces(topo, agg)
        cn = select_coarse_nodes(topo, agg, cfs)
        P = build_prolongation(topo, agg, cfs, cn)
        # node (2, 1) = id 11 lies inside the interface x=0.5 between
        # blocks 0 and 1, whose endpoints are nodes 10 and 12
        row = P.getrow(11).toarray().ravel()
        cols = {int(n): c for c, n in enumerate(cn)}
        assert row[cols[10]] == pytest.approx(0.5)
        assert row[cols[12]] == pytest.approx(0.5)
        values = np.zeros(len(cn))
        values[cols[10]] = 1.0
        values[cols[12]] = 3.0
        assert (P @ values)[11] == pytest.approx(2.0)

    def test_interior_equal_thirds(self):
        # synthetic check of the equal-weight rule instance
        w = np.full(3, 1.0 / 3.0)
        assert w.sum() == pytest.approx(1.0)
        assert np.unique(w).size == 1


class TestRestriction:
    def test_exact_transpose(self, block_case):
        _, topo, agg = block_case
        cfs = select_coarse_faces(topo, agg)
        cn = select_coarse_nodes(topo, agg, cfs)
        P = build_prolongation(topo, agg, cfs, cn)
        R = restriction(P)
        assert (R != P.T).nnz == 0
        assert (restriction(R) != P).nnz == 0
        assert R.shape == (P.shape[1], P.shape[0])

    def test_entry_moved(self):
        P = sp.csr_matrix(np.array([[0.0, 1.0], [1 / 3, 0.0]]))
        R = restriction(P)
        assert R[0, 1] == pytest.approx(1 / 3)


class TestMaterials:
    def test_uniform_material_preserved(self):
        mats = ElementMaterials(source=np.full(4, 2.0), sigma_t=np.full(4, 5.0),
                                sigma_s=np.full(4, 1.0))
        agg = Agglomeration(np.array([0, 0, 1, 1]))
        out = project_materials(mats, agg, np.ones(4))
        assert np.allclose(out.source, 2.0)
        assert np.allclose(out.sigma_t, 5.0)

    def test_equal_volume_average(self):
        mats = ElementMaterials(source=np.zeros(2), sigma_t=np.array([0.5, 1.0]),
                                sigma_s=np.zeros(2))
        agg = Agglomeration(np.zeros(2, dtype=np.int64))
        out = project_materials(mats, agg, np.ones(2))
        assert out.sigma_t[0] == pytest.approx(0.75)

    def test_volume_weighting(self):
        mats = ElementMaterials(source=np.array([1.0, 0.0]), sigma_t=np.ones(2),
                                sigma_s=np.zeros(2))
        agg = Agglomeration(np.zeros(2, dtype=np.int64))
        out = project_materials(mats, agg, np.array([1.0, 3.0]))
        assert out.source[0] == pytest.approx(0.25)


class TestGalerkin:
    def test_identity_prolongation(self):
        A = sp.random(12, 12, density=0.4, random_state=0, format="csr")
        A = A + A.T
        P = sp.eye(12, format="csr")
        Ac = galerkin_operator(A, P)
        assert abs(Ac - A).max() < 1e-15

    def test_symmetry_preserved(self, block_case):
        _, topo, agg = block_case
        cfs = select_coarse_faces(topo, agg)
        cn = select_coarse_nodes(topo, agg, cfs)
        P = build_prolongation(topo, agg, cfs, cn)
        rng = np.random.default_rng(1)
        B = sp.random(topo.n_nodes, topo.n_nodes, density=0.2,
                      random_state=2, format="csr")
        A = B + B.T
        Ac = galerkin_operator(A, P)
        assert abs(Ac - Ac.T).max() <= 1e-12 * abs(Ac).max()

    def test_1d_hand_oracle(self):
        A = sp.csr_matrix(np.array([[2.0, -1.0], [-1.0, 2.0]]))
        P = sp.csr_matrix(np.array([[1.0], [1.0]]))
        Ac = galerkin_operator(A, P)
        assert Ac.shape == (1, 1)
        assert Ac[0, 0] == 2.0  # exact

    def test_dimension_mismatch(self):
        A = sp.eye(3, format="csr")
        P = sp.csr_matrix(np.ones((4, 1)))
        with pytest.raises(ValueError):
            galerkin_operator(A, P)


class TestSchedule:
    def test_2d_defaults(self):
        sched = level_schedule(2)
        assert [sched.size_for(k, 10_000) for k in range(4)] == [24, 4, 4, 4]

    def test_3d_small_grid_rule(self):
        sched = level_schedule(3)
        assert sched.size_for(0, 219_000) == 168
        assert sched.size_for(1, 5_000) == 8
        assert sched.size_for(2, 80) == 4

    def test_override(self):
        sched = level_schedule(2, top=8)
        assert sched.size_for(0, 1000) == 8


class TestBuildHierarchy:
    def test_stop_threshold_no_coarsening(self):
        mesh = generate_mesh(2, 5, extent=1.0)  # 36 nodes < 60
        h = build_hierarchy(mesh, CoarsenConfig("greedy", desired_size=4))
        assert h.n_levels == 1
        assert grid_complexity(h) == pytest.approx(1.0)

    def test_node_counts_strictly_decrease(self, mesh2d_jittered):
        h = build_hierarchy(mesh2d_jittered,
                            CoarsenConfig("sizebased", desired_size=8, seed=1))
        counts = h.node_counts
        assert all(a > b for a, b in zip(counts, counts[1:]))

    @pytest.mark.parametrize("alg", ALGORITHMS)
    def test_all_algorithms_reapply_on_coarse_levels(self, mesh2d_jittered, alg):
        h = build_hierarchy(mesh2d_jittered,
                            CoarsenConfig(alg, desired_size=8, seed=2))
        assert h.n_levels >= 2

    def test_deterministic(self, mesh2d_jittered):
        a = build_hierarchy(mesh2d_jittered, CoarsenConfig("rgb", seed=3))
        b = build_hierarchy(mesh2d_jittered, CoarsenConfig("rgb", seed=3))
        assert a.node_counts == b.node_counts
        for la, lb in zip(a.levels, b.levels):
            assert np.array_equal(la.agglomeration.element_to_agg,
                                  lb.agglomeration.element_to_agg)

    def test_materials_projected_per_level(self, mesh2d_jittered):
        table = {0: MaterialProperties(1.0, 10.0, 10.0),
                 1: MaterialProperties(0.0, 10.0, 10.0)}
        h = build_hierarchy(mesh2d_jittered,
                            CoarsenConfig("greedy", desired_size=8, seed=1),
                            materials=table)
        for lvl in h.levels:
            assert lvl.materials is not None
            assert np.allclose(lvl.materials.sigma_t, 10.0)


class TestComplexities:
    def test_single_level_is_one(self):
        assert grid_complexity([500]) == pytest.approx(1.0)

    def test_stated_arithmetic(self):
        assert grid_complexity([100, 25, 6]) == pytest.approx(1.31)

    def test_geometric_limits(self):
        counts2d = [4 ** k for k in range(4, -1, -1)]
        assert abs(grid_complexity(counts2d) - 4 / 3) / (4 / 3) < 0.01
        counts3d = [8 ** k for k in range(4, -1, -1)]
        assert abs(grid_complexity(counts3d) - 8 / 7) / (8 / 7) < 0.01

    def test_operator_complexity(self, mesh2d_jittered):
        from agglomg.solver import ProblemSpec, assemble_problem
        A, _ = assemble_problem(mesh2d_jittered, ProblemSpec("diffuse"))
        h = build_hierarchy(mesh2d_jittered,
                            CoarsenConfig("sizebased", desired_size=8, seed=1),
                            operator=A)
        assert operator_complexity(h) > 1.0
