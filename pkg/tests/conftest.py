import numpy as np
import pytest

from agglomg import mesh as mesh_mod


@pytest.fixture(scope="session")
def tri_single():
    return mesh_mod.Mesh(
        dim=2,
        node_coords=np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]),
        elements=np.array([[0, 1, 2]]),
        material_id=np.zeros(1, dtype=np.int64),
    )


@pytest.fixture(scope="session")
def tri_pair():
    """Two triangles sharing the diagonal edge of the unit square."""
    return mesh_mod.generate_mesh(2, 1, extent=1.0)


@pytest.fixture(scope="session")
def tet_single():
    cube = mesh_mod.generate_mesh(3, 1, extent=1.0)
    return mesh_mod.Mesh(3, cube.node_coords, cube.elements[:1],
                         np.zeros(1, dtype=np.int64))


@pytest.fixture(scope="session")
def mesh2d_small():
    """Structured 16x16 2D mesh (512 triangles), no jitter."""
    return mesh_mod.generate_mesh(2, 16, seed=2)


@pytest.fixture(scope="session")
def topo2d_small(mesh2d_small):
    return mesh_mod.LevelTopology.from_mesh(mesh2d_small)


@pytest.fixture(scope="session")
def mesh2d_jittered():
    return mesh_mod.generate_mesh(2, 16, jitter=0.2, seed=5)


@pytest.fixture(scope="session")
def topo2d_jittered(mesh2d_jittered):
    return mesh_mod.LevelTopology.from_mesh(mesh2d_jittered)


@pytest.fixture(scope="session")
def mesh3d_small():
    """6x6x6 Kuhn mesh (1296 tets) with mild jitter."""
    return mesh_mod.generate_mesh(3, 6, jitter=0.15, seed=4)


@pytest.fixture(scope="session")
def topo3d_small(mesh3d_small):
    return mesh_mod.LevelTopology.from_mesh(mesh3d_small)
