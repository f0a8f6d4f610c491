"""Round-trip the supported file formats.

Writes a small MSH 2.2 mesh by hand, reads it back, coarsens it, and
exports the agglomerate ids as a legacy VTK file plus a JSON solve report
and a CSV sweep table.
"""
import pathlib

from agglomg import (CoarsenConfig, LevelTopology, ProblemSpec, SweepRecord,
                     coarsen, read_msh, solve_problem, write_report_json,
                     write_sweep_csv, write_vtk)
from agglomg.mesh_io import read_vtk_cell_data

out = pathlib.Path("io_out")
out.mkdir(exist_ok=True)

# a 2x2 split square, four triangles around the center node, tagged rim
msh = """$MeshFormat
2.2 0 8
$EndMeshFormat
$Nodes
5
1 0.0 0.0 0.0
2 1.0 0.0 0.0
3 1.0 1.0 0.0
4 0.0 1.0 0.0
5 0.5 0.5 0.0
$EndNodes
$Elements
8
1 2 2 1 1 1 2 5
2 2 2 1 1 2 3 5
3 2 2 1 1 3 4 5
4 2 2 1 1 4 1 5
5 1 2 10 1 1 2
6 1 2 11 1 2 3
7 1 2 12 1 3 4
8 1 2 13 1 4 1
$EndElements
"""
msh_path = out / "square.msh"
msh_path.write_text(msh)

mesh = read_msh(msh_path)
print(f"read {mesh.n_elements} triangles, {mesh.n_nodes} nodes, "
      f"boundary tags {sorted(set(mesh.boundary_tag.values()))}")

topo = LevelTopology.from_mesh(mesh)
agg = coarsen(topo, CoarsenConfig("greedy", desired_size=2, seed=0))
vtk_path = out / "square.vtk"
write_vtk(vtk_path, mesh, [agg])
print(f"wrote {vtk_path}; ids per element:",
      read_vtk_cell_data(vtk_path)["agglomerate_L1"].tolist())

# a solve report and a one-row sweep table on a generated mesh
from agglomg import generate_mesh

big = generate_mesh(2, 32, jitter=0.2, seed=2)
x, report, hier = solve_problem(big, ProblemSpec("diffuse"),
                                CoarsenConfig("sizebased", desired_size=24, seed=1))
write_report_json(out / "report.json", report)
record = SweepRecord(algorithm="sizebased", desired_size=24,
                     actual_average_size=24.0,
                     grid_complexity=report.meta["grid_complexity"],
                     node_element_ratio=2.0, average_connectivity=3.3,
                     iterations=report.iterations,
                     solve_time_s=report.solve_time_s,
                     setup_time_s=report.setup_time_s)
write_sweep_csv(out / "sweep.csv", [record])
print(f"wrote {out / 'report.json'} and {out / 'sweep.csv'}")
