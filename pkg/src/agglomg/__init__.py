"""Element agglomeration and geometric multigrid on unstructured simplicial meshes.

Seven coarsening algorithms build element agglomerates on triangle/tet
meshes; coarse faces, edges and nodes define piecewise-average transfer
operators; Galerkin products stack into a multigrid hierarchy used as a
V-cycle preconditioner for FGMRES on model diffusion/transport problems.
"""

from .mesh import (BOUNDARY, DegenerateElementError, DualGraph, EdgeSet, FaceSet,
                   LevelTopology, MaterialProperties, MaterialTable, Mesh,
                   MeshMetrics, TopologyError, build_topology, generate_mesh,
                   geometry_measures, mesh_metrics)
from .mesh_io import MshFormatError, SweepRecord, read_msh, write_report_json, \
    write_sweep_csv, write_vtk
from .agglomerate import (ALGORITHMS, SIZE_BASED, Agglomeration, AgglomerateStats,
                          CleanupReport, CoarsenConfig, WeightState,
                          agglomerate_stats, aspect_ratio_coarsen, cleanup, coarsen,
                          greedy_coarsen, jones_coarsen, kraus_coarsen, node_coarsen,
                          rgb_coarsen, sizebased_coarsen)
from .partitioner import (Partition, WeightedGraph, edge_cut, partition_kway,
                          scale_weights)
from .hierarchy import (CoarseEdge, CoarseEdgeSet, CoarseFace, CoarseningError,
                        ElementMaterials, GridLevel, Hierarchy, LevelSchedule,
                        StopRule, build_hierarchy, build_prolongation,
                        galerkin_operator, grid_complexity, kraus_coarse_nodes,
                        level_schedule, operator_complexity, project_materials,
                        restriction, select_coarse_edges, select_coarse_faces,
                        select_coarse_nodes)
from .solver import (DivergenceError, ProblemSpec, SmootherConfig, SolveReport,
                     VCyclePreconditioner, absorbing_materials, apply_dirichlet,
                     assemble_operator, assemble_problem, diffuse_materials, fgmres,
                     mms_convergence, smooth, solve_problem, vcycle)

__version__ = "0.1.0"
