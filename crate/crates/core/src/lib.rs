//! Numerical lab for optimal Hardy-type inequalities of the quasilinear
//! operator `Q_{p,A,V}`.

pub mod error;
pub mod field;
pub mod green;
pub mod hardy;
pub mod level_set;
pub mod linalg;
pub mod mesh;
pub mod operator;
pub mod report;
pub mod solver;
pub mod verify;

pub use error::{Error, Result};
pub use field::{gradient, integrate, CellField, ScalarField, VectorFieldOnCells};
pub use level_set::{level_set, LevelSet};
pub use mesh::{build_interval_mesh, build_radial_mesh, build_tensor_mesh, Grading, Hole, Mesh, MeshKind, NodeTag, SubMesh};
pub use operator::{apply_q, c_p, energy, energy_sim, norm_a, x_functional, y_functional, EnergyBreakdown, MatrixField, ProblemSpec, SymMatrix};
pub use report::{DataTable, Direction, VerificationReport};
pub use solver::{comparison_check, dirichlet_solve, principal_eigen, ComparisonPair, Damping, EigenResult, Init, SolveOptions, SolveResult};
pub use green::{check_assumptions, green_potential, mollified_delta, radial_green_oracle, AnisotropicOracle, AssumptionCheck, GreenOptions, GreenPotential, RadialGreenOracle};
pub use hardy::{
    optimal_pair, perturbed_weight, transform_f, weight_case_gamma, weight_case_one, weight_from_green,
    weight_from_green_potential, HardyWeight, OptimalPair, Provenance, Route,
};
pub use verify::{
    chain_rule_residual, coarea_flux, cp_factor_defect, hardy_margin, hardy_margin_members, mesh_resolution, null_criticality_growth,
    null_cutoff, null_sequence_decay, null_sequence_field, null_sequence_k_max, simp_equivalence, ChainTransform, FamilyKind,
    MarginOptions, NullSequenceOptions, TestFunctionFamily,
};
