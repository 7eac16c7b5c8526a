//! Shape calculus and level-set topology optimisation on unfitted P1 meshes.

pub mod adjoint;
pub mod analytic;
pub mod dual;
pub mod error;
pub mod evolve;
pub mod fem;
pub mod functionals;
pub mod isovol;
pub mod levelset;
pub mod linalg;
pub mod mesh;
pub mod optimizer;
pub mod presets;
pub mod quadrature;
pub mod vtk;

pub use dual::{Dual1, Dual2, Scalar};
pub use error::{Error, Result};
pub use levelset::{build_cut, classify_cells, CellState, CutTopology, LevelSet, Phase};
pub use mesh::{build_skeleton, build_structured_mesh, BBox, FacetSkeleton, Mesh2D, Point};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    struct Introduction;
    #[doc = include_str!("../../../book/src/level-sets.md")]
    struct LevelSets;
    #[doc = include_str!("../../../book/src/shape-derivatives.md")]
    struct ShapeDerivatives;
    #[doc = include_str!("../../../book/src/isolated-volumes.md")]
    struct IsolatedVolumes;
    #[doc = include_str!("../../../book/src/transport.md")]
    struct Transport;
    #[doc = include_str!("../../../book/src/adjoint.md")]
    struct Adjoint;
    #[doc = include_str!("../../../book/src/optimisation.md")]
    struct Optimisation;
    #[doc = include_str!("../../../book/src/cli.md")]
    struct Cli;
}
