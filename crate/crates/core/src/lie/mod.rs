//! Matrix Lie groups, their algebras, metrics and reductive splits.

mod algebra;
mod group;
mod split;

pub use algebra::{structure_constants, trace_gram, Algebra, MetricData, MetricFlavor, StructureConstants};
pub use group::{build_group, GroupFamily, LieGroupSpec, Membership, DEFAULT_MEMBERSHIP_TOL};
pub use split::ReductiveSplit;
