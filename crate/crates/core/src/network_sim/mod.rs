//! Forward-only, desk-scale model of the detector wiring: a recursive feature
//! pyramid whose backbone stages use switchable atrous convolution, SE-style
//! channel gating on each pyramid level, and a cascade of box-refinement heads.
//!
//! Nothing here is trained. All parameters are drawn once from a seed, which
//! makes the simulator a harness for checking shapes, reductions and
//! determinism of the wiring.

pub mod cascade;
pub mod ops;
pub mod rfp;
pub mod simulate;

pub use cascade::{cascade_refine, BoxDelta, CascadeSpec};
pub use ops::{conv2d, sac_apply, se_fuse, switch_map, ConvKernel, FeatureMap, SeParams, Switch, SwitchParams};
pub use rfp::{rfp_forward, StageParams, StageSpec};
pub use simulate::{run_simulation, LevelSummary, SimulateConfig, SimulationReport};
