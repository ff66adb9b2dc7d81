//! Joint mirror multiple testing: find features that are simultaneously
//! non-null across `K` experiments while controlling the false discovery
//! rate of the joint (intersection) hypotheses.
//!
//! The procedure masks every feature whose p-value vector lands in the
//! rejection region or one of its `K` mirror images, then reveals masked
//! features one at a time, in an order constrained by a partial order and
//! guided by a kernel estimate of the local false discovery rate, until the
//! estimated false discovery proportion drops to the target level.

pub mod engine;
pub mod error;
pub mod matrix;
pub mod poset;
pub mod regions;
pub mod simulate;
pub mod unmask;

pub use engine::{
    run_directional, run_generalized, run_jm, BandwidthChoice, DirectionalResult, JMConfig,
    JMResult, UnmaskRank, Variant,
};
pub use error::{Error, Result};
pub use matrix::{PValueMatrix, PointSet, ZMatrix};
pub use poset::PartialOrder;
pub use regions::{DirectionalLabel, MaskingScheme, RegionLabel};
