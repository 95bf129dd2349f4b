//! Nonparametric difference-in-differences with a continuous treatment on
//! repeated cross-sections.
//!
//! The pipeline: locate the treatment value where a period's treatment
//! distribution crosses the reference period's ([`empirical`]), recover the
//! time trend of outcomes at that point by quantile-quantile transport
//! ([`trend`]), then compare adjusted outcomes across periods at equal
//! treatment ranks ([`effects`]). [`bootstrap`] wraps any estimand in a
//! percentile bootstrap and [`sim`] provides synthetic designs with
//! brute-force oracles.

// `!(a < b)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bootstrap;
pub mod data;
pub mod effects;
pub mod empirical;
pub mod error;
pub mod kernel;
pub mod model;
pub mod piecewise;
pub mod rng;
pub mod sim;
pub mod trend;
pub mod transport;

pub use data::{load_csv, load_csv_periods, save_csv, CrossSection, CsvSchema, Dataset, PeriodSummary};
pub use empirical::{ecdf, estimate_crossing, rank_map, CrossingPoint, EmpiricalCdf, RankMap};
pub use error::{Error, Result};
pub use kernel::{Bandwidth, KernelFamily, KernelSpec};
pub use piecewise::{fit_piecewise_q, PiecewiseQFit};
pub use effects::{BoundsResult, EffectEstimate, EffectKind};
pub use model::{ControlGroup, Model, PipelineConfig};
pub use trend::{ControlSet, TrendMap, TrendOptions};
pub use bootstrap::{bootstrap, bootstrap_many, bootstrap_with, BootstrapOptions, BootstrapResult, Estimand};
pub use sim::{DgpSpec, Population};
