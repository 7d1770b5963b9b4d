//! Search-signature features for regions and the spatial prediction
//! benchmarks built on them.

pub mod codes;
pub mod error;
pub mod eval;
pub mod harness;
pub mod io;
pub mod models;
pub mod rng;
pub mod signature;
pub mod spatial;
pub mod stats;
pub mod synth;

pub use codes::{CountyFips, RegionCode, StateFips, ZipCode};
pub use error::{Error, Result};
pub use eval::{r_squared, EvalReport, TaskKind};
pub use io::{LabelLevel, LabelTable, QueryLog, QueryLogRecord};
pub use models::{IdwModel, IdwParams, MedianModel, ModelKind, RidgeModel};
pub use rng::SplitMix64;
pub use signature::{DatasetManifest, SearchSignature, SignatureSet, SignatureStatus, Vocabulary};
pub use spatial::{LatLon, RegionHierarchy, SplitSpec, ZipRecord};
