//! Sensor placement and flow prediction on networks with nearly conserved flows.

pub mod dataio;
pub mod error;
pub mod experiment;
pub mod flows;
pub mod graph;
pub mod instances;
pub mod metrics;
pub mod placement;
pub mod potential;
pub mod prediction;
pub mod spectral;

pub use error::{Error, Result};
pub use flows::{add_noise, synthetic_flow, NoiseParams, SyntheticParams};
pub use graph::{EdgeFlow, FlowNetwork, IncidenceMatrix};
pub use metrics::{rrqr_bound, score, score_scope, MetricReport, Scope};
pub use placement::{place, Algorithm, Budget, PlacementRequest, RecursiveRoute, SensorPlan};
pub use potential::{build_potential_cache, PotentialCache};
pub use prediction::{build_cache, predict_flows, PredictionProblem, PredictorCache, DEFAULT_LAMBDA};
