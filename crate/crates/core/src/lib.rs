//! Interactive exploration engine: learns a user's interest regions from
//! relevance feedback on sampled tuples and synthesizes the range query that
//! retrieves them.
//!
//! All geometry works on attributes normalized to `[0, 100]`; raw units only
//! appear in loaded files, returned samples and rendered queries.

pub mod cluster;
pub mod dataset;
pub mod error;
pub mod grid;
pub mod phases;
pub mod session;
pub mod simuser;
pub mod tree;

pub use dataset::{distance, load_dataset, random_within, sample_reduce, AttributeSpec, Dataset, DistanceMetric, Interval, Region, Schema, SchemaConfig, TupleId};
pub use error::{Error, Result};
pub use phases::{Phase, PhaseConfig};
pub use session::{DiscoveryMode, ExplorationSession, Feedback, FeedbackItem, Label, Metrics, Prediction, Resources, Sample, SessionConfig, Truth};
pub use simuser::{SimLabel, SimUserConfig, SimulatedUser, SizeClass, SynthKind, TargetQuery};
pub use tree::{Class, DecisionTree, ExtractionQuery, LabeledSample, RegionSet, TreeParams};
