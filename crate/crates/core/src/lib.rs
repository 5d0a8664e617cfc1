// SPDX-License-Identifier: Apache-2.0

//! Prevalence-aware performance evaluation of rare-event classifiers.

pub mod curves;
pub mod datamodel;
pub mod design;
pub mod error;
pub mod metrics;
pub mod report;
pub mod rng;
pub mod robustness;
pub mod scle;
pub mod stats;
pub mod synth;

pub use datamodel::{apply_threshold, Dataset, EvaluationCase, ReferenceLabel, StratumSpec};
pub use error::{Error, ErrorKind, Result};
pub use metrics::{Cell, CiOptions, ConfusionCounts, Metric, MetricEstimate};
pub use report::{Consideration, EvaluationOutputs};
