//! Inference procedures for the residual process: a Brownian-motion
//! excursion test, Shapiro-Wilk and robust Jarque-Bera normality tests with
//! their simulation protocols, and the detrending-moving-average (DMA)
//! goodness-of-fit test for fBm.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

pub mod briane;
pub mod dma;
pub mod protocols;
pub mod rjb;
pub mod shapiro;

pub use briane::{bm_quantile, bm_quantile_table, briane_bm_test, briane_statistic, BmQuantileConfig, BmQuantileTable};
pub use dma::{dma_null_distribution, dma_statistic, dma_test, p_value_from_counts, CovarianceMode, DmaConfig};
pub use protocols::{
    dma_subset_protocol, rjb_block_protocol, rjb_table, sw_simulation_protocol, DmaProtocolConfig, DmaProtocolSummary,
    ResidualSimulation, RjbBlockResult, RjbTable, SwSummary,
};
pub use rjb::{robust_jarque_bera, RjbConstants, RjbNull};
pub use shapiro::{shapiro_wilk, ShapiroWilk, SW_ACCEPT_THRESHOLD};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Reject,
    Warning,
    Accept,
}

impl fmt::Display for Decision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Decision::Reject => "reject",
            Decision::Warning => "warning",
            Decision::Accept => "accept",
        })
    }
}

/// Outcome of one test. Exactly one of `p_value` and `region` is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub test: String,
    pub statistic: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub p_value: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub region: Option<(f64, f64)>,
    pub decision: Decision,
    pub alpha: f64,
    pub seed: Option<u64>,
    #[serde(default)]
    pub metadata: BTreeMap<String, serde_json::Value>,
}

impl TestReport {
    pub(crate) fn meta(mut self, key: &str, value: impl Into<serde_json::Value>) -> Self {
        self.metadata.insert(key.to_string(), value.into());
        self
    }
}
