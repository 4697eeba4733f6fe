//! Declarative run configuration, one JSON document per run.

use serde::{Deserialize, Serialize};

use crate::cosearch::{CoSearchConfig, RandomSearchConfig, SearchProblem};
use crate::costmodel::{HardwareCostTables, OracleSweep};
use crate::das::DasConfig;
use crate::dns::{DnsConfig, SyntheticTask};
use crate::error::{Error, Result};
use crate::gads::AccelSpaceSpec;
use crate::workload::NetworkSpace;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputPaths {
    /// Directory for result JSON and trace CSV files; nothing is written
    /// when absent.
    #[serde(default)]
    pub dir: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub network_space: NetworkSpace,
    #[serde(default)]
    pub accelerator_space: AccelSpaceSpec,
    #[serde(default)]
    pub cost_tables: HardwareCostTables,
    #[serde(default)]
    pub task: SyntheticTask,
    #[serde(default)]
    pub das: DasConfig,
    #[serde(default)]
    pub dns: DnsConfig,
    #[serde(default)]
    pub cosearch: CoSearchConfig,
    #[serde(default)]
    pub random: RandomSearchConfig,
    #[serde(default)]
    pub oracle_sweep: OracleSweep,
    #[serde(default)]
    pub output: OutputPaths,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "schema_version {} unsupported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        self.network_space.validate()?;
        self.cost_tables.validate()?;
        self.task.validate()?;
        self.das.validate()?;
        self.dns.validate()?;
        self.cosearch.validate()?;
        self.problem().accel_space()?;
        Ok(())
    }

    /// Sets every seed in the document.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.das.rng_seed = seed;
        self.dns.seed = seed;
        self.cosearch.seed = seed;
        self.random.seed = seed;
        self
    }

    pub fn problem(&self) -> SearchProblem {
        SearchProblem {
            network_space: self.network_space.clone(),
            accelerator_space: self.accelerator_space.clone(),
            tables: self.cost_tables,
            task: self.task.clone(),
        }
    }
}
