//! Versioned JSON checkpoint of a trained policy.

use serde::{Deserialize, Serialize};

use super::policy::PolicyNet;
use super::ppo::TrainConfig;
use crate::error::{Error, Result};
use crate::rewards::ManagementObjective;

pub const POLICY_FORMAT: &str = "meshrl-policy";
pub const POLICY_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyCheckpoint {
    pub format: String,
    pub version: u32,
    #[serde(default)]
    pub config_hash: Option<String>,
    pub objective: ManagementObjective,
    pub train: TrainConfig,
    pub policy: PolicyNet,
}

impl PolicyCheckpoint {
    pub fn new(objective: ManagementObjective, train: TrainConfig, policy: PolicyNet) -> Self {
        PolicyCheckpoint {
            format: POLICY_FORMAT.to_string(),
            version: POLICY_VERSION,
            config_hash: None,
            objective,
            train,
            policy,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: PolicyCheckpoint =
            serde_json::from_str(text).map_err(|e| Error::format("policy checkpoint", e.to_string()))?;
        if c.format != POLICY_FORMAT {
            return Err(Error::format(
                "policy checkpoint",
                format!("format tag `{}`, expected `{POLICY_FORMAT}`", c.format),
            ));
        }
        if c.version != POLICY_VERSION {
            return Err(Error::format("policy checkpoint", format!("unsupported version {}", c.version)));
        }
        c.objective
            .validate()
            .map_err(|e| Error::format("policy checkpoint", e.to_string()))?;
        c.policy.validate()?;
        Ok(c)
    }
}
