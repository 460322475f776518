use std::collections::BTreeSet;
use std::path::Path;

use anyhow::{bail, Context};
use cogmap_core::board_sim::{AgentProfile, FaultProfile};
use cogmap_core::session::AgeGroup;
use serde::{Deserialize, Serialize};

/// One simulated population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupProfile {
    /// Prefix for session ids; letters, digits, `-` and `_` only.
    pub name: String,
    pub group: AgeGroup,
    pub agent: AgentProfile,
    /// When present, session logs are corrupted with these rates and a
    /// corrections file is written next to each one.
    #[serde(default)]
    pub faults: Option<FaultProfile>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileSet {
    pub groups: Vec<GroupProfile>,
}

impl ProfileSet {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let set: ProfileSet = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        set.validate().with_context(|| format!("in {}", path.display()))?;
        Ok(set)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        let mut names = BTreeSet::new();
        for g in &self.groups {
            if g.name.is_empty() || !g.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
                bail!("group name {:?} must be letters, digits, '-' or '_'", g.name);
            }
            if !names.insert(&g.name) {
                bail!("group name {:?} used twice", g.name);
            }
            g.agent.validate().with_context(|| format!("group {}", g.name))?;
            if let Some(f) = &g.faults {
                f.validate().with_context(|| format!("group {}", g.name))?;
            }
        }
        Ok(())
    }
}
