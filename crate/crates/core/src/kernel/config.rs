use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::KernelError;
use crate::domain::{Bandwidth, LinkSpec, TrafficClass};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum BamModel {
    /// Maximum Allocation Model: isolated per-class pools.
    Mam,
    /// Russian Dolls Model: nested constraints, lower classes borrow upward.
    Rdm,
    /// AllocTC-Sharing: loans in both directions.
    Atcs,
    /// Generalized model with explicitly chosen loan directions.
    Gbam,
}

impl BamModel {
    pub const CANONICAL: [BamModel; 3] = [BamModel::Mam, BamModel::Rdm, BamModel::Atcs];

    pub fn name(self) -> &'static str {
        match self {
            BamModel::Mam => "MAM",
            BamModel::Rdm => "RDM",
            BamModel::Atcs => "ATCS",
            BamModel::Gbam => "GBAM",
        }
    }
}

impl fmt::Display for BamModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BamModel {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "MAM" => Ok(BamModel::Mam),
            "RDM" => Ok(BamModel::Rdm),
            "ATCS" => Ok(BamModel::Atcs),
            "GBAM" => Ok(BamModel::Gbam),
            other => Err(format!("unknown BAM model `{other}`")),
        }
    }
}

/// Parameters instantiating one bandwidth allocation model.
///
/// `htl` lets a class borrow idle capacity from higher-priority pools, `lth`
/// from lower-priority pools.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GbamConfig {
    pub model: BamModel,
    pub class_count: usize,
    pub htl: bool,
    pub lth: bool,
    pub preemption: bool,
    #[serde(default)]
    pub mam_oversubscription: bool,
}

impl GbamConfig {
    pub fn canonical(model: BamModel, class_count: usize) -> Self {
        let (htl, lth, preemption) = match model {
            BamModel::Mam => (false, false, false),
            BamModel::Rdm => (true, false, true),
            BamModel::Atcs | BamModel::Gbam => (true, true, true),
        };
        GbamConfig { model, class_count, htl, lth, preemption, mam_oversubscription: false }
    }

    pub fn mam(class_count: usize) -> Self {
        Self::canonical(BamModel::Mam, class_count)
    }

    pub fn rdm(class_count: usize) -> Self {
        Self::canonical(BamModel::Rdm, class_count)
    }

    pub fn atcs(class_count: usize) -> Self {
        Self::canonical(BamModel::Atcs, class_count)
    }

    pub fn gbam(class_count: usize, htl: bool, lth: bool) -> Self {
        GbamConfig { htl, lth, ..Self::canonical(BamModel::Gbam, class_count) }
    }

    pub fn with_preemption(mut self, on: bool) -> Self {
        self.preemption = on;
        self
    }

    /// Checks the canonical loan flags of the named models.
    pub fn validate(&self) -> Result<(), KernelError> {
        if self.class_count == 0 {
            return Err(KernelError::InvalidConfig("class count must be at least 1".into()));
        }
        let expected = match self.model {
            BamModel::Mam => Some((false, false)),
            BamModel::Rdm => Some((true, false)),
            BamModel::Atcs => Some((true, true)),
            BamModel::Gbam => None,
        };
        if let Some((htl, lth)) = expected {
            if (self.htl, self.lth) != (htl, lth) {
                return Err(KernelError::InvalidConfig(format!(
                    "{} requires htl={htl}, lth={lth}; use GBAM for custom loan flags",
                    self.model
                )));
            }
        }
        if self.mam_oversubscription && self.model != BamModel::Mam {
            return Err(KernelError::InvalidConfig("oversubscription is only defined for MAM".into()));
        }
        Ok(())
    }

    /// Pools class `tc` may charge, in fill order: own pool, then LTH pools
    /// ascending from 0, then HTL pools ascending from `tc + 1`.
    pub fn admissible_pools(&self, tc: TrafficClass) -> Vec<usize> {
        self.admissible_iter(tc).collect()
    }

    /// [`GbamConfig::admissible_pools`] without allocating.
    pub fn admissible_iter(&self, tc: TrafficClass) -> impl Iterator<Item = usize> + Clone {
        let lth = if self.lth { 0..tc } else { 0..0 };
        let htl = if self.htl { tc + 1..self.class_count } else { 0..0 };
        std::iter::once(tc).chain(lth).chain(htl)
    }

    pub fn is_admissible(&self, tc: TrafficClass, pool: usize) -> bool {
        pool == tc || (self.lth && pool < tc) || (self.htl && pool > tc && pool < self.class_count)
    }

    /// Pool sizes for a link. RDM telescopes the nested constraints so that
    /// the pools at or above `j` add up to `bc[j]`; the other models use the
    /// constraints directly.
    pub fn pool_layout(&self, spec: &LinkSpec) -> Vec<Bandwidth> {
        let bc = &spec.bc.0;
        match self.model {
            BamModel::Rdm => (0..bc.len())
                .map(|p| {
                    let next = bc.get(p + 1).copied().unwrap_or(Bandwidth::ZERO);
                    bc[p].saturating_sub(next)
                })
                .collect(),
            _ => bc.clone(),
        }
    }
}
