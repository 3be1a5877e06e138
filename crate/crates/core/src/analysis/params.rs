use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::diffcore::ParamStore;
use crate::models::ParamGroups;

/// Trainable scalar counts per component; shared parameters count once.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamReport {
    pub components: BTreeMap<String, usize>,
    pub total: usize,
}

impl ParamReport {
    pub fn component(&self, name: &str) -> usize {
        self.components.get(name).copied().unwrap_or(0)
    }
}

/// Shared-block versus stacked totals at identical hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamComparison {
    pub score: ParamReport,
    pub stacked: ParamReport,
    /// `stacked.total / score.total`.
    pub ratio: f64,
}

impl ParamComparison {
    pub fn new(score: ParamReport, stacked: ParamReport) -> Self {
        let ratio = stacked.total as f64 / score.total as f64;
        Self { score, stacked, ratio }
    }
}

pub fn count_params(store: &ParamStore, model: &impl ParamGroups) -> ParamReport {
    let mut seen = HashSet::new();
    let mut components = BTreeMap::new();
    for (name, ids) in model.param_groups() {
        let n: usize = ids.into_iter().filter(|id| seen.insert(*id)).map(|id| store.value(id).numel()).sum();
        *components.entry(name.to_string()).or_insert(0) += n;
    }
    let total = components.values().sum();
    ParamReport { components, total }
}
