use super::{DesignMatrix, TimeSeriesDataset};
use crate::error::{Error, Result};

/// Complete cases on a compressed timeline.
#[derive(Debug, Clone)]
pub struct SplicedData {
    /// Surviving rows of the original dataset, re-indexed consecutively.
    pub dataset: TimeSeriesDataset,
    /// Surviving design rows; lagged slots still hold the original lagged outcomes.
    pub design: DesignMatrix,
    /// 0-based original time of each surviving row.
    pub original_times: Vec<usize>,
}

impl SplicedData {
    /// Spliced position of the last survivor at or before original time `t`.
    pub fn spliced_index_at(&self, t: usize) -> Option<usize> {
        match self.original_times.binary_search(&t) {
            Ok(i) => Some(i),
            Err(0) => None,
            Err(i) => Some(i - 1),
        }
    }
}

/// Drop every row whose outcome is missing, whose regressors reference a
/// missing outcome, or which lies in the burn-in, and re-index the survivors.
pub fn splice_complete_cases(ds: &TimeSeriesDataset, dm: &DesignMatrix) -> Result<SplicedData> {
    if ds.len() != dm.len() {
        return Err(Error::Contract("dataset and design differ in length".into()));
    }
    let keep: Vec<usize> = (0..dm.len())
        .filter(|&t| !dm.is_burn_in(t) && ds.y()[t].is_some() && !dm.incomplete()[t] && !dm.imputed()[t])
        .collect();
    let needed = dm.coefficient_count() + 5;
    if keep.len() < needed {
        return Err(Error::InsufficientData(format!(
            "{} complete rows survive splicing, at least {needed} required",
            keep.len()
        )));
    }
    Ok(SplicedData { dataset: ds.select(&keep), design: dm.subset(&keep), original_times: keep })
}
