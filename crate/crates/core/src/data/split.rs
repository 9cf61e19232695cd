use super::{Dataset, Sample};
use crate::error::{FimError, Result};

/// Smallest and largest target step, or `None` without samples.
pub fn target_step_range(ds: &Dataset) -> Option<(i64, i64)> {
    let lo = ds.samples.iter().map(|s| s.step).min()?;
    let hi = ds.samples.iter().map(|s| s.step).max()?;
    Some((lo, hi))
}

/// Samples with target step `<= cutoff` train, later ones test. Accepted
/// cutoffs run from one before the first target step to the last.
pub fn split_temporal(ds: &Dataset, cutoff: i64) -> Result<(Vec<&Sample>, Vec<&Sample>)> {
    let (lo, hi) = target_step_range(ds).ok_or(FimError::EmptyInput("samples"))?;
    if cutoff < lo - 1 || cutoff > hi {
        return Err(FimError::invalid(format!("cutoff {cutoff} outside [{}, {hi}]", lo - 1)));
    }
    Ok(ds.samples.iter().partition(|s| s.step <= cutoff))
}
