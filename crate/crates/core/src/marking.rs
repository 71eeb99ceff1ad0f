//! Dörfler marking: the minimal-cardinality element set carrying a
//! θ-fraction of the total estimator.

use thiserror::Error;

use crate::estimator::Indicators;

#[derive(Debug, Error)]
pub enum MarkingError {
    #[error("marking parameter theta = {0} outside (0, 1)")]
    BadTheta(f64),
    #[error("estimator is zero: converged, nothing to mark")]
    Converged,
}

#[derive(Debug, Clone)]
pub struct MarkingResult {
    /// Marked element ids, sorted by indicator descending (ties: id ascending).
    pub marked: Vec<usize>,
    /// η(M)/η(T) actually achieved; at least θ.
    pub achieved_fraction: f64,
    pub cardinality: usize,
}

/// Greedily takes the largest indicators until Ση²_M ≥ θ²·Ση²_T, which is
/// equivalent to η(M) ≥ θη(T) and has minimal cardinality among all
/// qualifying subsets.
pub fn dorfler_mark(ind: &Indicators, theta: f64) -> Result<MarkingResult, MarkingError> {
    if !(theta > 0.0 && theta < 1.0) {
        return Err(MarkingError::BadTheta(theta));
    }
    let total = ind.eta2_total();
    if total <= 0.0 {
        return Err(MarkingError::Converged);
    }
    let mut order: Vec<(usize, f64)> = ind.per_element().to_vec();
    order.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let target = theta * theta * total;
    let mut sum = 0.0;
    let mut marked = Vec::new();
    for (id, eta2) in order {
        sum += eta2;
        marked.push(id);
        if sum >= target {
            break;
        }
    }
    Ok(MarkingResult {
        achieved_fraction: (sum / total).sqrt(),
        cardinality: marked.len(),
        marked,
    })
}
