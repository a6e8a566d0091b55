//! Volume-weighted model averaging.

use crate::model::GlobalModel;

/// `Σ_k (D_k / D) · w_k`; `None` when the total volume is not positive.
pub fn aggregate(models: &[GlobalModel], volumes: &[f64]) -> Option<GlobalModel> {
    assert_eq!(models.len(), volumes.len(), "one volume per model");
    let total: f64 = volumes.iter().sum();
    if !(total > 0.0) {
        return None;
    }
    let first = models.first()?;
    let mut params = vec![0.0; first.num_params()];
    for (model, &v) in models.iter().zip(volumes) {
        if v == 0.0 {
            continue;
        }
        let weight = v / total;
        for (acc, p) in params.iter_mut().zip(model.params()) {
            *acc += weight * p;
        }
    }
    let mut out = first.clone();
    out.set_params(&params);
    Some(out)
}
