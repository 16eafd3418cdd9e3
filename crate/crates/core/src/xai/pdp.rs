use super::{FeatureModel, XaiError};

/// Sweeps one feature over `grid` with the others held at `x`.
pub fn partial_dependence(
    model: &dyn FeatureModel,
    x: &[f64],
    feature: &str,
    grid: &[f64],
) -> Result<Vec<(f64, f64)>, XaiError> {
    let names = model.feature_names();
    let idx = names.iter().position(|n| n == feature).ok_or_else(|| XaiError::UnknownFeature(feature.to_string()))?;
    if x.len() != names.len() {
        return Err(XaiError::DimensionMismatch { expected: names.len(), got: x.len() });
    }
    if grid.is_empty() {
        return Err(XaiError::EmptyGrid);
    }
    let domain = model.domain(idx);
    let mut point = x.to_vec();
    grid.iter()
        .map(|&v| {
            if !domain.contains(&v) {
                return Err(XaiError::OutOfDomain { feature: feature.to_string(), value: v });
            }
            point[idx] = v;
            Ok((v, model.predict(&point)))
        })
        .collect()
}
