use super::Scalar;

pub const BCE_CLAMP: f64 = 1e-7;

/// Mean binary cross-entropy with probabilities clamped to `[1e-7, 1 - 1e-7]`.
pub fn bce_loss<T: Scalar>(p: &[T], y: &[T]) -> f64 {
    assert_eq!(p.len(), y.len());
    if p.is_empty() {
        return 0.0;
    }
    let total: f64 = p
        .iter()
        .zip(y)
        .map(|(&p, &y)| {
            let p = p.as_f64().clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
            let y = y.as_f64();
            -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        })
        .sum();
    total / p.len() as f64
}
