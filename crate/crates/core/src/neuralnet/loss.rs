/// Probability clamp applied before taking logarithms.
pub const BCE_EPS: f64 = 1e-7;

/// Binary cross-entropy of one prediction `p` against `y ∈ {0, 1}`.
pub fn bce_loss(p: f64, y: f64) -> f64 {
    let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

/// Mean cross-entropy over a batch.
pub fn bce_batch(p: &[f64], y: &[u8]) -> f64 {
    let n = p.len().max(1) as f64;
    p.iter().zip(y).map(|(&p, &y)| bce_loss(p, f64::from(y))).sum::<f64>() / n
}
