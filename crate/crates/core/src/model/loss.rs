/// Predictions are clamped to `[P_FLOOR, 1 - P_FLOOR]` before any logarithm.
pub const P_FLOOR: f64 = 1e-12;

/// Logistic function, evaluated on the branch that cannot overflow.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

#[inline]
pub fn clamp_prob(p: f64) -> f64 {
    p.clamp(P_FLOOR, 1.0 - P_FLOOR)
}

/// `-(1-y) ln(1-p) - y ln p` for a binary outcome.
#[inline]
pub fn logloss(p: f64, clicked: bool) -> f64 {
    let p = clamp_prob(p);
    let y = if clicked { 1.0 } else { 0.0 };
    -(1.0 - y) * (1.0 - p).ln() - y * p.ln()
}

/// `ℓ ln(ℓ/p) + (1-ℓ) ln((1-ℓ)/(1-p))` with `0 ln 0 = 0`.
///
/// Each term is written as `ℓ (ln ℓ - ln p)` so that at binary labels the
/// result is bit-identical to [`logloss`].
#[inline]
pub fn cross_entropy(p: f64, label: f64) -> f64 {
    let p = clamp_prob(p);
    let pos = if label > 0.0 {
        label * (label.ln() - p.ln())
    } else {
        0.0
    };
    let q = 1.0 - label;
    let neg = if q > 0.0 {
        q * (q.ln() - (1.0 - p).ln())
    } else {
        0.0
    };
    // rounding can leave a tiny negative residue when p ≈ ℓ
    (pos + neg).max(0.0)
}

/// Loss at one scored event together with its derivative w.r.t. the score.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossValue {
    pub value: f64,
    pub gradient_wrt_score: f64,
}

impl LossValue {
    /// For the sigmoid link, `∂L'/∂s = p - ℓ` for any label in `[0, 1]`.
    pub fn cross_entropy_at_score(score: f64, label: f64) -> Self {
        let p = sigmoid(score);
        Self {
            value: cross_entropy(p, label),
            gradient_wrt_score: p - label,
        }
    }
}
