//! Round-trippable numeric formatting for machine-readable outputs.

/// Scientific notation with 17 significant digits; parses back to the same
/// `f64`. Non-finite values are written as `NaN`, `inf` and `-inf`.
pub fn sig17(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else if x.is_nan() {
        "NaN".into()
    } else if x > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

pub fn sig17_opt(x: Option<f64>) -> String {
    x.map(sig17).unwrap_or_default()
}
