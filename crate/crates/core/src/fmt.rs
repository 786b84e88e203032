//! Number formatting for summaries and CSV output.

/// Shortest representation that round-trips to the same `f64` (up to 17
/// significant digits), so no precision is ever dropped. Non-finite values
/// print as `inf`, `-inf` or `nan`.
pub fn num(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{x}")
    }
}

pub fn nums(xs: &[f64]) -> String {
    let parts: Vec<String> = xs.iter().map(|x| num(*x)).collect();
    format!("[{}]", parts.join(", "))
}
