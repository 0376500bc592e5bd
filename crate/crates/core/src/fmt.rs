/// 17-significant-digit decimal used by every CSV writer, so that re-runs
/// are byte-identical and values round-trip exactly.
pub(crate) fn g17(x: f64) -> String {
    format!("{x:.16e}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn g17_round_trips() {
        for &x in &[0.0, 1.0, -1.5, std::f64::consts::PI, 1e-300, 3.33e17] {
            let s = g17(x);
            assert_eq!(s.parse::<f64>().unwrap(), x, "{s}");
        }
    }
}
