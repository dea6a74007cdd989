//! Text formatting shared by the CSV writers.

/// Formats a float with 17 significant digits, enough for a bit-exact
/// round trip through decimal text.
pub fn fmt_g17(x: f64) -> String {
    format!("{x:.16e}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_bit_exactly() {
        for &x in &[
            0.1,
            -1.0 / 3.0,
            std::f64::consts::PI,
            1e-300,
            6.02214076e23,
            0.0,
        ] {
            let back: f64 = fmt_g17(x).parse().unwrap();
            assert_eq!(back.to_bits(), x.to_bits(), "{x} -> {}", fmt_g17(x));
        }
    }
}
