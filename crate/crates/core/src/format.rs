//! Shared float formatting for CSV and JSON-lines outputs.

/// Format `v` with 17 significant digits in the style of C's `%.17g`:
/// fixed notation for moderate exponents, scientific otherwise, trailing
/// zeros removed. Parsing the output recovers `v` exactly.
pub fn g17(v: f64) -> String {
    if !v.is_finite() {
        return if v.is_nan() {
            "NaN".to_string()
        } else if v > 0.0 {
            "inf".to_string()
        } else {
            "-inf".to_string()
        };
    }
    if v == 0.0 {
        return if v.is_sign_negative() { "-0" } else { "0" }.to_string();
    }
    const PRECISION: i32 = 17;
    let sci = format!("{:.*e}", (PRECISION - 1) as usize, v);
    let (mantissa, exp) = sci.split_once('e').expect("scientific format has an exponent");
    let exp: i32 = exp.parse().expect("exponent is an integer");
    if (-4..PRECISION).contains(&exp) {
        let decimals = (PRECISION - 1 - exp) as usize;
        strip_zeros(format!("{:.*}", decimals, v))
    } else {
        format!("{}e{}", strip_zeros(mantissa.to_string()), exp)
    }
}

fn strip_zeros(s: String) -> String {
    if !s.contains('.') {
        return s;
    }
    let trimmed = s.trim_end_matches('0').trim_end_matches('.');
    trimmed.to_string()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn known_values() {
        assert_eq!(g17(1.0), "1");
        assert_eq!(g17(0.5), "0.5");
        assert_eq!(g17(0.1), "0.10000000000000001");
        assert_eq!(g17(-2.25), "-2.25");
        assert_eq!(g17(1e-7), "9.9999999999999995e-8");
        assert_eq!(g17(1e20), "1e20");
        assert_eq!(g17(0.0), "0");
        assert_eq!(g17(123456.0), "123456");
    }

    proptest! {
        #[test]
        fn parses_back_exactly(bits in any::<u64>()) {
            let v = f64::from_bits(bits);
            prop_assume!(v.is_finite());
            let s = g17(v);
            let back: f64 = s.parse().unwrap();
            prop_assert_eq!(back.to_bits(), v.to_bits());
        }
    }
}
