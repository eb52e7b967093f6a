//! Bit-stable text formatting for the CSV artifacts.

/// Formats `x` like C's `printf("%.*g", precision, x)`.
pub fn fmt_g(x: f64, precision: usize) -> String {
    if x.is_nan() {
        return "nan".to_string();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf" } else { "-inf" }.to_string();
    }
    let p = precision.max(1);
    if x == 0.0 {
        return if x.is_sign_negative() { "-0" } else { "0" }.to_string();
    }
    // Rounding to p significant digits decides the exponent, so let the
    // scientific formatter do it.
    let sci = format!("{:.*e}", p - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("scientific format has an exponent");
    let exp: i32 = exp.parse().expect("exponent is an integer");
    if exp < -4 || exp >= p as i32 {
        let mantissa = strip_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{mantissa}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (p as i32 - 1 - exp).max(0) as usize;
        strip_zeros(&format!("{:.*}", decimals, x)).to_string()
    }
}

fn strip_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// `%.9g`, the precision used by every numeric CSV column.
pub fn g9(x: f64) -> String {
    fmt_g(x, 9)
}

#[cfg(test)]
mod tests {
    use super::*;

    // Expected strings produced by C printf("%.9g").
    #[test]
    fn matches_printf() {
        let cases = [
            (0.0, "0"),
            (1.0, "1"),
            (-2.5, "-2.5"),
            (0.1, "0.1"),
            (1.0 / 3.0, "0.333333333"),
            (123456789.0, "123456789"),
            (1234567890.0, "1.23456789e+09"),
            (0.0001, "0.0001"),
            (0.00001234, "1.234e-05"),
            (999999999.5, "1e+09"),
            (12.3456789012, "12.3456789"),
            (1e100, "1e+100"),
            (-7.25e-300, "-7.25e-300"),
            (100.0, "100"),
            (0.005, "0.005"),
        ];
        for (x, want) in cases {
            assert_eq!(fmt_g(x, 9), want, "formatting {x}");
        }
    }

    #[test]
    fn non_finite() {
        assert_eq!(g9(f64::NAN), "nan");
        assert_eq!(g9(f64::INFINITY), "inf");
        assert_eq!(g9(f64::NEG_INFINITY), "-inf");
    }
}
