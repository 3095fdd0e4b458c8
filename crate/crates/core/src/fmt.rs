use alloc::format;
use alloc::string::String;

/// Formats `v` with six significant digits, plain notation for moderate
/// magnitudes (trailing zeros dropped) and exponent notation otherwise.
pub(crate) fn sig6(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return if v == 0.0 {
            String::from("0")
        } else {
            format!("{v}")
        };
    }
    let exp = libm::floor(libm::log10(libm::fabs(v))) as i32;
    if (-5..6).contains(&exp) {
        let prec = (5 - exp) as usize;
        let mut s = format!("{v:.prec$}");
        if s.contains('.') {
            while s.ends_with('0') {
                s.pop();
            }
            if s.ends_with('.') {
                s.pop();
            }
        }
        if s == "-0" {
            s = String::from("0");
        }
        s
    } else {
        format!("{v:.5e}")
    }
}

#[cfg(test)]
mod tests {
    use super::sig6;

    #[test]
    fn six_significant_digits() {
        assert_eq!(sig6(0.0), "0");
        assert_eq!(sig6(1.0), "1");
        assert_eq!(sig6(0.5), "0.5");
        assert_eq!(sig6(-1.23456789), "-1.23457");
        assert_eq!(sig6(123456.7), "123457");
        assert_eq!(sig6(1234567.0), "1.23457e6");
        assert_eq!(sig6(0.000123456789), "0.000123457");
        assert_eq!(sig6(1.5e-9), "1.50000e-9");
    }
}
