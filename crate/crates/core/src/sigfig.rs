//! Fixed 10-significant-digit decimal formatting.
//!
//! Every floating-point value written to an exported artifact goes through
//! [`format_sig10`] so that file contents (and therefore content digests) are
//! identical across platforms.

/// Format with exactly 10 significant digits. Values with decimal exponent
/// outside [-5, 9] fall back to scientific notation, still at 10 digits.
pub fn format_sig10(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if x.is_nan() {
        return "nan".to_string();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf" } else { "-inf" }.to_string();
    }
    let sci = format!("{:.9e}", x.abs());
    let (mantissa, exp_str) = sci.split_once('e').expect("exponent in sci format");
    let exp: i32 = exp_str.parse().expect("integer exponent");
    let digits: String = mantissa.chars().filter(|c| c.is_ascii_digit()).collect();
    debug_assert_eq!(digits.len(), 10);
    let sign = if x < 0.0 { "-" } else { "" };
    if (0..=9).contains(&exp) {
        let split = (exp + 1) as usize;
        if split >= digits.len() {
            format!("{sign}{digits}")
        } else {
            format!("{sign}{}.{}", &digits[..split], &digits[split..])
        }
    } else if (-5..0).contains(&exp) {
        let zeros = "0".repeat((-exp - 1) as usize);
        format!("{sign}0.{zeros}{digits}")
    } else {
        format!("{sign}{}.{}e{}", &digits[..1], &digits[1..], exp)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plain_decimals() {
        assert_eq!(format_sig10(1.00495), "1.004950000");
        assert_eq!(format_sig10(0.961992), "0.9619920000");
        assert_eq!(format_sig10(0.05), "0.05000000000");
        assert_eq!(format_sig10(-0.145554), "-0.1455540000");
        assert_eq!(format_sig10(1.067), "1.067000000");
        assert_eq!(format_sig10(0.0057), "0.005700000000");
        assert_eq!(format_sig10(0.0), "0");
    }

    #[test]
    fn boundary_exponents() {
        assert_eq!(format_sig10(1234567890.0), "1234567890");
        assert_eq!(format_sig10(0.000012345), "0.00001234500000");
        assert_eq!(format_sig10(1.2345e-6), "1.234500000e-6");
        assert_eq!(format_sig10(1.2e12), "1.200000000e12");
    }

    #[test]
    fn rounds_to_ten_digits() {
        assert_eq!(format_sig10(1.0 / 3.0), "0.3333333333");
        assert_eq!(format_sig10(2.0 / 3.0), "0.6666666667");
    }
}
