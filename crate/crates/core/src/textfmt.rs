//! Compact float formatting for CSV and report output: six significant
//! digits, trailing zeros stripped, scientific notation outside the
//! fixed-point range — the behaviour of C's `%.6g`.

/// Formats `x` with `%.6g` semantics.
pub fn format_g6(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    let neg = x.is_sign_negative();
    let sign = if neg { "-" } else { "" };
    if x.is_infinite() {
        return format!("{sign}inf");
    }
    if x == 0.0 {
        return format!("{sign}0");
    }

    // Six significant digits come from the exponential formatter; the rest
    // is layout. `{:.5e}` renders one digit, a dot, five digits, `e`, exp.
    let s = format!("{:.5e}", x.abs());
    let (mantissa, exp) = s.split_once('e').expect("exponential format");
    let exp: i32 = exp.parse().expect("exponent digits");
    let digits: String = mantissa.chars().filter(|c| c.is_ascii_digit()).collect();
    debug_assert_eq!(digits.len(), 6);

    if (-4..6).contains(&exp) {
        let (int_part, frac_part) = if exp >= 0 {
            let split = (exp + 1) as usize;
            (digits[..split].to_string(), digits[split..].to_string())
        } else {
            ("0".to_string(), "0".repeat((-exp - 1) as usize) + &digits)
        };
        let frac_part = frac_part.trim_end_matches('0');
        if frac_part.is_empty() {
            format!("{sign}{int_part}")
        } else {
            format!("{sign}{int_part}.{frac_part}")
        }
    } else {
        let trimmed = digits.trim_end_matches('0');
        let mant = if trimmed.len() == 1 {
            trimmed.to_string()
        } else {
            format!("{}.{}", &trimmed[..1], &trimmed[1..])
        };
        let esign = if exp < 0 { '-' } else { '+' };
        format!("{sign}{mant}e{esign}{:02}", exp.abs())
    }
}
