//! Number formatting shared by every output file: nine significant digits,
//! no NaN or infinity.

use crate::error::CliError;

const SIG_DIGITS: usize = 9;

/// Rounds to nine significant digits. Negative zero becomes zero.
pub fn round_sig(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return if x == 0.0 { 0.0 } else { x };
    }
    let r: f64 = format!("{:.*e}", SIG_DIGITS - 1, x).parse().expect("formatted float parses");
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

/// Shortest decimal text of `x` rounded to nine significant digits.
/// Plain notation for moderate magnitudes, exponent form otherwise.
pub fn fmt_num(x: f64, context: &str) -> Result<String, CliError> {
    if !x.is_finite() {
        return Err(CliError::NonFinite(context.to_string()));
    }
    let r = round_sig(x);
    if r == 0.0 {
        return Ok("0".to_string());
    }
    let exp = r.abs().log10().floor();
    Ok(if (-5.0..15.0).contains(&exp) { format!("{r}") } else { format!("{r:e}") })
}

/// JSON number rounded like the CSV output, or `null` when not finite.
pub fn json_num(x: f64) -> serde_json::Value {
    if x.is_finite() {
        serde_json::json!(round_sig(x))
    } else {
        serde_json::Value::Null
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nine_significant_digits() {
        assert_eq!(fmt_num(0.1 + 0.2, "t").unwrap(), "0.3");
        assert_eq!(fmt_num(1.0 / 3.0, "t").unwrap(), "0.333333333");
        assert_eq!(fmt_num(123456.7891234, "t").unwrap(), "123456.789");
        assert_eq!(fmt_num(-2.5e-9, "t").unwrap(), "-2.5e-9");
        assert_eq!(fmt_num(6.02214076e23, "t").unwrap(), "6.02214076e23");
        assert_eq!(fmt_num(-0.0, "t").unwrap(), "0");
        assert_eq!(fmt_num(3600.0, "t").unwrap(), "3600");
    }

    #[test]
    fn non_finite_is_refused() {
        assert!(matches!(fmt_num(f64::NAN, "adcp.csv"), Err(CliError::NonFinite(_))));
        assert!(fmt_num(f64::INFINITY, "x").is_err());
        assert_eq!(json_num(f64::NAN), serde_json::Value::Null);
    }

    #[test]
    fn formatted_text_round_trips_to_the_rounded_value() {
        for x in [std::f64::consts::PI, -1e-7 / 3.0, 2.0f64.powi(60), 0.0123456789012] {
            let back: f64 = fmt_num(x, "t").unwrap().parse().unwrap();
            assert_eq!(back, round_sig(x));
            assert!((back - x).abs() <= 1e-8 * x.abs());
        }
    }
}
