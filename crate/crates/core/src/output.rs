//! Shared CSV/number formatting.

use std::io::Write;

/// Formats `x` with 10 significant digits, `.` as the decimal mark and no
/// trailing zeros. Scientific notation is used outside `[1e-5, 1e10)`.
pub fn fmt_sig(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let exp = x.abs().log10().floor() as i32;
    if (-5..10).contains(&exp) {
        let decimals = (9 - exp).max(0) as usize;
        let s = format!("{x:.decimals$}");
        // Rounding can carry into a new leading digit (9.9999999999 -> 10.000000000).
        trim_zeros(&s)
    } else {
        let s = format!("{x:.9e}");
        let (mantissa, exponent) = s.split_once('e').expect("exponent present");
        format!("{}e{}", trim_zeros(mantissa), exponent)
    }
}

fn trim_zeros(s: &str) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s.to_string()
    }
}

pub(crate) fn csv_writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().delimiter(b',').from_writer(w)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn significant_digits() {
        assert_eq!(fmt_sig(0.0), "0");
        assert_eq!(fmt_sig(0.4231100866575704), "0.4231100867");
        assert_eq!(fmt_sig(1.0), "1");
        assert_eq!(fmt_sig(6.0), "6");
        assert_eq!(fmt_sig(-0.25), "-0.25");
        assert_eq!(fmt_sig(123456.789012345), "123456.789");
        assert_eq!(fmt_sig(1.5e-9), "1.5e-9");
        assert_eq!(fmt_sig(2.0 / 3.0 * 1e12), "6.666666667e11");
    }

    #[test]
    fn round_trip_precision() {
        for &x in &[0.093085106383, 3.0e-7, 0.99999999999, 12.3456789012] {
            let back: f64 = fmt_sig(x).parse().unwrap();
            assert!((back - x).abs() <= 5e-10 * x.abs());
        }
    }
}
