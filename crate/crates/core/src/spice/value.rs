use super::ParseError;

/// Parses a SPICE number with an optional scale suffix (`t g meg k m u n p f`,
/// case-insensitive). Letters after the suffix are units and are ignored, so
/// `10kOhm` is `1e4` and `1.8V` is `1.8`.
pub fn parse_value(token: &str) -> Result<f64, ParseError> {
    let bad = || ParseError::BadNumber { line: 0, token: token.to_string() };
    let lower = token.trim().to_ascii_lowercase();
    let bytes = lower.as_bytes();
    let mut i = 0;
    if i < bytes.len() && (bytes[i] == b'+' || bytes[i] == b'-') {
        i += 1;
    }
    let mantissa_start = i;
    while i < bytes.len() && bytes[i].is_ascii_digit() {
        i += 1;
    }
    if i < bytes.len() && bytes[i] == b'.' {
        i += 1;
        while i < bytes.len() && bytes[i].is_ascii_digit() {
            i += 1;
        }
    }
    let mantissa = &lower[mantissa_start..i];
    if mantissa.is_empty() || mantissa == "." {
        return Err(bad());
    }
    let mant_end = i;
    let mut exp: i32 = 0;
    // exponent only if `e` is followed by an (optionally signed) digit
    if i < bytes.len() && bytes[i] == b'e' {
        let mut j = i + 1;
        if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
            j += 1;
        }
        if j < bytes.len() && bytes[j].is_ascii_digit() {
            while j < bytes.len() && bytes[j].is_ascii_digit() {
                j += 1;
            }
            exp = lower[i + 1..j].parse().map_err(|_| bad())?;
            i = j;
        }
    }
    let rest = &lower[i..];
    if !rest.bytes().all(|b| b.is_ascii_alphabetic()) {
        return Err(bad());
    }
    let scale = if rest.starts_with("meg") {
        6
    } else {
        match rest.as_bytes().first() {
            Some(b't') => 12,
            Some(b'g') => 9,
            Some(b'k') => 3,
            Some(b'm') => -3,
            Some(b'u') => -6,
            Some(b'n') => -9,
            Some(b'p') => -12,
            Some(b'f') => -15,
            Some(c) if c.is_ascii_alphabetic() => 0,
            Some(_) => return Err(bad()),
            None => 0,
        }
    };
    // fold the suffix into the decimal exponent so `10u` is exactly `1e-5`
    let v: f64 = format!("{}e{}", &lower[..mant_end], exp.saturating_add(scale)).parse().map_err(|_| bad())?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(bad())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suffix_table() {
        assert_eq!(parse_value("10k").unwrap(), 1.0e4);
        assert_eq!(parse_value("1meg").unwrap(), 1.0e6);
        assert_eq!(parse_value("1MEG").unwrap(), 1.0e6);
        assert_eq!(parse_value("1m").unwrap(), 1.0e-3);
        assert_eq!(parse_value("2.2u").unwrap(), 2.2e-6);
        assert_eq!(parse_value("3t").unwrap(), 3e12);
        assert_eq!(parse_value("4g").unwrap(), 4e9);
        assert_eq!(parse_value("5n").unwrap(), 5e-9);
        assert_eq!(parse_value("6p").unwrap(), 6e-12);
        assert_eq!(parse_value("7f").unwrap(), 7e-15);
    }

    #[test]
    fn units_after_suffix_are_ignored() {
        assert_eq!(parse_value("10kOhm").unwrap(), 1.0e4);
        assert_eq!(parse_value("1.8V").unwrap(), 1.8);
        assert_eq!(parse_value("100pF").unwrap(), 100e-12);
    }

    #[test]
    fn exponents_and_signs() {
        assert_eq!(parse_value("1e3").unwrap(), 1000.0);
        assert_eq!(parse_value("-2.5E-3").unwrap(), -2.5e-3);
        assert_eq!(parse_value("+.5").unwrap(), 0.5);
        assert_eq!(parse_value("1e-5").unwrap(), 1e-5);
        assert_eq!(parse_value("4.").unwrap(), 4.0);
        assert_eq!(parse_value("10u").unwrap(), 1e-5);
        assert_eq!(parse_value("4.7p").unwrap(), 4.7e-12);
    }

    #[test]
    fn bad_numbers() {
        for t in ["", "abc", ".", "-", "k10", "1e999", "1#", "1x#", "2k5"] {
            assert!(matches!(parse_value(t), Err(ParseError::BadNumber { .. })), "{t}");
        }
    }
}
