//! Rule-based answer equivalence for math problems.
//!
//! Normalizes whitespace and case, then tries an exact string match, then
//! numeric equality (decimal or integer fraction) within a relative 1e-9.
//! Symbolic equivalence is not attempted.

const REL_TOL: f64 = 1e-9;

fn normalize(s: &str) -> String {
    s.chars()
        .filter(|c| !c.is_whitespace())
        .flat_map(char::to_lowercase)
        .collect()
}

fn parse_decimal(s: &str) -> Option<f64> {
    // Reject words like "inf" or "nan" that f64::from_str accepts.
    if !s
        .chars()
        .all(|c| c.is_ascii_digit() || matches!(c, '.' | '-' | '+' | 'e'))
    {
        return None;
    }
    s.parse::<f64>().ok().filter(|v| v.is_finite())
}

fn parse_fraction(s: &str) -> Option<f64> {
    let (num, den) = s.split_once('/')?;
    let num: i64 = num.parse().ok()?;
    let den: i64 = den.parse().ok()?;
    if den == 0 {
        return None;
    }
    Some(num as f64 / den as f64)
}

fn parse_number(s: &str) -> Option<f64> {
    parse_decimal(s).or_else(|| parse_fraction(s))
}

fn numbers_equal(a: f64, b: f64) -> bool {
    if a == b {
        return true;
    }
    (a - b).abs() <= REL_TOL * a.abs().max(b.abs())
}

pub fn math_verify(answer: &str, gold: &str) -> bool {
    let a = normalize(answer);
    let g = normalize(gold);
    if a.is_empty() || g.is_empty() {
        return false;
    }
    if a == g {
        return true;
    }
    match (parse_number(&a), parse_number(&g)) {
        (Some(x), Some(y)) => numbers_equal(x, y),
        _ => false,
    }
}
