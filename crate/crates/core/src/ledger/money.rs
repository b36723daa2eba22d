/// Renders pence as pounds with two decimals, e.g. `18520 -> "185.20"`.
pub fn format_gbp(pence: u64) -> String {
    format!("{}.{:02}", pence / 100, pence % 100)
}

/// Parses `"185.20"`, `"185.2"` or `"185"` into pence. Rejects more than two
/// decimals, signs and thousands separators.
pub fn parse_gbp(s: &str) -> Option<u64> {
    let s = s.strip_prefix('£').unwrap_or(s);
    let (whole, frac) = match s.split_once('.') {
        Some((w, f)) => (w, f),
        None => (s, ""),
    };
    if whole.is_empty() || !whole.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    if frac.len() > 2 || !frac.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    let pounds: u64 = whole.parse().ok()?;
    let pence: u64 = match frac.len() {
        0 => 0,
        1 => frac.parse::<u64>().ok()? * 10,
        _ => frac.parse().ok()?,
    };
    pounds.checked_mul(100)?.checked_add(pence)
}
