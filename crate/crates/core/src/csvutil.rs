//! Minimal helpers for the plain numeric CSV files this crate reads and writes.

/// Parses one comma-separated row of exactly `n` finite floats.
pub(crate) fn parse_f64_row(line: &str, n: usize) -> Result<Vec<f64>, String> {
    let mut out = Vec::with_capacity(n);
    for field in line.split(',') {
        let v: f64 = field.trim().parse().map_err(|_| format!("invalid number `{}`", field.trim()))?;
        if !v.is_finite() {
            return Err(format!("non-finite value `{}`", field.trim()));
        }
        out.push(v);
    }
    if out.len() != n {
        return Err(format!("expected {n} fields, found {}", out.len()));
    }
    Ok(out)
}

/// Splits text into a header line and the remaining non-blank lines, each
/// tagged with its 1-based line number.
pub(crate) fn split_header(text: &str) -> Option<(&str, impl Iterator<Item = (usize, &str)>)> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()).map(|(i, l)| (i + 1, l));
    let (_, header) = lines.next()?;
    Some((header.trim(), lines))
}
