use crate::error::{Error, Result};

use super::GpsRecord;

/// Zero-based column index of each GPS field within a whitespace-split line.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ColumnLayout {
    pub timestamp: usize,
    pub speed: usize,
    pub lat: usize,
    pub lon: usize,
    pub alt: usize,
    pub vacc: usize,
    pub hacc: usize,
}

impl Default for ColumnLayout {
    fn default() -> Self {
        ColumnLayout { timestamp: 0, speed: 1, lat: 2, lon: 3, alt: 4, vacc: 5, hacc: 6 }
    }
}

impl ColumnLayout {
    fn indices(&self) -> [usize; 7] {
        [self.timestamp, self.speed, self.lat, self.lon, self.alt, self.vacc, self.hacc]
    }

    /// Number of leading columns a line must have.
    pub fn width(&self) -> usize {
        self.indices().into_iter().max().unwrap_or(0) + 1
    }
}

/// Parses one line using the default column order
/// `(time, speed, lat, lon, alt, vacc, hacc)`. Extra trailing fields are ignored.
pub fn parse_gps_line(line: &str) -> Result<GpsRecord> {
    parse_gps_line_with(line, &ColumnLayout::default())
}

pub fn parse_gps_line_with(line: &str, layout: &ColumnLayout) -> Result<GpsRecord> {
    let width = layout.width();
    let mut values = [0.0f64; 32];
    if width > values.len() {
        return Err(Error::InvalidConfig(format!("column index {} too large", width - 1)));
    }
    let mut seen = 0;
    for (i, tok) in line.split_whitespace().take(width).enumerate() {
        let v: f64 = tok
            .parse()
            .map_err(|_| Error::MalformedLine(format!("field {} `{}` is not a number", i + 1, truncate(tok))))?;
        if !v.is_finite() {
            return Err(Error::MalformedLine(format!("field {} `{}` is not finite", i + 1, truncate(tok))));
        }
        values[i] = v;
        seen += 1;
    }
    if seen < width {
        return Err(Error::MalformedLine(format!("expected at least {width} fields, found {seen}")));
    }
    let [t, s, la, lo, al, va, ha] = layout.indices().map(|i| values[i]);
    let record =
        GpsRecord { timestamp_s: t, speed_kmh: s, lat_deg: la, lon_deg: lo, alt_m: al, vacc_m: va, hacc_m: ha };
    record.validate()?;
    Ok(record)
}

fn truncate(s: &str) -> &str {
    match s.char_indices().nth(24) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}

/// Renders a record as the seven default-order fields. Values use the
/// shortest representation that parses back to the same `f64`.
pub fn format_gps_line(r: &GpsRecord) -> String {
    format!("{} {} {} {} {} {} {}", r.timestamp_s, r.speed_kmh, r.lat_deg, r.lon_deg, r.alt_m, r.vacc_m, r.hacc_m)
}

/// Per-file parse diagnostics.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LineStats {
    pub lines: usize,
    pub blank: usize,
    pub malformed: usize,
    pub out_of_range: usize,
    /// Records dropped because their timestamp did not advance.
    pub out_of_order: usize,
}

impl LineStats {
    pub fn skipped(&self) -> usize {
        self.malformed + self.out_of_range + self.out_of_order
    }

    pub fn merge(&mut self, other: &LineStats) {
        self.lines += other.lines;
        self.blank += other.blank;
        self.malformed += other.malformed;
        self.out_of_range += other.out_of_range;
        self.out_of_order += other.out_of_order;
    }
}

/// Parses a whole raw GPS file body (LF or CRLF).
///
/// In tolerant mode bad lines are counted and skipped; in strict mode the
/// first bad line is returned as an error annotated with its line number.
pub fn parse_gps_text(text: &str, layout: &ColumnLayout, strict: bool) -> Result<(Vec<GpsRecord>, LineStats)> {
    let mut stats = LineStats::default();
    let mut records: Vec<GpsRecord> = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        stats.lines += 1;
        let line = raw.trim();
        if line.is_empty() {
            stats.blank += 1;
            continue;
        }
        let rec = match parse_gps_line_with(line, layout) {
            Ok(r) => r,
            Err(e) if strict => return Err(annotate(e, lineno + 1)),
            Err(Error::RangeViolation(_)) => {
                stats.out_of_range += 1;
                continue;
            }
            Err(_) => {
                stats.malformed += 1;
                continue;
            }
        };
        if let Some(prev) = records.last() {
            if rec.timestamp_s <= prev.timestamp_s {
                if strict {
                    return Err(Error::RangeViolation(format!(
                        "line {}: timestamp {} does not advance past {}",
                        lineno + 1,
                        rec.timestamp_s,
                        prev.timestamp_s
                    )));
                }
                stats.out_of_order += 1;
                continue;
            }
        }
        records.push(rec);
    }
    Ok((records, stats))
}

fn annotate(e: Error, line: usize) -> Error {
    match e {
        Error::MalformedLine(m) => Error::MalformedLine(format!("line {line}: {m}")),
        Error::RangeViolation(m) => Error::RangeViolation(format!("line {line}: {m}")),
        other => other,
    }
}
