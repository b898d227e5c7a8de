use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{Role, SignalSeries};

/// On-disk layout of a single channel.
///
/// All three are two-column text, one `<unix_seconds> <watts>` reading per
/// line, separated by whitespace or a comma, with `#` comment lines. `csv`
/// additionally tolerates one non-numeric header line.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SeriesFormat {
    #[default]
    Csv,
    ReddChannel,
    UkdaleChannel,
}

impl FromStr for SeriesFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Self::Csv),
            "redd-channel" => Ok(Self::ReddChannel),
            "ukdale-channel" => Ok(Self::UkdaleChannel),
            other => Err(Error::config(format!(
                "unknown series format `{other}` (expected csv, redd-channel or ukdale-channel)"
            ))),
        }
    }
}

pub fn load_series(path: impl AsRef<Path>, format: SeriesFormat, role: Role) -> Result<SignalSeries> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_series(&text, format, role, path)
}

/// Parses channel text; `path` is only used in error messages. Rows are
/// counted over data lines, so "row 2" is the second reading.
pub fn parse_series(text: &str, format: SeriesFormat, role: Role, path: &Path) -> Result<SignalSeries> {
    let mut ts: Vec<i64> = Vec::new();
    let mut watts = Vec::new();
    let mut seen_data = false;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parse_err = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg,
        };
        let fields: Vec<&str> = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|f| !f.is_empty())
            .collect();
        if fields.len() != 2 {
            return Err(parse_err(format!("expected 2 columns, found {}", fields.len())));
        }
        let t = fields[0].parse::<i64>();
        let w = fields[1].parse::<f64>();
        let (t, w) = match (t, w) {
            (Ok(t), Ok(w)) => (t, w),
            _ if !seen_data && format == SeriesFormat::Csv && fields[0].parse::<f64>().is_err() => {
                seen_data = true;
                continue;
            }
            (Err(_), _) => return Err(parse_err(format!("bad timestamp `{}`", fields[0]))),
            (_, Err(_)) => return Err(parse_err(format!("bad reading `{}`", fields[1]))),
        };
        seen_data = true;
        if !w.is_finite() || w < 0.0 {
            return Err(parse_err(format!("reading {w} is not a finite non-negative power")));
        }
        if let Some(&prev) = ts.last() {
            if t <= prev {
                return Err(Error::NonMonotonic {
                    row: ts.len() + 1,
                    previous: prev,
                    timestamp: t,
                });
            }
        }
        ts.push(t);
        watts.push(w);
    }
    if ts.is_empty() {
        return Err(Error::EmptySeries);
    }
    SignalSeries::new(ts, watts, role)
}

/// Writes `<unix_seconds> <watts>` lines. Readings use the shortest
/// representation that parses back to the same value.
pub fn write_series(path: impl AsRef<Path>, series: &SignalSeries) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, format_series(series)).map_err(|e| Error::io(path, e))
}

pub fn format_series(series: &SignalSeries) -> String {
    let mut out = String::with_capacity(series.len() * 16);
    for (t, w) in series.timestamps().iter().zip(series.watts()) {
        writeln!(out, "{t} {w:?}").expect("writing to a String");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str, format: SeriesFormat) -> Result<SignalSeries> {
        parse_series(text, format, Role::Mains, Path::new("test.dat"))
    }

    #[test]
    fn two_rows() {
        let s = parse("0 100\n6 110", SeriesFormat::ReddChannel).unwrap();
        assert_eq!(s.timestamps(), &[0, 6]);
        assert_eq!(s.watts(), &[100.0, 110.0]);
    }

    #[test]
    fn empty_file() {
        let err = parse("", SeriesFormat::Csv).unwrap_err();
        assert_eq!(err.to_string(), "empty series");
        assert!(matches!(parse("# only a comment\n\n", SeriesFormat::Csv), Err(Error::EmptySeries)));
    }

    #[test]
    fn non_monotonic_names_row() {
        let err = parse("6 110\n0 100", SeriesFormat::UkdaleChannel).unwrap_err();
        assert!(matches!(err, Error::NonMonotonic { row: 2, previous: 6, timestamp: 0 }));
    }

    #[test]
    fn separators_comments_and_header() {
        let s = parse("timestamp,watts\n# c\n0,1.5\n3 2\n6,\t4", SeriesFormat::Csv).unwrap();
        assert_eq!(s.watts(), &[1.5, 2.0, 4.0]);
        assert!(parse("timestamp watts\n0 1", SeriesFormat::ReddChannel).is_err());
    }

    #[test]
    fn parse_error_carries_line() {
        match parse("0 1\n\n3 x\n", SeriesFormat::Csv).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            e => panic!("unexpected {e}"),
        }
        assert!(matches!(parse("0 1 2", SeriesFormat::Csv), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(parse("0 -4", SeriesFormat::Csv), Err(Error::Parse { .. })));
    }

    #[test]
    fn format_round_trips() {
        let s = SignalSeries::new(vec![0, 6, 12], vec![0.1, 1e-17, 2345.678], Role::Mains).unwrap();
        let back = parse(&format_series(&s), SeriesFormat::Csv).unwrap();
        assert_eq!(back, s);
    }
}
