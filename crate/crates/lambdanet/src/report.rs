//! Comparison tables and CSV.
//!
//! CSV columns: `W,control_wavelengths,parallelism,mode,makespan_us,discards,seed`.
//! `makespan_us` is written with exactly two decimals, which is the clock
//! resolution, so parsing a file gives back the simulated times exactly.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io;

use lambdanet_core::{Metrics, Mode, SimTime, Summary};
use serde::Deserialize;

/// One point of a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Cell {
    pub wavelengths: usize,
    pub control: usize,
    pub parallelism: usize,
    pub mode: Mode,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub cell: Cell,
    pub seed: u64,
    pub metrics: Metrics,
}

/// The numeric content of one CSV line.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CsvRow {
    pub cell: Cell,
    pub makespan: SimTime,
    pub discards: u64,
    pub seed: u64,
}

impl From<&RunRecord> for CsvRow {
    fn from(r: &RunRecord) -> Self {
        CsvRow { cell: r.cell, makespan: r.metrics.makespan, discards: r.metrics.discarded_requests, seed: r.seed }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("no results to report")]
    EmptyResults,
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("line {line}: {what}")]
    Malformed { line: u64, what: String },
}

pub const CSV_HEADER: [&str; 7] = ["W", "control_wavelengths", "parallelism", "mode", "makespan_us", "discards", "seed"];

pub fn parse_mode(s: &str) -> Option<Mode> {
    [Mode::ProposedConnection, Mode::ProposedDatagram, Mode::Baseline].into_iter().find(|m| m.name() == s)
}

/// Exact decimal parse with at most two fractional digits.
pub fn parse_micros(s: &str) -> Option<SimTime> {
    let (int, frac) = s.split_once('.').unwrap_or((s, ""));
    if int.is_empty() || frac.len() > 2 || !int.bytes().chain(frac.bytes()).all(|b| b.is_ascii_digit()) {
        return None;
    }
    let whole: u64 = int.parse().ok()?;
    let frac: u64 = if frac.is_empty() { 0 } else { format!("{frac:0<2}").parse().ok()? };
    whole.checked_mul(100)?.checked_add(frac).map(SimTime::from_ticks)
}

pub fn write_csv<W: io::Write>(records: &[RunRecord], out: W) -> Result<(), ReportError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in records {
        let row = CsvRow::from(r);
        w.write_record([
            row.cell.wavelengths.to_string(),
            row.cell.control.to_string(),
            row.cell.parallelism.to_string(),
            row.cell.mode.name().to_owned(),
            row.makespan.to_string(),
            row.discards.to_string(),
            row.seed.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn csv_string(records: &[RunRecord]) -> String {
    let mut buf = Vec::new();
    write_csv(records, &mut buf).expect("writing to memory");
    String::from_utf8(buf).expect("csv output is UTF-8")
}

#[derive(Deserialize)]
struct RawRow {
    #[serde(rename = "W")]
    wavelengths: usize,
    control_wavelengths: usize,
    parallelism: usize,
    mode: String,
    makespan_us: String,
    discards: u64,
    seed: u64,
}

pub fn read_csv<R: io::Read>(input: R) -> Result<Vec<CsvRow>, ReportError> {
    let mut rdr = csv::Reader::from_reader(input);
    let mut rows = Vec::new();
    for (i, raw) in rdr.deserialize::<RawRow>().enumerate() {
        let raw = raw?;
        let line = i as u64 + 2;
        let mode = parse_mode(&raw.mode)
            .ok_or_else(|| ReportError::Malformed { line, what: format!("unknown mode `{}`", raw.mode) })?;
        let makespan = parse_micros(&raw.makespan_us)
            .ok_or_else(|| ReportError::Malformed { line, what: format!("bad makespan `{}`", raw.makespan_us) })?;
        rows.push(CsvRow {
            cell: Cell {
                wavelengths: raw.wavelengths,
                control: raw.control_wavelengths,
                parallelism: raw.parallelism,
                mode,
            },
            makespan,
            discards: raw.discards,
            seed: raw.seed,
        });
    }
    Ok(rows)
}

/// Per-cell makespan summary over seeds, in cell order.
pub fn summarize(records: &[RunRecord]) -> BTreeMap<Cell, Summary> {
    let mut out: BTreeMap<Cell, Summary> = BTreeMap::new();
    for r in records {
        let s = Summary::of(&r.metrics);
        out.entry(r.cell).and_modify(|acc| *acc = acc.merge(s)).or_insert(s);
    }
    out
}

fn column_title(mode: Mode) -> &'static str {
    match mode {
        Mode::Baseline => "Existing (μs)",
        Mode::ProposedConnection => "Proposed (μs)",
        Mode::ProposedDatagram => "Datagram (μs)",
    }
}

fn format_summary(s: &Summary) -> String {
    let mean = format!("{:.2}", s.mean_micros());
    if s.runs == 1 {
        mean
    } else {
        format!("{mean} [{}, {}]", s.min, s.max)
    }
}

/// One table per `(W, |Λc|)` pair: rows are parallelism degrees, columns
/// the modes present (existing protocol first). Cells averaged over seeds
/// show `mean [min, max]`.
pub fn emit_table(records: &[RunRecord]) -> Result<String, ReportError> {
    if records.is_empty() {
        return Err(ReportError::EmptyResults);
    }
    let summary = summarize(records);
    let mut groups: BTreeMap<(usize, usize), BTreeMap<usize, BTreeMap<Mode, Summary>>> = BTreeMap::new();
    for (cell, s) in &summary {
        groups
            .entry((cell.wavelengths, cell.control))
            .or_default()
            .entry(cell.parallelism)
            .or_default()
            .insert(cell.mode, *s);
    }
    let mut text = String::new();
    for (i, ((w, c), rows)) in groups.iter().enumerate() {
        if i > 0 {
            text.push('\n');
        }
        let mut modes: Vec<Mode> = rows.values().flat_map(|m| m.keys().copied()).collect();
        modes.sort_by_key(|m| match m {
            Mode::Baseline => 0,
            Mode::ProposedConnection => 1,
            Mode::ProposedDatagram => 2,
        });
        modes.dedup();
        let mut table: Vec<Vec<String>> = vec![std::iter::once("Parallelism".to_owned())
            .chain(modes.iter().map(|m| column_title(*m).to_owned()))
            .collect()];
        for (p, cells) in rows {
            let mut line = vec![p.to_string()];
            line.extend(modes.iter().map(|m| cells.get(m).map_or_else(|| "-".to_owned(), format_summary)));
            table.push(line);
        }
        let widths: Vec<usize> = (0..table[0].len())
            .map(|col| table.iter().map(|r| r[col].chars().count()).max().unwrap_or(0))
            .collect();
        writeln!(text, "Wavelengths: {w}, control wavelengths: {c}").unwrap();
        for (r, row) in table.iter().enumerate() {
            let cells: Vec<String> = row.iter().zip(&widths).map(|(v, wd)| format!("{v:>wd$}")).collect();
            writeln!(text, "{}", cells.join("  ").trim_end()).unwrap();
            if r == 0 {
                let rule: Vec<String> = widths.iter().map(|wd| "-".repeat(*wd)).collect();
                writeln!(text, "{}", rule.join("  ")).unwrap();
            }
        }
    }
    Ok(text)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(w: usize, c: usize, p: usize, mode: Mode, ticks: u64, seed: u64) -> RunRecord {
        let metrics = Metrics { makespan: SimTime::from_ticks(ticks), seed, ..Default::default() };
        RunRecord { cell: Cell { wavelengths: w, control: c, parallelism: p, mode }, seed, metrics }
    }

    #[test]
    fn empty_input() {
        assert!(matches!(emit_table(&[]), Err(ReportError::EmptyResults)));
    }

    #[test]
    fn single_cell_one_row() {
        let t = emit_table(&[rec(4, 1, 1, Mode::ProposedConnection, 1_099_600, 1)]).unwrap();
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines.len(), 4, "{t}");
        assert_eq!(lines[0], "Wavelengths: 4, control wavelengths: 1");
        assert!(lines[3].ends_with("10996.00"));
    }

    #[test]
    fn existing_column_first_and_seed_ranges() {
        let t = emit_table(&[
            rec(4, 1, 1, Mode::ProposedConnection, 100, 1),
            rec(4, 1, 1, Mode::Baseline, 300, 1),
            rec(4, 1, 1, Mode::Baseline, 500, 2),
        ])
        .unwrap();
        let header = t.lines().nth(1).unwrap();
        assert!(header.find("Existing").unwrap() < header.find("Proposed").unwrap());
        assert!(t.contains("4.00 [3.00, 5.00]"), "{t}");
    }

    #[test]
    fn micros_parse() {
        assert_eq!(parse_micros("766.00"), Some(SimTime::from_micros(766)));
        assert_eq!(parse_micros("0.5"), Some(SimTime::from_ticks(50)));
        assert_eq!(parse_micros("12"), Some(SimTime::from_micros(12)));
        for bad in ["", ".5", "1.234", "-1", "1e3", "1.x"] {
            assert_eq!(parse_micros(bad), None, "{bad}");
        }
    }

    #[test]
    fn csv_header_and_round_trip() {
        let recs = vec![rec(64, 16, 16, Mode::ProposedConnection, 76_601, 9), rec(4, 1, 2, Mode::Baseline, 7, 3)];
        let text = csv_string(&recs);
        assert!(text.starts_with("W,control_wavelengths,parallelism,mode,makespan_us,discards,seed\n"));
        assert!(text.contains("64,16,16,proposed-connection,766.01,0,9"));
        let back = read_csv(text.as_bytes()).unwrap();
        assert_eq!(back, recs.iter().map(CsvRow::from).collect::<Vec<_>>());
    }

    #[test]
    fn malformed_csv() {
        let text = "W,control_wavelengths,parallelism,mode,makespan_us,discards,seed\n4,1,1,warp,1.00,0,1\n";
        assert!(matches!(read_csv(text.as_bytes()), Err(ReportError::Malformed { line: 2, .. })));
    }
}
