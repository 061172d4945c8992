use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::experiment::Report;
use crate::error::Result;

pub const CSV_HEADER: [&str; 10] = [
    "kind",
    "strategy",
    "passthrough",
    "scale_factor",
    "rep",
    "duration_us",
    "mean_us",
    "stderr_us",
    "t_stat",
    "p_value",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RowKind {
    Sample,
    Summary,
}

/// One CSV line. Sample rows fill `rep` and `duration_us`; summary rows fill
/// the aggregate columns, with `t_stat`/`p_value` only for tested configurations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvRecord {
    pub kind: RowKind,
    pub strategy: String,
    pub passthrough: bool,
    pub scale_factor: f64,
    pub rep: Option<usize>,
    pub duration_us: Option<f64>,
    pub mean_us: Option<f64>,
    pub stderr_us: Option<f64>,
    pub t_stat: Option<f64>,
    pub p_value: Option<f64>,
}

impl Report {
    pub fn to_records(&self) -> Vec<CsvRecord> {
        let mut out = Vec::new();
        for run in &self.runs {
            let base = CsvRecord {
                kind: RowKind::Sample,
                strategy: run.config.strategy.name().to_string(),
                passthrough: run.config.passthrough,
                scale_factor: run.scale_factor,
                rep: None,
                duration_us: None,
                mean_us: None,
                stderr_us: None,
                t_stat: None,
                p_value: None,
            };
            for (rep, &d) in run.samples.iter().enumerate() {
                out.push(CsvRecord {
                    rep: Some(rep),
                    duration_us: Some(d),
                    ..base.clone()
                });
            }
            let test = self.comparison(run.config, run.scale_factor);
            out.push(CsvRecord {
                kind: RowKind::Summary,
                mean_us: Some(run.mean),
                stderr_us: Some(run.stderr),
                t_stat: test.map(|c| c.t_statistic),
                p_value: test.map(|c| c.p_value),
                ..base
            });
        }
        out
    }
}

pub fn write_records<W: Write>(records: &[CsvRecord], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_records<R: Read>(input: R) -> Result<Vec<CsvRecord>> {
    let mut r = csv::Reader::from_reader(input);
    r.deserialize().map(|row| Ok(row?)).collect()
}

pub fn emit_csv(report: &Report, path: impl AsRef<Path>) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_records(&report.to_records(), std::io::BufWriter::new(file))
}

pub fn read_csv(path: impl AsRef<Path>) -> Result<Vec<CsvRecord>> {
    read_records(std::fs::File::open(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::experiment::{ExperimentKind, RunConfig, RunResult};
    use crate::bench::experiment::compare_runs;
    use crate::strategy::StrategyKind;

    fn run(kind: StrategyKind, sf: f64, samples: Vec<f64>) -> RunResult {
        RunResult {
            config: RunConfig::new(kind, true),
            scale_factor: sf,
            mean: crate::bench::stats::mean(&samples),
            stderr: crate::bench::stats::standard_error(&samples).unwrap(),
            host_seconds: vec![0.0; samples.len()],
            samples,
            checksum: 0,
        }
    }

    fn report() -> Report {
        let mut runs = Vec::new();
        let mut comparisons = Vec::new();
        for sf in [0.01, 0.1] {
            let a = run(StrategyKind::FileBaseline, sf, vec![10.5, 11.25, 12.0 / 7.0]);
            let b = run(StrategyKind::AsyncThreadQueues, sf, vec![1.0 / 3.0, 2.0, 2.5]);
            comparisons.push(compare_runs(&a, &b).unwrap());
            runs.push(a);
            runs.push(b);
        }
        Report {
            kind: ExperimentKind::Compare,
            runs,
            comparisons,
        }
    }

    #[test]
    fn empty_report_is_header_only() {
        let mut out = Vec::new();
        let empty = Report {
            kind: ExperimentKind::Compare,
            runs: vec![],
            comparisons: vec![],
        };
        write_records(&empty.to_records(), &mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), format!("{}\n", CSV_HEADER.join(",")));
    }

    #[test]
    fn row_counts_and_round_trip() {
        let r = report();
        let records = r.to_records();
        assert_eq!(records.iter().filter(|x| x.kind == RowKind::Sample).count(), 12);
        assert_eq!(records.iter().filter(|x| x.kind == RowKind::Summary).count(), 4);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        emit_csv(&r, &path).unwrap();
        assert_eq!(read_csv(&path).unwrap(), records);
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.lines().nth(4).unwrap().starts_with("summary,file,true,0.01,,,"));
    }
}
