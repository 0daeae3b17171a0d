//! Per-run training records and their CSV renderings.
//!
//! `metrics.csv` and `losses.csv` contain only deterministic quantities, so
//! repeated runs produce identical bytes. Wall-clock phase times go to
//! `timings.csv`, which naturally differs between runs.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::pyramid::{AblationFlags, LATTICE};

pub const METRICS_HEADER: &str =
    "run_id,flag_set,flags,seed,steps,initial_loss,final_loss,loss_ratio,median_final_loss";
pub const LOSSES_HEADER: &str = "run_id,step,loss";
pub const TIMINGS_HEADER: &str = "run_id,phase,seconds";

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRecord {
    pub flags: AblationFlags,
    pub seed: u64,
    /// Loss at steps 1..=n.
    pub losses: Vec<f64>,
    /// Wall time per phase, in seconds.
    pub timings: Vec<(&'static str, f64)>,
}

impl MetricsRecord {
    pub fn run_id(&self) -> String {
        format!("{}-s{}", self.flags.tokens(), self.seed)
    }

    pub fn initial_loss(&self) -> f64 {
        self.losses.first().copied().unwrap_or(f64::NAN)
    }

    pub fn final_loss(&self) -> f64 {
        self.losses.last().copied().unwrap_or(f64::NAN)
    }

    pub fn loss_ratio(&self) -> f64 {
        self.final_loss() / self.initial_loss()
    }
}

/// Sort position of a flag set: lattice rows in their listed order, then
/// any other combination by its bit pattern.
pub fn flag_order(flags: AblationFlags) -> (usize, u8) {
    let bits = flags.bits();
    let row = AblationFlags::lattice().iter().position(|f| f.bits() == bits).unwrap_or(LATTICE.len());
    (row, bits)
}

pub fn sort_records(records: &mut [MetricsRecord]) {
    records.sort_by_key(|r| (flag_order(r.flags), r.seed));
}

/// Median of the final losses of every record sharing `flags`.
pub fn median_final_loss(records: &[MetricsRecord], flags: AblationFlags) -> f64 {
    let mut v: Vec<f64> =
        records.iter().filter(|r| r.flags.bits() == flags.bits()).map(MetricsRecord::final_loss).collect();
    median(&mut v)
}

pub fn median(v: &mut [f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Rows in sorted order; floats use the shortest round-trip representation.
pub fn metrics_csv(records: &[MetricsRecord]) -> String {
    let mut sorted = records.to_vec();
    sort_records(&mut sorted);
    let mut s = String::new();
    s.push_str(METRICS_HEADER);
    s.push('\n');
    for r in &sorted {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{:?},{:?},{:?},{:?}",
            r.run_id(),
            r.flags.label(),
            r.flags.tokens(),
            r.seed,
            r.losses.len(),
            r.initial_loss(),
            r.final_loss(),
            r.loss_ratio(),
            median_final_loss(records, r.flags)
        );
    }
    s
}

pub fn losses_csv(records: &[MetricsRecord]) -> String {
    let mut sorted = records.to_vec();
    sort_records(&mut sorted);
    let mut s = String::from(LOSSES_HEADER);
    s.push('\n');
    for r in &sorted {
        let id = r.run_id();
        for (i, l) in r.losses.iter().enumerate() {
            let _ = writeln!(s, "{id},{},{l:?}", i + 1);
        }
    }
    s
}

pub fn timings_csv(records: &[MetricsRecord]) -> String {
    let mut sorted = records.to_vec();
    sort_records(&mut sorted);
    let mut s = String::from(TIMINGS_HEADER);
    s.push('\n');
    for r in &sorted {
        for (phase, secs) in &r.timings {
            let _ = writeln!(s, "{},{phase},{secs:.6}", r.run_id());
        }
    }
    s
}

pub fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|source| Error::Io { path: path.to_path_buf(), source })
}

/// Writes `metrics.csv`, `losses.csv` and `timings.csv` into `dir`.
pub fn write_metrics(dir: &Path, records: &[MetricsRecord]) -> Result<()> {
    write_file(&dir.join("metrics.csv"), &metrics_csv(records))?;
    write_file(&dir.join("losses.csv"), &losses_csv(records))?;
    write_file(&dir.join("timings.csv"), &timings_csv(records))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(flags: &str, seed: u64, losses: Vec<f64>) -> MetricsRecord {
        MetricsRecord { flags: AblationFlags::parse(flags).unwrap(), seed, losses, timings: vec![("train", 1.5)] }
    }

    #[test]
    fn rows_sorted_by_lattice_then_seed() {
        let recs = vec![rec("full", 1, vec![1.0, 0.5]), rec("baseline", 2, vec![1.0, 0.25]), rec("full", 0, vec![1.0, 0.75]), rec("baseline", 0, vec![2.0, 0.5])];
        let csv = metrics_csv(&recs);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], METRICS_HEADER);
        assert_eq!(lines.len(), 5);
        assert!(lines[1].starts_with("none-s0,baseline,none,0,2,2.0,0.5,0.25,"));
        assert!(lines[2].starts_with("none-s2,baseline"));
        assert!(lines[3].starts_with("sp+pp+li+ni+ci-s0,full"));
        assert!(lines[4].starts_with("sp+pp+li+ni+ci-s1,full"));
        assert!(lines[3].ends_with(",0.625"));
    }

    #[test]
    fn numeric_fields_parse_as_finite() {
        let csv = metrics_csv(&[rec("+CIM", 3, vec![0.7, 0.1])]);
        let row = csv.lines().nth(1).unwrap();
        for field in row.split(',').skip(3) {
            assert!(field.parse::<f64>().unwrap().is_finite(), "{field}");
        }
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
