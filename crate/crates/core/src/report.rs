//! Study metrics and their file formats.
//!
//! `study.csv` has one row per (damage, θ_u, load scale, mode, devices) run,
//! sorted in that key order. For each (damage, θ_u) pair a whitespace
//! separated `figdata_<damage%>_<theta°>.dat` holds the columns
//! `load_scale qc_cost dc_cost qc_dev_cost psi`, with `NaN` for missing runs.

use crate::design::Mode;
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

/// Percent cost gap of the DC design below the QC design. Absent when the
/// QC cost is not positive.
pub fn zeta(qc_cost: f64, dc_cost: f64) -> Option<f64> {
    (qc_cost > 0.0).then(|| (qc_cost - dc_cost) / qc_cost * 100.0)
}

/// Percent saving from device options. Absent when the device-free cost is
/// not positive.
pub fn psi(cost_without: f64, cost_with: f64) -> Option<f64> {
    (cost_without > 0.0).then(|| (cost_without - cost_with) / cost_without * 100.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    pub damage_percentile: f64,
    pub theta_u: f64,
    pub load_scale: f64,
    pub mode: Mode,
    pub devices: bool,
    pub objective: f64,
    /// Set on DC rows that have a QC counterpart without devices.
    pub zeta: Option<f64>,
    /// Set on QC rows with devices that have a device-free counterpart.
    pub psi: Option<f64>,
    pub mu_crit_avg: f64,
    pub mu_crit_max: f64,
    pub mu_ncr_avg: f64,
    pub mu_ncr_max: f64,
    /// Only recorded when timing is requested, so outputs stay reproducible.
    pub wall_time_s: Option<f64>,
    pub sbd_iters: usize,
}

impl StudyRow {
    /// Order of rows in `study.csv`: (damage, θ_u, load scale, mode,
    /// devices), QC before DC.
    pub fn key_cmp(&self, other: &Self) -> Ordering {
        let k = |r: &Self| (r.damage_percentile, r.theta_u, r.load_scale);
        k(self)
            .partial_cmp(&k(other))
            .unwrap_or(Ordering::Equal)
            .then(self.mode.cmp(&other.mode))
            .then(self.devices.cmp(&other.devices))
    }

    fn same_case(&self, other: &Self) -> bool {
        self.damage_percentile == other.damage_percentile
            && self.theta_u == other.theta_u
            && self.load_scale == other.load_scale
    }
}

/// Sorts by [`StudyRow::key_cmp`].
pub fn sort_rows(rows: &mut [StudyRow]) {
    rows.sort_by(StudyRow::key_cmp);
}

/// Fills `zeta` and `psi` from matching rows, clearing them where a
/// counterpart is missing.
pub fn fill_metrics(rows: &mut [StudyRow]) {
    let snapshot = rows.to_vec();
    let find = |r: &StudyRow, mode: Mode, devices: bool| {
        snapshot
            .iter()
            .find(|o| o.same_case(r) && o.mode == mode && o.devices == devices)
            .map(|o| o.objective)
    };
    for r in rows.iter_mut() {
        let qc = find(r, Mode::Qc, false);
        r.zeta = match (r.mode, r.devices, qc) {
            (Mode::Dc, false, Some(q)) => zeta(q, r.objective),
            _ => None,
        };
        r.psi = match (r.mode, r.devices, qc) {
            (Mode::Qc, true, Some(q)) => psi(q, r.objective),
            _ => None,
        };
    }
}

pub fn study_csv(rows: &[StudyRow]) -> String {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    // Written by hand so that an empty study still has a header line.
    let header = [
        "damage_percentile",
        "theta_u",
        "load_scale",
        "mode",
        "devices",
        "objective",
        "zeta",
        "psi",
        "mu_crit_avg",
        "mu_crit_max",
        "mu_ncr_avg",
        "mu_ncr_max",
        "wall_time_s",
        "sbd_iters",
    ];
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.serialize(r).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv output is UTF-8")
}

pub fn parse_study_csv(text: &str) -> Result<Vec<StudyRow>, csv::Error> {
    csv::Reader::from_reader(text.as_bytes()).deserialize().collect()
}

fn trimmed(x: f64) -> String {
    let s = format!("{x:.2}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    s.to_string()
}

/// File name of the plot data for a (damage, θ_u) pair: damage in percent,
/// θ_u in degrees.
pub fn figdata_name(damage: f64, theta_u: f64) -> String {
    format!("figdata_{}_{}.dat", trimmed(damage * 100.0), trimmed(theta_u.to_degrees()))
}

/// Plot data files as `(file name, contents)`, in key order.
pub fn figdata(rows: &[StudyRow]) -> Vec<(String, String)> {
    let mut sorted = rows.to_vec();
    sort_rows(&mut sorted);
    let mut out: Vec<(String, String)> = Vec::new();
    let mut groups: Vec<(f64, f64, Vec<&StudyRow>)> = Vec::new();
    for r in &sorted {
        match groups.last_mut() {
            Some((d, t, g)) if *d == r.damage_percentile && *t == r.theta_u => g.push(r),
            _ => groups.push((r.damage_percentile, r.theta_u, vec![r])),
        }
    }
    let num = |x: Option<f64>| x.map_or("NaN".to_string(), |v| format!("{v}"));
    for (d, t, g) in groups {
        let mut text = String::from("# load_scale qc_cost dc_cost qc_dev_cost psi\n");
        let mut scales: Vec<f64> = g.iter().map(|r| r.load_scale).collect();
        scales.dedup();
        for ls in scales {
            let get = |mode: Mode, devices: bool| {
                g.iter()
                    .find(|r| r.load_scale == ls && r.mode == mode && r.devices == devices)
                    .copied()
            };
            let qc = get(Mode::Qc, false).map(|r| r.objective);
            let dc = get(Mode::Dc, false).map(|r| r.objective);
            let dev = get(Mode::Qc, true);
            let psi = dev.and_then(|r| r.psi).or_else(|| qc.zip(dev).and_then(|(q, r)| psi(q, r.objective)));
            writeln!(
                text,
                "{ls} {} {} {} {}",
                num(qc),
                num(dc),
                num(dev.map(|r| r.objective)),
                num(psi)
            )
            .unwrap();
        }
        out.push((figdata_name(d, t), text));
    }
    out
}

/// Writes `study.csv` and the plot data files into `dir`; returns the paths
/// written.
pub fn emit_study(rows: &[StudyRow], dir: &Path) -> std::io::Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut sorted = rows.to_vec();
    sort_rows(&mut sorted);
    let mut written = Vec::new();
    let path = dir.join("study.csv");
    std::fs::write(&path, study_csv(&sorted))?;
    written.push(path);
    for (name, text) in figdata(&sorted) {
        let path = dir.join(name);
        std::fs::write(&path, text)?;
        written.push(path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn row(load: f64, mode: Mode, devices: bool, obj: f64) -> StudyRow {
        StudyRow {
            damage_percentile: 0.5,
            theta_u: 15f64.to_radians(),
            load_scale: load,
            mode,
            devices,
            objective: obj,
            zeta: None,
            psi: None,
            mu_crit_avg: 0.0,
            mu_crit_max: 0.0,
            mu_ncr_avg: 0.0,
            mu_ncr_max: 0.0,
            wall_time_s: None,
            sbd_iters: 1,
        }
    }

    #[test]
    fn metric_examples() {
        assert_eq!(zeta(100.0, 100.0), Some(0.0));
        assert!((zeta(100.0, 90.0).unwrap() - 10.0).abs() < 1e-12);
        assert!(zeta(100.0, 120.0).unwrap() < 0.0);
        assert_eq!(zeta(0.0, 1.0), None);
        assert_eq!(psi(1000.0, 1000.0), Some(0.0));
        assert!((psi(1000.0, 900.0).unwrap() - 10.0).abs() < 1e-12);
        assert_eq!(psi(0.0, 0.0), None);
    }

    #[test]
    fn empty_study_is_header_only() {
        let text = study_csv(&[]);
        assert_eq!(text.lines().count(), 1);
        assert!(text.starts_with("damage_percentile,theta_u,load_scale,mode,devices,objective,zeta,psi,"));
        assert!(figdata(&[]).is_empty());
    }

    #[test]
    fn rows_sort_by_documented_key() {
        let mut rows = vec![row(1.25, Mode::Qc, false, 1.0), row(1.0, Mode::Dc, false, 1.0), row(1.0, Mode::Qc, true, 1.0)];
        rows[0].damage_percentile = 0.3;
        sort_rows(&mut rows);
        assert_eq!(rows[0].load_scale, 1.25);
        assert_eq!((rows[1].mode, rows[1].devices), (Mode::Qc, true));
        assert_eq!(rows[2].mode, Mode::Dc);
    }

    #[test]
    fn metrics_need_both_operands() {
        let mut rows = vec![
            row(1.0, Mode::Qc, false, 200.0),
            row(1.0, Mode::Dc, false, 150.0),
            row(1.0, Mode::Qc, true, 180.0),
            row(1.25, Mode::Dc, false, 300.0),
        ];
        fill_metrics(&mut rows);
        assert_eq!(rows[0].zeta, None);
        assert_eq!(rows[1].zeta, Some(25.0));
        assert_eq!(rows[2].psi, Some(10.0));
        assert_eq!(rows[3].zeta, None);
    }

    #[test]
    fn csv_round_trip() {
        let mut rows = vec![row(1.0, Mode::Qc, false, 2.5e6), row(1.0, Mode::Dc, false, 1.75e6)];
        rows[0].wall_time_s = Some(0.125);
        rows[0].mu_ncr_max = 12.345678901234;
        fill_metrics(&mut rows);
        let text = study_csv(&rows);
        assert_eq!(parse_study_csv(&text).unwrap(), rows);
    }

    #[test]
    fn figdata_columns_and_missing_values() {
        let rows = vec![row(1.0, Mode::Qc, false, 200.0), row(1.0, Mode::Dc, false, 150.0), row(1.25, Mode::Dc, false, 170.0)];
        let files = figdata(&rows);
        assert_eq!(files.len(), 1);
        assert_eq!(files[0].0, "figdata_50_15.dat");
        let lines: Vec<&str> = files[0].1.lines().collect();
        assert_eq!(lines[1], "1 200 150 NaN NaN");
        assert_eq!(lines[2], "1.25 NaN 170 NaN NaN");
    }
}
