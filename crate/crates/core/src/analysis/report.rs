//! Result tables, written as CSV or JSON carrying the same numbers.

use super::{CoincidenceStats, CrossTrialPoint, Estimate, EtaFitResult, SweepRow, TimeBin};
use serde::Serialize;
use serde_json::{json, Map, Value};
use std::io::Write;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Value>>,
}

impl Table {
    pub fn new(name: &str, columns: &[&str]) -> Self {
        Self {
            name: name.into(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Value>) {
        assert_eq!(row.len(), self.columns.len(), "row width of table {}", self.name);
        self.rows.push(row);
    }

    /// `{"schema_version", "table", "columns", "rows": [{column: value}]}`
    pub fn to_json(&self) -> Value {
        let rows: Vec<Value> = self
            .rows
            .iter()
            .map(|r| {
                let m: Map<String, Value> = self.columns.iter().cloned().zip(r.iter().cloned()).collect();
                Value::Object(m)
            })
            .collect();
        json!({
            "schema_version": REPORT_SCHEMA_VERSION,
            "table": self.name,
            "columns": self.columns,
            "rows": rows,
        })
    }

    /// Header row, then one line per row. Numbers use the JSON spelling so
    /// both formats carry identical digits; null cells are empty.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(&self.columns)?;
        for r in &self.rows {
            w.write_record(r.iter().map(cell))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv is utf-8")
    }
}

fn cell(v: &Value) -> String {
    match v {
        Value::Null => String::new(),
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn num(x: f64) -> Value {
    // non-finite values have no JSON spelling
    serde_json::Number::from_f64(x).map_or(Value::Null, Value::Number)
}

fn est(e: Option<Estimate>) -> [Value; 2] {
    e.map_or([Value::Null, Value::Null], |e| [num(e.value), num(e.sigma)])
}

pub fn stats_table(name: &str, s: &CoincidenceStats) -> Table {
    let mut t = Table::new(
        name,
        &[
            "n_trials", "c1", "c2", "cc", "p1", "p2", "pc", "sigma_p1", "sigma_p2", "sigma_pc", "g2", "sigma_g2",
        ],
    );
    let [g, sg] = est(s.g2().ok());
    t.push(vec![
        json!(s.n_trials),
        json!(s.c1),
        json!(s.c2),
        json!(s.cc),
        num(s.p1),
        num(s.p2),
        num(s.pc),
        num(s.sigma_p1),
        num(s.sigma_p2),
        num(s.sigma_pc),
        g,
        sg,
    ]);
    t
}

pub fn cross_trial_table(points: &[CrossTrialPoint]) -> Table {
    let mut t = Table::new("cross_trial_g2", &["offset", "g2", "sigma", "coincidences"]);
    for p in points {
        t.push(vec![json!(p.offset), num(p.g2), num(p.sigma), json!(p.coincidences)]);
    }
    t
}

/// Summary, per-point and model-curve tables of a fit.
pub fn fit_tables(f: &EtaFitResult) -> [Table; 3] {
    let mut s = Table::new(
        "eta_fit",
        &["eta_hat", "sigma_eta", "chi2", "dof", "n_points", "super_physical"],
    );
    s.push(vec![
        num(f.eta_hat),
        num(f.sigma_eta),
        num(f.chi2),
        json!(f.dof),
        json!(f.points.len()),
        json!(f.super_physical),
    ]);
    let mut p = Table::new(
        "eta_fit_points",
        &["alpha2_over_2p1", "v", "sigma_v", "c", "model_v", "residual"],
    );
    for x in &f.points {
        p.push(vec![
            num(x.alpha2_over_2p1),
            num(x.v),
            num(x.sigma_v),
            num(x.c),
            num(x.model_v),
            num(x.residual),
        ]);
    }
    let mut c = Table::new("eta_fit_curve", &["alpha2_over_2p1", "v"]);
    for &(x, v) in &f.model_curve {
        c.push(vec![num(x), num(v)]);
    }
    [s, p, c]
}

pub fn sweep_table(rows: &[SweepRow]) -> Table {
    let mut t = Table::new(
        "window_sweep",
        &[
            "width_ns", "start_ns", "end_ns", "eta", "sigma_eta", "chi2", "p_sp", "sigma_p_sp", "g2", "sigma_g2",
            "status",
        ],
    );
    for r in rows {
        let (s, e) = r
            .window
            .map_or((Value::Null, Value::Null), |w| (num(w.start_ps as f64 * 1e-3), num(w.end_ps as f64 * 1e-3)));
        let [eta, seta] = est(r.eta);
        let [psp, spsp] = est(r.p_sp);
        let [g, sg] = est(r.g2);
        t.push(vec![
            num(r.width_ns),
            s,
            e,
            eta,
            seta,
            r.chi2.map_or(Value::Null, num),
            psp,
            spsp,
            g,
            sg,
            json!(r.status),
        ]);
    }
    t
}

pub fn time_bins_table(bins: &[TimeBin]) -> Table {
    let mut t = Table::new(
        "time_resolved_visibility",
        &["start_ns", "end_ns", "coincidences_ind", "coincidences_dist", "v", "sigma_v", "empty"],
    );
    for b in bins {
        let [v, sv] = est(b.v);
        t.push(vec![
            num(b.start_ns),
            num(b.end_ns),
            json!(b.coincidences_ind),
            json!(b.coincidences_dist),
            v,
            sv,
            json!(b.empty),
        ]);
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_and_json_carry_identical_numbers() {
        let mut t = Table::new("t", &["a", "b", "c"]);
        t.push(vec![num(1e-7), num(0.1 + 0.2), Value::Null]);
        t.push(vec![json!(3), num(f64::NAN), json!("ok")]);
        let csv = t.to_csv_string();
        let mut rd = csv::Reader::from_reader(csv.as_bytes());
        let js = t.to_json();
        assert_eq!(js["schema_version"], REPORT_SCHEMA_VERSION);
        for (i, rec) in rd.records().enumerate() {
            let rec = rec.unwrap();
            for (j, col) in ["a", "b", "c"].iter().enumerate() {
                let jv = &js["rows"][i][col];
                match jv {
                    Value::Number(n) => assert_eq!(rec[j].parse::<f64>().unwrap(), n.as_f64().unwrap()),
                    Value::Null => assert_eq!(&rec[j], ""),
                    Value::String(s) => assert_eq!(&rec[j], s),
                    _ => unreachable!(),
                }
            }
        }
    }
}
