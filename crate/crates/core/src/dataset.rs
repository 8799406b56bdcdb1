//! Two-phase observational data: ingestion, validation and stratum indexing.
//!
//! Every phase-1 row carries the treatment, the low-cost covariates `V`, the
//! phase-2 indicator `delta` and the known sampling probability `q`. The
//! outcome is present for every phase-1 row when it is a phase-1 variable and
//! only for phase-2 rows otherwise. High-cost covariates `W` exist only where
//! `delta = 1`.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use ordered_float::OrderedFloat;

use crate::error::{Error, Result};

/// Relative tolerance used when checking that `q` is constant in a stratum.
pub const Q_CONSTANCY_TOL: f64 = 1e-12;

/// Column-role map for CSV ingestion.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Schema {
    pub delta: String,
    pub q: String,
    pub treatment: String,
    pub outcome: String,
    pub v: Vec<String>,
    pub w: Vec<String>,
}

impl Schema {
    fn check(&self) -> Result<()> {
        let mut seen = std::collections::BTreeSet::new();
        let all = [&self.delta, &self.q, &self.treatment, &self.outcome]
            .into_iter()
            .chain(self.v.iter())
            .chain(self.w.iter());
        for name in all {
            if name.is_empty() {
                return Err(Error::Schema("empty column name in role map".into()));
            }
            if !seen.insert(name.as_str()) {
                return Err(Error::Schema(format!(
                    "column '{name}' is assigned to more than one role"
                )));
            }
        }
        Ok(())
    }
}

/// A phase-1 sample with its phase-2 subsample.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationTable {
    schema: Schema,
    treatment: Vec<u8>,
    outcome: Vec<Option<f64>>,
    v: Vec<Vec<f64>>,
    w: Vec<Vec<Option<f64>>>,
    delta: Vec<bool>,
    q: Vec<f64>,
}

/// Borrowed view of one named column.
#[derive(Debug, Clone, Copy)]
pub enum ColumnRef<'a> {
    Treatment(&'a [u8]),
    Outcome(&'a [Option<f64>]),
    Low(&'a [f64]),
    High(&'a [Option<f64>]),
}

impl ColumnRef<'_> {
    pub fn get(&self, row: usize) -> Option<f64> {
        match self {
            ColumnRef::Treatment(a) => Some(f64::from(a[row])),
            ColumnRef::Outcome(y) => y[row],
            ColumnRef::Low(v) => Some(v[row]),
            ColumnRef::High(w) => w[row],
        }
    }
}

impl ObservationTable {
    /// Builds a table from columns, enforcing every table invariant.
    pub fn from_columns(
        schema: Schema,
        treatment: Vec<u8>,
        outcome: Vec<Option<f64>>,
        v: Vec<Vec<f64>>,
        w: Vec<Vec<Option<f64>>>,
        delta: Vec<bool>,
        q: Vec<f64>,
    ) -> Result<Self> {
        let table = Self::assemble(schema, treatment, outcome, v, w, delta, q)?;
        if let Some(first) = table.violations().into_iter().next() {
            return Err(Error::Invariant(first));
        }
        Ok(table)
    }

    /// Structural checks only (lengths, binary codes, role map); used by
    /// `from_columns` and by the loader, which reports cell-level errors itself.
    fn assemble(
        schema: Schema,
        treatment: Vec<u8>,
        outcome: Vec<Option<f64>>,
        v: Vec<Vec<f64>>,
        w: Vec<Vec<Option<f64>>>,
        delta: Vec<bool>,
        q: Vec<f64>,
    ) -> Result<Self> {
        schema.check()?;
        let n = treatment.len();
        if v.len() != schema.v.len() || w.len() != schema.w.len() {
            return Err(Error::Schema(
                "number of covariate columns does not match the role map".into(),
            ));
        }
        let lengths_ok = outcome.len() == n
            && delta.len() == n
            && q.len() == n
            && v.iter().all(|c| c.len() == n)
            && w.iter().all(|c| c.len() == n);
        if !lengths_ok {
            return Err(Error::Schema("columns have different lengths".into()));
        }
        if let Some(i) = treatment.iter().position(|&a| a > 1) {
            return Err(Error::Invariant(format!("treatment at row {} is not 0/1", i + 1)));
        }
        Ok(Self {
            schema,
            treatment,
            outcome,
            v,
            w,
            delta,
            q,
        })
    }

    fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        for i in 0..self.n() {
            let q = self.q[i];
            if !(q > 0.0 && q <= 1.0) {
                out.push(format!("row {}: q = {q} is outside (0, 1]", i + 1));
            }
            for (name, col) in self.schema.v.iter().zip(&self.v) {
                if !col[i].is_finite() {
                    out.push(format!("row {}: low-cost covariate '{name}' is not finite", i + 1));
                }
            }
            if self.delta[i] {
                if self.outcome[i].is_none() {
                    out.push(format!("row {}: outcome missing at phase-2 row", i + 1));
                }
                for (name, col) in self.schema.w.iter().zip(&self.w) {
                    if col[i].is_none() {
                        out.push(format!(
                            "row {}: high-cost covariate '{name}' missing at phase-2 row",
                            i + 1
                        ));
                    }
                }
            }
        }
        out
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn n(&self) -> usize {
        self.treatment.len()
    }

    pub fn treatment(&self) -> &[u8] {
        &self.treatment
    }

    pub fn outcome(&self) -> &[Option<f64>] {
        &self.outcome
    }

    pub fn delta(&self) -> &[bool] {
        &self.delta
    }

    pub fn q(&self) -> &[f64] {
        &self.q
    }

    /// `delta_i / q_i` for every row.
    pub fn sampling_weights(&self) -> Vec<f64> {
        self.delta
            .iter()
            .zip(&self.q)
            .map(|(&d, &q)| if d { 1.0 / q } else { 0.0 })
            .collect()
    }

    pub fn phase2_rows(&self) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.delta[i]).collect()
    }

    pub fn phase2_count(&self) -> usize {
        self.delta.iter().filter(|&&d| d).count()
    }

    pub fn column(&self, name: &str) -> Option<ColumnRef<'_>> {
        if name == self.schema.treatment {
            return Some(ColumnRef::Treatment(&self.treatment));
        }
        if name == self.schema.outcome {
            return Some(ColumnRef::Outcome(&self.outcome));
        }
        if let Some(j) = self.schema.v.iter().position(|c| c == name) {
            return Some(ColumnRef::Low(&self.v[j]));
        }
        if let Some(j) = self.schema.w.iter().position(|c| c == name) {
            return Some(ColumnRef::High(&self.w[j]));
        }
        None
    }

    /// Keeps the given rows, in the given order.
    pub fn subset(&self, rows: &[usize]) -> Self {
        let pick = |col: &Vec<f64>| rows.iter().map(|&i| col[i]).collect::<Vec<_>>();
        Self {
            schema: self.schema.clone(),
            treatment: rows.iter().map(|&i| self.treatment[i]).collect(),
            outcome: rows.iter().map(|&i| self.outcome[i]).collect(),
            v: self.v.iter().map(pick).collect(),
            w: self
                .w
                .iter()
                .map(|col| rows.iter().map(|&i| col[i]).collect())
                .collect(),
            delta: rows.iter().map(|&i| self.delta[i]).collect(),
            q: pick(&self.q),
        }
    }

    /// Replaces the phase-2 design (`delta`, `q`). Outcome and high-cost cells of
    /// rows that leave phase 2 are kept; they are simply never read.
    pub fn with_design(&self, delta: Vec<bool>, q: Vec<f64>) -> Result<Self> {
        if delta.len() != self.n() || q.len() != self.n() {
            return Err(Error::Schema("design vectors have the wrong length".into()));
        }
        Self::from_columns(
            self.schema.clone(),
            self.treatment.clone(),
            self.outcome.clone(),
            self.v.clone(),
            self.w.clone(),
            delta,
            q,
        )
    }

    /// Writes the table as CSV, using the shortest decimal representation that
    /// round-trips every value.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(writer);
        let s = &self.schema;
        let mut header = vec![s.treatment.as_str(), s.outcome.as_str()];
        header.extend(s.v.iter().map(String::as_str));
        header.extend(s.w.iter().map(String::as_str));
        header.push(&s.delta);
        header.push(&s.q);
        out.write_record(&header)?;
        let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
        for i in 0..self.n() {
            let mut rec = vec![self.treatment[i].to_string(), opt(self.outcome[i])];
            rec.extend(self.v.iter().map(|c| c[i].to_string()));
            rec.extend(self.w.iter().map(|c| opt(c[i])));
            rec.push(u8::from(self.delta[i]).to_string());
            rec.push(self.q[i].to_string());
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    }
}

fn parse_cell(raw: &str, row: usize, column: &str) -> Result<Option<f64>> {
    let t = raw.trim();
    if t.is_empty() {
        return Ok(None);
    }
    match t.parse::<f64>() {
        Ok(x) if x.is_finite() => Ok(Some(x)),
        Ok(_) => Err(Error::Parse {
            row,
            column: column.to_string(),
            message: format!("non-finite value '{t}'"),
        }),
        Err(_) => Err(Error::Parse {
            row,
            column: column.to_string(),
            message: format!("malformed numeric cell '{t}'"),
        }),
    }
}

fn parse_binary(raw: &str, row: usize, column: &str) -> Result<u8> {
    match parse_cell(raw, row, column)? {
        Some(x) if x == 0.0 => Ok(0),
        Some(x) if x == 1.0 => Ok(1),
        Some(x) => Err(Error::Parse {
            row,
            column: column.into(),
            message: format!("expected 0 or 1, found {x}"),
        }),
        None => Err(Error::Parse {
            row,
            column: column.into(),
            message: "missing value in a required column".into(),
        }),
    }
}

/// Reads a CSV with a header row into an [`ObservationTable`].
pub fn load_observations<R: Read>(source: R, schema: &Schema) -> Result<ObservationTable> {
    schema.check()?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(source);
    let headers = reader.headers()?.clone();
    let index = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("column '{name}' not found in header")))
    };
    let i_delta = index(&schema.delta)?;
    let i_q = index(&schema.q)?;
    let i_a = index(&schema.treatment)?;
    let i_y = index(&schema.outcome)?;
    let i_v = schema.v.iter().map(|c| index(c)).collect::<Result<Vec<_>>>()?;
    let i_w = schema.w.iter().map(|c| index(c)).collect::<Result<Vec<_>>>()?;

    let mut treatment = Vec::new();
    let mut outcome = Vec::new();
    let mut v: Vec<Vec<f64>> = vec![Vec::new(); i_v.len()];
    let mut w: Vec<Vec<Option<f64>>> = vec![Vec::new(); i_w.len()];
    let mut delta = Vec::new();
    let mut q = Vec::new();

    for (r, record) in reader.records().enumerate() {
        let record = record?;
        let row = r + 1;
        let cell = |i: usize| record.get(i).unwrap_or("");
        let d = parse_binary(cell(i_delta), row, &schema.delta)? == 1;
        let qi = parse_cell(cell(i_q), row, &schema.q)?.ok_or_else(|| Error::Parse {
            row,
            column: schema.q.clone(),
            message: "missing sampling probability".into(),
        })?;
        if !(qi > 0.0 && qi <= 1.0) {
            return Err(Error::Parse {
                row,
                column: schema.q.clone(),
                message: format!("q = {qi} is outside (0, 1]"),
            });
        }
        let a = parse_binary(cell(i_a), row, &schema.treatment)?;
        let y = parse_cell(cell(i_y), row, &schema.outcome)?;
        if d && y.is_none() {
            return Err(Error::Parse {
                row,
                column: schema.outcome.clone(),
                message: "outcome missing at phase-2 row".into(),
            });
        }
        for (j, &ci) in i_v.iter().enumerate() {
            let x = parse_cell(cell(ci), row, &schema.v[j])?.ok_or_else(|| Error::Parse {
                row,
                column: schema.v[j].clone(),
                message: "low-cost covariate missing".into(),
            })?;
            v[j].push(x);
        }
        for (j, &ci) in i_w.iter().enumerate() {
            let x = parse_cell(cell(ci), row, &schema.w[j])?;
            if d && x.is_none() {
                return Err(Error::Parse {
                    row,
                    column: schema.w[j].clone(),
                    message: "high-cost covariate missing at phase-2 row".into(),
                });
            }
            w[j].push(x);
        }
        treatment.push(a);
        outcome.push(y);
        delta.push(d);
        q.push(qi);
    }
    ObservationTable::from_columns(schema.clone(), treatment, outcome, v, w, delta, q)
}

/// Lexicographically ordered stratum key (one value per key column).
pub type StratumKey = Vec<OrderedFloat<f64>>;

/// Partition of the phase-1 rows by the discrete phase-1 variable `S`.
///
/// Labels are 0-based and follow the lexicographic order of the key tuples.
#[derive(Debug, Clone, PartialEq)]
pub struct StratumIndex {
    pub key_columns: Vec<String>,
    pub keys: Vec<StratumKey>,
    pub labels: Vec<usize>,
    pub counts: Vec<usize>,
    /// Phase-2 counts `m_k`; all zero when built without a design.
    pub phase2_counts: Vec<usize>,
    pub shares: Vec<f64>,
    /// Common `q` per stratum; empty when built without a design.
    pub q: Vec<f64>,
}

impl StratumIndex {
    /// Groups rows by their key tuples. No phase-2 information is attached.
    pub fn from_keys(key_columns: Vec<String>, row_keys: &[StratumKey]) -> Self {
        let mut map: BTreeMap<&StratumKey, usize> = BTreeMap::new();
        for k in row_keys {
            map.entry(k).or_insert(0);
        }
        for (label, slot) in map.values_mut().enumerate() {
            *slot = label;
        }
        let keys: Vec<StratumKey> = map.keys().map(|k| (*k).clone()).collect();
        let labels: Vec<usize> = row_keys.iter().map(|k| map[k]).collect();
        let mut counts = vec![0usize; keys.len()];
        for &l in &labels {
            counts[l] += 1;
        }
        let n = labels.len() as f64;
        let shares = counts.iter().map(|&c| c as f64 / n).collect();
        Self {
            key_columns,
            phase2_counts: vec![0; keys.len()],
            keys,
            labels,
            counts,
            shares,
            q: Vec::new(),
        }
    }

    pub fn k(&self) -> usize {
        self.keys.len()
    }

    pub fn label_of(&self, key: &StratumKey) -> Option<usize> {
        self.keys.binary_search(key).ok()
    }

    /// Row indices of each stratum.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.k()];
        for (i, &l) in self.labels.iter().enumerate() {
            out[l].push(i);
        }
        out
    }
}

/// Reads the key tuple of every row; fails if a key cell is missing.
pub fn stratum_keys(table: &ObservationTable, key_columns: &[String]) -> Result<Vec<StratumKey>> {
    let cols = key_columns
        .iter()
        .map(|name| {
            table
                .column(name)
                .ok_or_else(|| Error::Schema(format!("stratum key column '{name}' not found")))
        })
        .collect::<Result<Vec<_>>>()?;
    (0..table.n())
        .map(|i| {
            cols.iter()
                .zip(key_columns)
                .map(|(c, name)| {
                    c.get(i).map(OrderedFloat).ok_or_else(|| {
                        Error::Invariant(format!(
                            "stratum key column '{name}' has a missing value at row {}",
                            i + 1
                        ))
                    })
                })
                .collect()
        })
        .collect()
}

/// Builds the stratum index of `S` from the named key columns and checks that
/// `q` is constant within each stratum.
pub fn build_strata(table: &ObservationTable, key_columns: &[String]) -> Result<StratumIndex> {
    let keys = stratum_keys(table, key_columns)?;
    let mut index = StratumIndex::from_keys(key_columns.to_vec(), &keys);
    let mut q = vec![f64::NAN; index.k()];
    let mut m = vec![0usize; index.k()];
    for (i, &l) in index.labels.iter().enumerate() {
        let qi = table.q()[i];
        if q[l].is_nan() {
            q[l] = qi;
        } else if (qi - q[l]).abs() > Q_CONSTANCY_TOL * q[l].abs() {
            return Err(Error::Invariant(format!(
                "q varies within stratum {l} ({} vs {qi} at row {})",
                q[l],
                i + 1
            )));
        }
        if table.delta()[i] {
            m[l] += 1;
        }
    }
    index.q = q;
    index.phase2_counts = m;
    Ok(index)
}

/// Outcome of [`validate`].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ValidationReport {
    pub violations: Vec<String>,
    pub warnings: Vec<String>,
    pub notes: Vec<String>,
    /// `(key, n_k, m_k)` per stratum when key columns were given.
    pub strata: Vec<(StratumKey, usize, usize)>,
    pub phase2_fraction: f64,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Reports invariant violations, per-stratum phase-2 counts and design notes.
pub fn validate(table: &ObservationTable, key_columns: &[String]) -> ValidationReport {
    let mut report = ValidationReport {
        violations: table.violations(),
        ..Default::default()
    };
    let n = table.n();
    report.phase2_fraction = if n == 0 {
        0.0
    } else {
        table.phase2_count() as f64 / n as f64
    };
    if n > 0 && table.delta().iter().all(|&d| d) && table.q().iter().all(|&q| q == 1.0) {
        report.notes.push("single-phase data".into());
    }
    if !key_columns.is_empty() {
        match build_strata(table, key_columns) {
            Ok(strata) => {
                for k in 0..strata.k() {
                    if strata.phase2_counts[k] == 0 {
                        report
                            .warnings
                            .push(format!("empty phase-2 stratum {k} (n_k = {})", strata.counts[k]));
                    }
                    report
                        .strata
                        .push((strata.keys[k].clone(), strata.counts[k], strata.phase2_counts[k]));
                }
            }
            Err(e) => report.violations.push(e.to_string()),
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema() -> Schema {
        Schema {
            delta: "delta".into(),
            q: "q".into(),
            treatment: "a".into(),
            outcome: "y".into(),
            v: vec!["v1".into()],
            w: vec!["w1".into()],
        }
    }

    #[test]
    fn single_phase_table() {
        let csv = "a,y,v1,w1,delta,q\n1,1,0,0.5,1,1\n0,0,1,1.5,1,1\n1,0,1,2,1,1\n0,1,0,-1,1,1\n";
        let t = load_observations(csv.as_bytes(), &schema()).unwrap();
        assert_eq!(t.n(), 4);
        assert_eq!(t.phase2_count(), 4);
        let report = validate(&t, &[]);
        assert!(report.is_clean());
        assert_eq!(report.notes, vec!["single-phase data".to_string()]);
    }

    #[test]
    fn missing_high_cost_allowed_off_phase2() {
        let csv = "a,y,v1,w1,delta,q\n1,1,0,,0,0.5\n0,0,1,1.5,1,0.5\n";
        let t = load_observations(csv.as_bytes(), &schema()).unwrap();
        assert_eq!(t.column("w1").unwrap().get(0), None);
        assert_eq!(t.column("w1").unwrap().get(1), Some(1.5));
    }

    #[test]
    fn missing_outcome_at_phase2_is_rejected() {
        let csv = "a,y,v1,w1,delta,q\n1,,0,0.3,1,0.5\n";
        let err = load_observations(csv.as_bytes(), &schema()).unwrap_err();
        assert!(err.to_string().contains("outcome missing at phase-2 row"), "{err}");
        assert!(err.is_user_error());
    }

    #[test]
    fn malformed_cell_reports_position() {
        let csv = "a,y,v1,w1,delta,q\n1,1,0,0.3,1,0.5\n1,1,abc,0.3,1,0.5\n";
        match load_observations(csv.as_bytes(), &schema()).unwrap_err() {
            Error::Parse { row, column, .. } => {
                assert_eq!(row, 2);
                assert_eq!(column, "v1");
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn q_out_of_range_is_rejected() {
        for bad in ["0", "1.5", "-0.2"] {
            let csv = format!("a,y,v1,w1,delta,q\n1,1,0,0.3,1,{bad}\n");
            assert!(load_observations(csv.as_bytes(), &schema()).is_err(), "q = {bad}");
        }
    }

    #[test]
    fn duplicate_roles_are_rejected() {
        let mut s = schema();
        s.w = vec!["v1".into()];
        assert!(matches!(
            load_observations("a\n".as_bytes(), &s),
            Err(Error::Schema(_))
        ));
    }

    fn binary_table(n: usize) -> ObservationTable {
        let a: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
        let v1: Vec<f64> = (0..n).map(|i| ((i / 2) % 2) as f64).collect();
        let y: Vec<Option<f64>> = (0..n).map(|i| Some(((i / 4) % 2) as f64)).collect();
        ObservationTable::from_columns(
            schema(),
            a,
            y,
            vec![v1],
            vec![vec![Some(0.0); n]],
            vec![true; n],
            vec![1.0; n],
        )
        .unwrap()
    }

    #[test]
    fn eight_and_four_strata() {
        let t = binary_table(16);
        let ods = build_strata(&t, &["a".into(), "v1".into(), "y".into()]).unwrap();
        assert_eq!(ods.k(), 8);
        let non = build_strata(&t, &["a".into(), "v1".into()]).unwrap();
        assert_eq!(non.k(), 4);
        assert_eq!(non.counts, vec![4, 4, 4, 4]);
        let one = build_strata(&t, &[]).unwrap();
        assert_eq!(one.k(), 1);
        assert_eq!(one.shares, vec![1.0]);
    }

    #[test]
    fn labels_follow_lexicographic_key_order() {
        let t = binary_table(8);
        let s = build_strata(&t, &["v1".into(), "a".into()]).unwrap();
        let expected: Vec<StratumKey> = vec![
            vec![OrderedFloat(0.0), OrderedFloat(0.0)],
            vec![OrderedFloat(0.0), OrderedFloat(1.0)],
            vec![OrderedFloat(1.0), OrderedFloat(0.0)],
            vec![OrderedFloat(1.0), OrderedFloat(1.0)],
        ];
        assert_eq!(s.keys, expected);
        // row 0: a=0, v1=0 ; row 3: a=1, v1=1
        assert_eq!(s.labels[0], 0);
        assert_eq!(s.labels[3], 3);
    }

    #[test]
    fn q_must_be_constant_within_stratum() {
        let t = binary_table(8);
        let mut q = vec![1.0; 8];
        q[0] = 0.5;
        let t = t.with_design(vec![true; 8], q).unwrap();
        assert!(build_strata(&t, &["a".into()]).is_err());
    }

    #[test]
    fn missing_key_value_is_rejected() {
        let csv = "a,y,v1,w1,delta,q\n1,,0,,0,0.5\n0,0,1,1.5,1,0.5\n";
        let t = load_observations(csv.as_bytes(), &schema()).unwrap();
        assert!(build_strata(&t, &["a".into(), "y".into()]).is_err());
    }

    #[test]
    fn empty_phase2_stratum_warns() {
        let t = binary_table(8);
        let delta: Vec<bool> = (0..8).map(|i| i % 2 == 1).collect();
        let t = t.with_design(delta, vec![0.5; 8]).unwrap();
        let r = validate(&t, &["a".into()]);
        assert!(r.is_clean());
        assert_eq!(r.warnings.len(), 1);
        assert!(r.warnings[0].contains("empty phase-2 stratum"));
        assert_eq!(r.phase2_fraction, 0.5);
    }

    #[test]
    fn subset_keeps_order() {
        let t = binary_table(6);
        let s = t.subset(&[5, 0]);
        assert_eq!(s.treatment(), &[1, 0]);
        assert_eq!(s.n(), 2);
    }
}
