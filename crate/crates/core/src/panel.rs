//! Unbalanced panel data: ingestion, validation and CSV round trips.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One period of one firm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub period: String,
    pub x: Vec<f64>,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FirmBlock {
    pub firm_id: String,
    pub periods: Vec<Observation>,
}

impl FirmBlock {
    pub fn t(&self) -> usize {
        self.periods.len()
    }

    /// Firm-mean input vector x̄_i.
    pub fn xbar(&self) -> Vec<f64> {
        let dim = self.periods.first().map_or(0, |o| o.x.len());
        let t = self.periods.len() as f64;
        (0..dim)
            .map(|j| self.periods.iter().map(|o| o.x[j]).sum::<f64>() / t)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectedRow {
    /// 1-based data row (the header is row 0).
    pub row: usize,
    pub reason: String,
}

/// Column mapping for CSV ingestion.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PanelSchema {
    pub firm_col: String,
    pub period_col: String,
    pub y_col: String,
    pub x_cols: Vec<String>,
}

impl Default for PanelSchema {
    fn default() -> Self {
        PanelSchema {
            firm_col: "firm".into(),
            period_col: "period".into(),
            y_col: "y".into(),
            x_cols: vec!["x".into()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelDataset {
    pub firms: Vec<FirmBlock>,
    pub input_dim: usize,
    /// Rows dropped during ingestion.
    #[serde(default)]
    pub rejected: Vec<RejectedRow>,
}

/// Ordering used for firm ids and periods: integers numerically, then
/// everything else lexically.
fn natural_cmp(a: &str, b: &str) -> Ordering {
    match (a.trim().parse::<i64>(), b.trim().parse::<i64>()) {
        (Ok(x), Ok(y)) => x.cmp(&y).then_with(|| a.cmp(b)),
        (Ok(_), Err(_)) => Ordering::Less,
        (Err(_), Ok(_)) => Ordering::Greater,
        (Err(_), Err(_)) => match (a.trim().parse::<f64>(), b.trim().parse::<f64>()) {
            (Ok(x), Ok(y)) => x.total_cmp(&y).then_with(|| a.cmp(b)),
            _ => a.cmp(b),
        },
    }
}

impl PanelDataset {
    /// Builds a dataset from firm blocks, sorting firms by id and periods by
    /// period label.
    pub fn new(mut firms: Vec<FirmBlock>, input_dim: usize) -> Result<Self> {
        let mut seen = HashSet::new();
        for firm in &mut firms {
            if !seen.insert(firm.firm_id.clone()) {
                return Err(Error::Schema(format!("firm id `{}` appears twice", firm.firm_id)));
            }
            if firm.periods.is_empty() {
                return Err(Error::Schema(format!("firm `{}` has no periods", firm.firm_id)));
            }
            for obs in &firm.periods {
                if obs.x.len() != input_dim {
                    return Err(Error::Schema(format!(
                        "firm `{}` period `{}` has {} inputs, expected {input_dim}",
                        firm.firm_id,
                        obs.period,
                        obs.x.len()
                    )));
                }
            }
            firm.periods.sort_by(|a, b| natural_cmp(&a.period, &b.period));
            for pair in firm.periods.windows(2) {
                if pair[0].period == pair[1].period {
                    return Err(Error::Duplicate {
                        firm: firm.firm_id.clone(),
                        period: pair[0].period.clone(),
                        row: 0,
                    });
                }
            }
        }
        firms.sort_by(|a, b| natural_cmp(&a.firm_id, &b.firm_id));
        Ok(PanelDataset { firms, input_dim, rejected: Vec::new() })
    }

    pub fn n_firms(&self) -> usize {
        self.firms.len()
    }

    pub fn n_obs(&self) -> usize {
        self.firms.iter().map(FirmBlock::t).sum()
    }

    /// Outcomes in storage order (firm by firm, period by period).
    pub fn outcomes(&self) -> Vec<f64> {
        self.firms.iter().flat_map(|f| f.periods.iter().map(|o| o.y)).collect()
    }

    pub fn xbars(&self) -> Vec<Vec<f64>> {
        self.firms.iter().map(FirmBlock::xbar).collect()
    }
}

fn parse_cell(raw: &str, row: usize, column: &str) -> Result<f64> {
    raw.trim().parse::<f64>().map_err(|_| Error::Parse {
        row,
        column: column.to_string(),
        value: raw.to_string(),
    })
}

/// Reads a panel from CSV with a header row.
///
/// Rows with an empty cell or a non-finite number in a used column are dropped
/// and listed in `rejected`. A cell that is present but not numeric is a parse
/// error.
pub fn load_panel_csv(path: impl AsRef<Path>, schema: &PanelSchema) -> Result<PanelDataset> {
    let path = path.as_ref();
    if schema.x_cols.is_empty() {
        return Err(Error::Schema("at least one input column is required".into()));
    }
    let file = File::open(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
    let meta_len = file.metadata().map(|m| m.len()).unwrap_or(0);
    if meta_len == 0 {
        return Ok(PanelDataset { firms: Vec::new(), input_dim: schema.x_cols.len(), rejected: Vec::new() });
    }
    let mut reader = csv::ReaderBuilder::new().has_headers(true).flexible(false).from_reader(file);
    let headers = reader.headers()?.clone();
    let index_of = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::Schema(format!("missing column `{name}`")))
    };
    let firm_idx = index_of(&schema.firm_col)?;
    let period_idx = index_of(&schema.period_col)?;
    let y_idx = index_of(&schema.y_col)?;
    let x_idx = schema.x_cols.iter().map(|c| index_of(c)).collect::<Result<Vec<_>>>()?;

    let mut grouped: BTreeMap<String, Vec<(Observation, usize)>> = BTreeMap::new();
    let mut rejected = Vec::new();
    for (k, record) in reader.records().enumerate() {
        let row = k + 1;
        let record = record?;
        let cell = |i: usize| record.get(i).unwrap_or("").trim();
        let firm = cell(firm_idx);
        let period = cell(period_idx);
        let mut used = vec![(schema.y_col.as_str(), cell(y_idx))];
        used.extend(schema.x_cols.iter().zip(&x_idx).map(|(c, &i)| (c.as_str(), cell(i))));
        if firm.is_empty() || period.is_empty() || used.iter().any(|(_, v)| v.is_empty()) {
            rejected.push(RejectedRow { row, reason: "missing field".into() });
            continue;
        }
        let y = parse_cell(cell(y_idx), row, &schema.y_col)?;
        let x = schema
            .x_cols
            .iter()
            .zip(&x_idx)
            .map(|(c, &i)| parse_cell(cell(i), row, c))
            .collect::<Result<Vec<_>>>()?;
        if !y.is_finite() || x.iter().any(|v| !v.is_finite()) {
            rejected.push(RejectedRow { row, reason: "non-finite value".into() });
            continue;
        }
        grouped
            .entry(firm.to_string())
            .or_default()
            .push((Observation { period: period.to_string(), x, y }, row));
    }

    let mut firms = Vec::with_capacity(grouped.len());
    for (firm_id, mut rows) in grouped {
        rows.sort_by(|a, b| natural_cmp(&a.0.period, &b.0.period).then(a.1.cmp(&b.1)));
        for pair in rows.windows(2) {
            if pair[0].0.period == pair[1].0.period {
                return Err(Error::Duplicate { firm: firm_id, period: pair[1].0.period.clone(), row: pair[1].1 });
            }
        }
        firms.push(FirmBlock { firm_id, periods: rows.into_iter().map(|(o, _)| o).collect() });
    }
    let mut data = PanelDataset::new(firms, schema.x_cols.len())?;
    data.rejected = rejected;
    Ok(data)
}

/// Writes the panel with columns firm, period, inputs, outcome. Numbers use
/// the shortest representation that parses back to the same double.
pub fn write_panel_csv(data: &PanelDataset, path: impl AsRef<Path>, schema: &PanelSchema) -> Result<()> {
    let path = path.as_ref();
    if schema.x_cols.len() != data.input_dim {
        return Err(Error::Schema(format!(
            "schema names {} inputs but the panel has {}",
            schema.x_cols.len(),
            data.input_dim
        )));
    }
    let mut writer = csv::Writer::from_path(path)?;
    let mut header = vec![schema.firm_col.clone(), schema.period_col.clone()];
    header.extend(schema.x_cols.iter().cloned());
    header.push(schema.y_col.clone());
    writer.write_record(&header)?;
    for firm in &data.firms {
        for obs in &firm.periods {
            let mut rec = vec![firm.firm_id.clone(), obs.period.clone()];
            rec.extend(obs.x.iter().map(|v| v.to_string()));
            rec.push(obs.y.to_string());
            writer.write_record(&rec)?;
        }
    }
    writer.flush().map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
    Ok(())
}

/// Which per-firm error-moment estimators a given T allows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MomentEligibility {
    pub mu2_v: bool,
    pub mu3_v: bool,
    pub mu4_v: bool,
}

impl MomentEligibility {
    pub fn for_t(t: usize) -> Self {
        MomentEligibility { mu2_v: t >= 2, mu3_v: t >= 3, mu4_v: t >= 4 }
    }

    fn none() -> Self {
        MomentEligibility { mu2_v: false, mu3_v: false, mu4_v: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FirmEligibility {
    pub firm_id: String,
    pub t: usize,
    pub eligible: MomentEligibility,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub n_firms: usize,
    pub n_obs: usize,
    pub min_t: usize,
    pub max_t: usize,
    /// Estimator available for every firm (driven by `min_t`).
    pub all_firms: MomentEligibility,
    /// Pooled estimator available (some firm is eligible).
    pub pooled: MomentEligibility,
    pub per_firm: Vec<FirmEligibility>,
    /// Firms with fewer than the requested number of periods.
    pub below_min_t: Vec<String>,
    pub rejected_rows: Vec<RejectedRow>,
}

pub fn validate(data: &PanelDataset, min_t: usize) -> ValidationReport {
    let ts: Vec<usize> = data.firms.iter().map(FirmBlock::t).collect();
    let (lo, hi) = (ts.iter().copied().min().unwrap_or(0), ts.iter().copied().max().unwrap_or(0));
    let (all_firms, pooled) = if ts.is_empty() {
        (MomentEligibility::none(), MomentEligibility::none())
    } else {
        (MomentEligibility::for_t(lo), MomentEligibility::for_t(hi))
    };
    ValidationReport {
        n_firms: data.n_firms(),
        n_obs: data.n_obs(),
        min_t: lo,
        max_t: hi,
        all_firms,
        pooled,
        per_firm: data
            .firms
            .iter()
            .map(|f| FirmEligibility { firm_id: f.firm_id.clone(), t: f.t(), eligible: MomentEligibility::for_t(f.t()) })
            .collect(),
        below_min_t: data.firms.iter().filter(|f| f.t() < min_t).map(|f| f.firm_id.clone()).collect(),
        rejected_rows: data.rejected.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn csv_file(body: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(body.as_bytes()).unwrap();
        f
    }

    #[test]
    fn one_firm_three_periods() {
        let f = csv_file("firm,period,x,y\nA,3,1.0,2.0\nA,1,1.5,2.5\nA,2,2.0,3.0\n");
        let data = load_panel_csv(f.path(), &PanelSchema::default()).unwrap();
        assert_eq!(data.n_firms(), 1);
        assert_eq!(data.firms[0].t(), 3);
        let periods: Vec<_> = data.firms[0].periods.iter().map(|o| o.period.as_str()).collect();
        assert_eq!(periods, ["1", "2", "3"]);
    }

    #[test]
    fn duplicate_is_error() {
        let f = csv_file("firm,period,x,y\nA,1,1,2\nA,1,1,3\n");
        let err = load_panel_csv(f.path(), &PanelSchema::default()).unwrap_err();
        assert!(matches!(err, Error::Duplicate { row: 2, .. }), "{err}");
    }

    #[test]
    fn empty_file_gives_empty_panel() {
        let f = csv_file("");
        let data = load_panel_csv(f.path(), &PanelSchema::default()).unwrap();
        assert_eq!(data.n_firms(), 0);
        let report = validate(&data, 4);
        assert_eq!(report.n_firms, 0);
        assert!(!report.pooled.mu2_v && !report.pooled.mu3_v && !report.pooled.mu4_v);
        assert!(!report.all_firms.mu2_v);
    }

    #[test]
    fn missing_column_and_bad_cell() {
        let f = csv_file("firm,period,y\nA,1,2\n");
        assert!(matches!(load_panel_csv(f.path(), &PanelSchema::default()), Err(Error::Schema(_))));
        let f = csv_file("firm,period,x,y\nA,1,1,2\nA,2,abc,2\n");
        match load_panel_csv(f.path(), &PanelSchema::default()) {
            Err(Error::Parse { row, column, .. }) => {
                assert_eq!(row, 2);
                assert_eq!(column, "x");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn missing_fields_are_dropped_and_reported() {
        let f = csv_file("firm,period,x,y\nA,1,1,2\nA,2,,2\nB,1,1,NaN\n");
        let data = load_panel_csv(f.path(), &PanelSchema::default()).unwrap();
        assert_eq!(data.n_obs(), 1);
        assert_eq!(data.rejected.len(), 2);
        assert_eq!(data.rejected[0].row, 2);
    }

    #[test]
    fn validation_flags() {
        let mk = |id: &str, t: usize| FirmBlock {
            firm_id: id.into(),
            periods: (0..t).map(|p| Observation { period: p.to_string(), x: vec![0.0], y: 0.0 }).collect(),
        };
        let data = PanelDataset::new(vec![mk("a", 8), mk("b", 8)], 1).unwrap();
        let r = validate(&data, 4);
        assert!(r.all_firms.mu4_v && r.below_min_t.is_empty());

        let data = PanelDataset::new(vec![mk("a", 8), mk("b", 2)], 1).unwrap();
        let r = validate(&data, 4);
        assert_eq!(r.below_min_t, vec!["b".to_string()]);
        assert!(!r.per_firm[1].eligible.mu3_v && !r.per_firm[1].eligible.mu4_v);
        assert!(r.pooled.mu4_v && !r.all_firms.mu3_v);
        assert_eq!((r.min_t, r.max_t), (2, 8));
    }

    #[test]
    fn natural_order_of_ids() {
        let mut ids = vec!["10", "9", "b", "a", "2"];
        ids.sort_by(|a, b| natural_cmp(a, b));
        assert_eq!(ids, ["2", "9", "10", "a", "b"]);
    }
}
