//! Long-format panel CSV (`unit,time,y,x1..xp,w[,neighborhood]`) and JSON
//! helpers.

use std::cmp::Ordering;
use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::{PanelDataset, PanelParts};

/// Serializes non-finite floats as the strings `"inf"`, `"-inf"`, `"nan"`,
/// which JSON numbers cannot represent.
pub mod float_or_inf {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(value: &f64, serializer: S) -> Result<S::Ok, S::Error> {
        if value.is_finite() {
            serializer.serialize_f64(*value)
        } else if value.is_nan() {
            serializer.serialize_str("nan")
        } else if *value > 0.0 {
            serializer.serialize_str("inf")
        } else {
            serializer.serialize_str("-inf")
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Number(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(deserializer: D) -> Result<f64, D::Error> {
        match Repr::deserialize(deserializer)? {
            Repr::Number(v) => Ok(v),
            Repr::Text(s) => s
                .trim()
                .parse::<f64>()
                .map_err(|_| serde::de::Error::custom(format!("expected a number or \"inf\", got {s:?}"))),
        }
    }
}

/// Which CSV columns hold which panel fields. Empty `x` / `w` lists mean
/// "detect from the header": `x1, x2, ...` and `w` or `w1, w2, ...`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ColumnMap {
    pub unit: String,
    pub time: String,
    pub y: String,
    pub x: Vec<String>,
    pub w: Vec<String>,
    /// Column of 1-based neighborhood labels; `None` uses `neighborhood`
    /// when present and otherwise puts every unit in neighborhood 1.
    pub neighborhood: Option<String>,
}

impl Default for ColumnMap {
    fn default() -> Self {
        Self {
            unit: "unit".into(),
            time: "time".into(),
            y: "y".into(),
            x: Vec::new(),
            w: Vec::new(),
            neighborhood: None,
        }
    }
}

/// Columns named `prefix` followed by digits, ordered by that number.
fn numbered(headers: &[String], prefix: &str) -> Vec<String> {
    let mut found: Vec<(u64, String)> = headers
        .iter()
        .filter_map(|h| {
            let rest = h.strip_prefix(prefix)?;
            if !rest.bytes().all(|b| b.is_ascii_digit()) {
                return None;
            }
            Some((rest.parse().ok()?, h.clone()))
        })
        .collect();
    found.sort();
    found.into_iter().map(|(_, h)| h).collect()
}

/// Orders labels numerically when both parse as numbers, else lexically.
fn label_order(a: &str, b: &str) -> Ordering {
    match (a.trim().parse::<f64>(), b.trim().parse::<f64>()) {
        (Ok(x), Ok(y)) => x.total_cmp(&y).then_with(|| a.cmp(b)),
        _ => a.cmp(b),
    }
}

struct Resolved {
    unit: usize,
    time: usize,
    y: usize,
    x: Vec<usize>,
    w: Vec<usize>,
    neighborhood: Option<usize>,
}

impl ColumnMap {
    fn resolve(&self, headers: &[String]) -> Result<Resolved> {
        let find = |name: &str| {
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::MissingColumn(name.to_string()))
        };
        let x_names = if self.x.is_empty() { numbered(headers, "x") } else { self.x.clone() };
        if x_names.is_empty() {
            return Err(Error::MissingColumn("x1".into()));
        }
        let w_names = if !self.w.is_empty() {
            self.w.clone()
        } else if headers.iter().any(|h| h == "w") {
            vec!["w".to_string()]
        } else {
            numbered(headers, "w")
        };
        if w_names.is_empty() {
            return Err(Error::MissingColumn("w".into()));
        }
        let neighborhood = match &self.neighborhood {
            Some(name) => Some(find(name)?),
            None => headers.iter().position(|h| h == "neighborhood"),
        };
        Ok(Resolved {
            unit: find(&self.unit)?,
            time: find(&self.time)?,
            y: find(&self.y)?,
            x: x_names.iter().map(|n| find(n)).collect::<Result<_>>()?,
            w: w_names.iter().map(|n| find(n)).collect::<Result<_>>()?,
            neighborhood,
        })
    }
}

pub fn load_panel_csv(path: impl AsRef<Path>, columns: &ColumnMap) -> Result<PanelDataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    read_panel_csv(file, columns)
}

/// Pivots a long-format CSV into a balanced panel. Row numbers in errors are
/// 1-based data rows (the header is row 0).
pub fn read_panel_csv(reader: impl Read, columns: &ColumnMap) -> Result<PanelDataset> {
    let mut csv = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers: Vec<String> = csv.headers()?.iter().map(str::to_string).collect();
    let cols = columns.resolve(&headers)?;

    struct Row {
        line: usize,
        unit: String,
        time: String,
        values: Vec<f64>,
        neighborhood: Option<u32>,
    }
    let value_cols: Vec<usize> = std::iter::once(cols.y).chain(cols.x.iter().copied()).chain(cols.w.iter().copied()).collect();
    let mut rows = Vec::new();
    for (k, record) in csv.records().enumerate() {
        let record = record?;
        let line = k + 1;
        let field = |c: usize| record.get(c).unwrap_or("");
        let number = |c: usize| {
            field(c).parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| Error::NonNumericField {
                row: line,
                column: headers[c].clone(),
                value: field(c).to_string(),
            })
        };
        let values = value_cols.iter().map(|&c| number(c)).collect::<Result<Vec<_>>>()?;
        let neighborhood = match cols.neighborhood {
            Some(c) => Some(
                field(c)
                    .parse::<u32>()
                    .ok()
                    .filter(|&v| v >= 1)
                    .ok_or_else(|| Error::NonNumericField {
                        row: line,
                        column: headers[c].clone(),
                        value: field(c).to_string(),
                    })?,
            ),
            None => None,
        };
        rows.push(Row {
            line,
            unit: field(cols.unit).to_string(),
            time: field(cols.time).to_string(),
            values,
            neighborhood,
        });
    }

    let sorted = |labels: BTreeSet<&str>| {
        let mut v: Vec<String> = labels.into_iter().map(str::to_string).collect();
        v.sort_by(|a, b| label_order(a, b));
        v
    };
    let unit_ids = sorted(rows.iter().map(|r| r.unit.as_str()).collect());
    let time_ids = sorted(rows.iter().map(|r| r.time.as_str()).collect());
    let unit_index: HashMap<&str, usize> = unit_ids.iter().enumerate().map(|(i, u)| (u.as_str(), i)).collect();
    let time_index: HashMap<&str, usize> = time_ids.iter().enumerate().map(|(t, s)| (s.as_str(), t)).collect();

    let (n, t_len, p, q) = (unit_ids.len(), time_ids.len(), cols.x.len(), cols.w.len());
    let mut cells: Vec<Option<&[f64]>> = vec![None; n * t_len];
    let mut neighborhood: Vec<Option<u32>> = vec![None; n];
    for row in &rows {
        let (i, t) = (unit_index[row.unit.as_str()], time_index[row.time.as_str()]);
        if cells[i * t_len + t].is_some() {
            return Err(Error::DuplicateCell {
                row: row.line,
                unit: row.unit.clone(),
                time: row.time.clone(),
            });
        }
        cells[i * t_len + t] = Some(&row.values);
        if let Some(label) = row.neighborhood {
            match neighborhood[i] {
                Some(prev) if prev != label => {
                    return Err(Error::InconsistentNeighborhood {
                        row: row.line,
                        unit: row.unit.clone(),
                    })
                }
                _ => neighborhood[i] = Some(label),
            }
        }
    }

    let mut parts = PanelParts {
        n_units: n,
        n_times: t_len,
        n_covariates: p,
        n_neighborhood_vars: q,
        y: Vec::with_capacity(n * t_len),
        x: Vec::with_capacity(n * t_len * p),
        w: Vec::with_capacity(n * t_len * q),
        neighborhood: neighborhood.into_iter().map(|l| l.unwrap_or(1)).collect(),
        unit_ids: unit_ids.clone(),
        time_ids: time_ids.clone(),
    };
    for (cell, values) in cells.iter().enumerate() {
        let values = values.ok_or_else(|| Error::UnbalancedPanel {
            unit: unit_ids[cell / t_len].clone(),
            time: time_ids[cell % t_len].clone(),
        })?;
        parts.y.push(values[0]);
        parts.x.extend_from_slice(&values[1..1 + p]);
        parts.w.extend_from_slice(&values[1 + p..]);
    }
    PanelDataset::new(parts)
}

/// Writes the panel in long format. Floats use Rust's shortest round-trip
/// formatting, so reading the file back reproduces every value exactly.
pub fn write_panel_csv(dataset: &PanelDataset, writer: impl Write) -> Result<()> {
    let mut csv = csv::Writer::from_writer(writer);
    let p = dataset.n_covariates();
    let q = dataset.n_neighborhood_vars();
    let mut header = vec!["unit".to_string(), "time".to_string(), "y".to_string()];
    header.extend((1..=p).map(|j| format!("x{j}")));
    if q == 1 {
        header.push("w".into());
    } else {
        header.extend((1..=q).map(|j| format!("w{j}")));
    }
    header.push("neighborhood".into());
    csv.write_record(&header)?;
    for i in 0..dataset.n_units() {
        for t in 0..dataset.n_times() {
            let mut record = vec![
                dataset.unit_ids()[i].clone(),
                dataset.time_ids()[t].clone(),
                dataset.y(i, t).to_string(),
            ];
            record.extend(dataset.x(i, t).iter().map(f64::to_string));
            record.extend(dataset.w(i, t).iter().map(f64::to_string));
            record.push(dataset.neighborhoods()[i].to_string());
            csv.write_record(&record)?;
        }
    }
    csv.flush()?;
    Ok(())
}

pub fn save_panel_csv(dataset: &PanelDataset, path: impl AsRef<Path>) -> Result<()> {
    let file = File::create(path.as_ref()).map_err(|e| Error::Io(format!("{}: {e}", path.as_ref().display())))?;
    write_panel_csv(dataset, BufWriter::new(file))
}

pub fn write_json<T: Serialize>(value: &T, path: impl AsRef<Path>) -> Result<()> {
    let file = File::create(path.as_ref()).map_err(|e| Error::Io(format!("{}: {e}", path.as_ref().display())))?;
    let mut writer = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut writer, value)?;
    writer.write_all(b"\n")?;
    writer.flush()?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let file = File::open(path.as_ref()).map_err(|e| Error::Io(format!("{}: {e}", path.as_ref().display())))?;
    Ok(serde_json::from_reader(std::io::BufReader::new(file))?)
}
