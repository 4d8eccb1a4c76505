//! Coverage tables: aligned text for reading, CSV for plotting.

use std::fmt::Write as _;
use std::io::Read;

use serde::{Deserialize, Serialize};

use super::{CellKey, CellResult, Scenario};
use crate::dgp::{ChangeSpec, HeterogeneitySpec, Position};
use crate::error::{Error, Result};
use crate::inference::TestKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    /// Panels per change proportion, rows Start/Middle/End.
    ByPosition,
    /// Panels per heterogeneity proportion, rows 1/2/4 neighborhoods.
    ByNeighborhoods,
    /// One row per cell.
    Flat,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub text: String,
    pub csv: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CsvRow {
    test: TestKind,
    component: TestKind,
    scenario: String,
    change_proportion: Option<f64>,
    position: Option<Position>,
    rho_prime: Option<f64>,
    hetero_proportion: Option<f64>,
    neighborhoods: Option<usize>,
    delta_prime: Option<f64>,
    n_units: usize,
    n_times: usize,
    r2: Option<f64>,
    coverage_pct: f64,
    rejection_rate: f64,
    replications: usize,
    failed: usize,
}

impl From<&CellResult> for CsvRow {
    fn from(r: &CellResult) -> Self {
        let change = r.key.scenario.change();
        let hetero = r.key.scenario.heterogeneity();
        let kind = match r.key.scenario {
            Scenario::Null => "null",
            Scenario::Change(_) => "change",
            Scenario::Heterogeneity(_) => "heterogeneity",
            Scenario::Both { .. } => "both",
        };
        Self {
            test: r.test,
            component: r.component,
            scenario: kind.into(),
            change_proportion: change.map(|c| c.proportion),
            position: change.map(|c| c.position),
            rho_prime: change.map(|c| c.rho_prime),
            hetero_proportion: hetero.map(|h| h.proportion),
            neighborhoods: hetero.map(|h| h.neighborhoods),
            delta_prime: hetero.map(|h| h.delta_prime),
            n_units: r.key.n_units,
            n_times: r.key.n_times,
            r2: r.key.r2,
            coverage_pct: r.coverage_pct,
            rejection_rate: r.rejection_rate,
            replications: r.replications,
            failed: r.failed,
        }
    }
}

impl CsvRow {
    fn into_result(self, line: usize) -> Result<CellResult> {
        let missing = |what: &str| Error::Parse(format!("row {line}: {what} is required for scenario {}", self.scenario));
        let change = || -> Result<ChangeSpec> {
            Ok(ChangeSpec {
                rho_prime: self.rho_prime.ok_or_else(|| missing("rho_prime"))?,
                proportion: self.change_proportion.ok_or_else(|| missing("change_proportion"))?,
                position: self.position.ok_or_else(|| missing("position"))?,
            })
        };
        let hetero = || -> Result<HeterogeneitySpec> {
            Ok(HeterogeneitySpec {
                delta_prime: self.delta_prime.ok_or_else(|| missing("delta_prime"))?,
                proportion: self.hetero_proportion.ok_or_else(|| missing("hetero_proportion"))?,
                neighborhoods: self.neighborhoods.ok_or_else(|| missing("neighborhoods"))?,
            })
        };
        let scenario = match self.scenario.as_str() {
            "null" => Scenario::Null,
            "change" => Scenario::Change(change()?),
            "heterogeneity" => Scenario::Heterogeneity(hetero()?),
            "both" => Scenario::Both {
                change: change()?,
                heterogeneity: hetero()?,
            },
            other => return Err(Error::Parse(format!("row {line}: unknown scenario {other:?}"))),
        };
        Ok(CellResult {
            test: self.test,
            component: self.component,
            key: CellKey {
                scenario,
                n_units: self.n_units,
                n_times: self.n_times,
                r2: self.r2,
            },
            coverage_pct: self.coverage_pct,
            rejection_rate: self.rejection_rate,
            replications: self.replications,
            failed: self.failed,
            records: Vec::new(),
        })
    }
}

/// Reads a CSV written by [`emit_table`]; per-replication records are not
/// part of the CSV and come back empty.
pub fn read_results_csv(reader: impl Read) -> Result<Vec<CellResult>> {
    let mut csv = csv::Reader::from_reader(reader);
    csv.deserialize::<CsvRow>()
        .enumerate()
        .map(|(k, row)| row.map_err(Error::from).and_then(|r| r.into_result(k + 1)))
        .collect()
}

fn write_csv(results: &[CellResult]) -> Result<String> {
    let mut csv = csv::Writer::from_writer(Vec::new());
    for r in results {
        csv.serialize(CsvRow::from(r))?;
    }
    let bytes = csv.into_inner().map_err(|e| Error::Io(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Io(e.to_string()))
}

/// Row position inside a layout: (component, panel proportion, row order, label).
type RowKey = (TestKind, Option<u64>, usize, String);
/// Column: (R² bits, N, T).
type ColKey = (Option<u64>, usize, usize);

fn component_name(kind: TestKind) -> &'static str {
    match kind {
        TestKind::Structural => "structural",
        TestKind::Spatial => "spatial",
        TestKind::Joint => "joint",
    }
}

fn row_key(result: &CellResult, layout: Layout) -> Result<RowKey> {
    let wrong = || {
        Err(Error::InvalidSettings(format!(
            "scenario {:?} does not fit layout {layout:?}",
            result.key.scenario.label()
        )))
    };
    let c = result.component;
    match (&result.key.scenario, layout) {
        (Scenario::Null, Layout::ByPosition) => Ok((c, None, 0, "No structural change".into())),
        (Scenario::Null, Layout::ByNeighborhoods) => Ok((c, None, 0, "No spatial heterogeneity".into())),
        (Scenario::Change(s), Layout::ByPosition) => {
            let order = match s.position {
                Position::Start => 1,
                Position::Middle => 2,
                Position::End => 3,
            };
            Ok((c, Some(s.proportion.to_bits()), order, s.position.label().into()))
        }
        (Scenario::Heterogeneity(h), Layout::ByNeighborhoods) => Ok((
            c,
            Some(h.proportion.to_bits()),
            h.neighborhoods,
            format!("{} neighborhood{}", h.neighborhoods, if h.neighborhoods == 1 { "" } else { "s" }),
        )),
        _ => wrong(),
    }
}

fn col_label(col: &ColKey, multiple_r2: bool) -> String {
    let (r2, n, t) = col;
    match (multiple_r2, r2) {
        (true, Some(bits)) => format!("N={n} T={t} R2={}", f64::from_bits(*bits)),
        _ => format!("N={n} T={t}"),
    }
}

fn sorted_unique<T: PartialEq + Clone>(mut items: Vec<T>, cmp: impl Fn(&T, &T) -> std::cmp::Ordering) -> Vec<T> {
    items.sort_by(&cmp);
    items.dedup();
    items
}

fn render_flat(results: &[CellResult]) -> String {
    let rows: Vec<[String; 5]> = results
        .iter()
        .map(|r| {
            [
                component_name(r.component).to_string(),
                r.key.label(),
                format!("{:.1}", r.coverage_pct),
                format!("{:.3}", r.rejection_rate),
                r.replications.to_string(),
            ]
        })
        .collect();
    let header = ["component", "cell", "coverage %", "reject rate", "reps"].map(String::from);
    let widths: Vec<usize> = (0..5)
        .map(|j| rows.iter().chain(std::iter::once(&header)).map(|r| r[j].len()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for row in std::iter::once(&header).chain(&rows) {
        let line: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(j, v)| if j == 1 || j == 0 { format!("{v:<w$}", w = widths[j]) } else { format!("{v:>w$}", w = widths[j]) })
            .collect();
        let _ = writeln!(out, "{}", line.join("  ").trim_end());
    }
    out
}

/// Renders coverage percentages in the given layout and the matching CSV
/// (one row per cell). Fails with `IncompleteGrid` when the results do not
/// fill every row × column slot of the layout.
pub fn emit_table(results: &[CellResult], layout: Layout) -> Result<Table> {
    let csv = write_csv(results)?;
    if layout == Layout::Flat {
        return Ok(Table {
            text: render_flat(results),
            csv,
        });
    }
    let keyed: Vec<(RowKey, ColKey, &CellResult)> = results
        .iter()
        .map(|r| {
            let col = (r.key.r2.map(f64::to_bits), r.key.n_units, r.key.n_times);
            row_key(r, layout).map(|row| (row, col, r))
        })
        .collect::<Result<_>>()?;
    let order_row = |a: &RowKey, b: &RowKey| {
        let panel = |p: &Option<u64>| p.map(f64::from_bits);
        a.0.cmp(&b.0)
            .then(panel(&a.1).partial_cmp(&panel(&b.1)).unwrap_or(std::cmp::Ordering::Equal))
            .then(a.2.cmp(&b.2))
    };
    let order_col = |a: &ColKey, b: &ColKey| {
        let r2 = |c: &ColKey| c.0.map(f64::from_bits);
        r2(a).partial_cmp(&r2(b)).unwrap_or(std::cmp::Ordering::Equal).then((a.1, a.2).cmp(&(b.1, b.2)))
    };
    let rows = sorted_unique(keyed.iter().map(|k| k.0.clone()).collect(), order_row);
    let cols = sorted_unique(keyed.iter().map(|k| k.1).collect(), order_col);
    let multiple_r2 = sorted_unique(cols.iter().map(|c| c.0).collect(), |a, b| a.cmp(b)).len() > 1;
    let multiple_components = sorted_unique(rows.iter().map(|r| r.0).collect(), |a, b| a.cmp(b)).len() > 1;

    let mut grid: Vec<Vec<String>> = Vec::with_capacity(rows.len());
    for row in &rows {
        let mut cells = Vec::with_capacity(cols.len());
        for col in &cols {
            let found = keyed.iter().find(|(r, c, _)| r == row && c == col).ok_or_else(|| {
                Error::IncompleteGrid(format!("{} / {}", row.3, col_label(col, multiple_r2)))
            })?;
            cells.push(format!("{:.1}", found.2.coverage_pct));
        }
        grid.push(cells);
    }

    let headers: Vec<String> = cols.iter().map(|c| col_label(c, multiple_r2)).collect();
    let label_width = rows.iter().map(|r| r.3.len() + 2).chain(std::iter::once(24)).max().unwrap_or(24);
    let widths: Vec<usize> = headers
        .iter()
        .enumerate()
        .map(|(j, h)| grid.iter().map(|r| r[j].len()).chain(std::iter::once(h.len())).max().unwrap_or(0))
        .collect();
    let mut text = String::new();
    let header_line: Vec<String> = headers.iter().zip(&widths).map(|(h, w)| format!("{h:>w$}")).collect();
    let _ = writeln!(text, "{:label_width$}  {}", "", header_line.join("  "));
    let mut panel_letter = b'a';
    let mut last: Option<(TestKind, Option<u64>)> = None;
    for (row, cells) in rows.iter().zip(&grid) {
        if last.map(|l| l.0) != Some(row.0) && multiple_components {
            let _ = writeln!(text, "[{}]", component_name(row.0));
            panel_letter = b'a';
        }
        if let Some(bits) = row.1 {
            if last != Some((row.0, row.1)) {
                let _ = writeln!(text, "({}) {}%", panel_letter as char, super::pct(f64::from_bits(bits)));
                panel_letter += 1;
            }
        }
        last = Some((row.0, row.1));
        let indent = if row.1.is_some() { "  " } else { "" };
        let label = format!("{indent}{}", row.3);
        let values: Vec<String> = cells.iter().zip(&widths).map(|(v, w)| format!("{v:>w$}")).collect();
        let _ = writeln!(text, "{label:label_width$}  {}", values.join("  "));
    }
    Ok(Table { text, csv })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn result(scenario: Scenario, n_units: usize, n_times: usize, coverage: f64) -> CellResult {
        CellResult {
            test: TestKind::Structural,
            component: TestKind::Structural,
            key: CellKey {
                scenario,
                n_units,
                n_times,
                r2: Some(0.95),
            },
            coverage_pct: coverage,
            rejection_rate: 0.25,
            replications: 4,
            failed: 0,
            records: Vec::new(),
        }
    }

    fn change(proportion: f64, position: Position) -> Scenario {
        Scenario::Change(ChangeSpec {
            rho_prime: 0.75,
            proportion,
            position,
        })
    }

    #[test]
    fn single_cell_table() {
        let t = emit_table(&[result(Scenario::Null, 20, 40, 92.25)], Layout::ByPosition).unwrap();
        let lines: Vec<&str> = t.text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert!(lines[0].contains("N=20 T=40"));
        assert!(lines[1].starts_with("No structural change") && lines[1].ends_with("92.2"));
        assert_eq!(t.csv.lines().count(), 2);
    }

    #[test]
    fn position_panels_match_table_shape() {
        let mut results = vec![result(Scenario::Null, 20, 40, 92.0), result(Scenario::Null, 40, 40, 93.0)];
        for p in [0.05, 0.10, 0.15] {
            for pos in [Position::End, Position::Start, Position::Middle] {
                for n in [40, 20] {
                    results.push(result(change(p, pos), n, 40, 90.0));
                }
            }
        }
        let t = emit_table(&results, Layout::ByPosition).unwrap();
        let labels: Vec<&str> = t.text.lines().skip(1).map(|l| l.trim_start().split("  ").next().unwrap()).collect();
        assert_eq!(
            labels,
            [
                "No structural change", "(a) 5%", "Start", "Middle", "End", "(b) 10%", "Start", "Middle", "End",
                "(c) 15%", "Start", "Middle", "End"
            ]
        );
        assert!(t.text.lines().next().unwrap().find("N=20").unwrap() < t.text.lines().next().unwrap().find("N=40").unwrap());
    }

    #[test]
    fn missing_cell_is_reported() {
        let results = vec![
            result(Scenario::Null, 20, 40, 92.0),
            result(Scenario::Null, 40, 40, 92.0),
            result(change(0.05, Position::Start), 20, 40, 90.0),
        ];
        assert!(matches!(emit_table(&results, Layout::ByPosition), Err(Error::IncompleteGrid(_))));
        assert!(emit_table(&results, Layout::Flat).is_ok());
        assert!(matches!(emit_table(&results, Layout::ByNeighborhoods), Err(Error::InvalidSettings(_))));
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let results = vec![
            result(Scenario::Null, 20, 40, 92.123_456_789_012_34),
            result(change(0.15, Position::Middle), 20, 40, 1.0 / 3.0),
            result(
                Scenario::Both {
                    change: ChangeSpec {
                        rho_prime: 0.7,
                        proportion: 0.1,
                        position: Position::End,
                    },
                    heterogeneity: HeterogeneitySpec {
                        delta_prime: 1.25,
                        proportion: 0.05,
                        neighborhoods: 2,
                    },
                },
                60,
                75,
                88.8,
            ),
        ];
        let t = emit_table(&results, Layout::Flat).unwrap();
        let back = read_results_csv(t.csv.as_bytes()).unwrap();
        assert_eq!(back, results);
    }
}
