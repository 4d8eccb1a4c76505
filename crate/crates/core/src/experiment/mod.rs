//! Monte Carlo grid runner: generates panels cell by cell, runs a test on
//! each replication, and aggregates coverage and rejection rates.

mod table;

pub use table::{emit_table, read_results_csv, Layout, Table};

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dgp::{generate, ChangeSpec, DgpConfig, HeterogeneitySpec, Position};
use crate::error::{Error, Result};
use crate::inference::{
    joint_test, spatial_heterogeneity_test, structural_change_test, JointSettings, SpatialSettings,
    StructuralSettings, TestKind, TestOutcome,
};
use crate::rng::{derive_seed, tag};

/// What is injected into the panels of a cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Scenario {
    Null,
    Change(ChangeSpec),
    Heterogeneity(HeterogeneitySpec),
    Both {
        change: ChangeSpec,
        heterogeneity: HeterogeneitySpec,
    },
}

impl Scenario {
    pub fn change(&self) -> Option<&ChangeSpec> {
        match self {
            Scenario::Change(c) | Scenario::Both { change: c, .. } => Some(c),
            _ => None,
        }
    }

    pub fn heterogeneity(&self) -> Option<&HeterogeneitySpec> {
        match self {
            Scenario::Heterogeneity(h) | Scenario::Both { heterogeneity: h, .. } => Some(h),
            _ => None,
        }
    }

    pub fn label(&self) -> String {
        let change = |c: &ChangeSpec| format!("change {} {}%", c.position.label(), pct(c.proportion));
        let hetero = |h: &HeterogeneitySpec| format!("heterogeneity {}nb {}%", h.neighborhoods, pct(h.proportion));
        match self {
            Scenario::Null => "null".into(),
            Scenario::Change(c) => change(c),
            Scenario::Heterogeneity(h) => hetero(h),
            Scenario::Both { change: c, heterogeneity: h } => format!("{} + {}", change(c), hetero(h)),
        }
    }
}

fn pct(proportion: f64) -> String {
    let v = proportion * 100.0;
    if (v - v.round()).abs() < 1e-9 {
        format!("{}", v.round())
    } else {
        format!("{v}")
    }
}

/// Coordinates of one grid cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellKey {
    pub scenario: Scenario,
    pub n_units: usize,
    pub n_times: usize,
    pub r2: Option<f64>,
}

impl CellKey {
    pub fn label(&self) -> String {
        let r2 = self.r2.map_or("none".to_string(), pct);
        format!("{} | N={} T={} R2={}", self.scenario.label(), self.n_units, self.n_times, r2)
    }

    fn file_stem(&self) -> String {
        self.label()
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '=' { c } else { '_' })
            .collect::<String>()
            .split('_')
            .filter(|s| !s.is_empty())
            .collect::<Vec<_>>()
            .join("_")
    }

    /// Seed of one replication. The scenario is left out so that every
    /// scenario at the same (N, T, R²) sees the same draws.
    pub fn replication_seed(&self, master: u64, replication: usize) -> u64 {
        derive_seed(
            master,
            &[
                tag::EXPERIMENT,
                self.n_units as u64,
                self.n_times as u64,
                self.r2.map_or(u64::MAX, f64::to_bits),
                replication as u64,
            ],
        )
    }
}

/// Named presets for the test settings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    /// m = 100 sieve replicates, B = 1000 resamples.
    Desk,
    /// m = 20, B = 200: minutes instead of hours for large grids.
    Quick,
}

impl Profile {
    fn sizes(self) -> (usize, usize) {
        match self {
            Profile::Desk => (100, 1000),
            Profile::Quick => (20, 200),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentGrid {
    pub test: TestKind,
    pub n_units: Vec<usize>,
    pub n_times: Vec<usize>,
    /// Target R² levels; an empty list means uncalibrated errors.
    #[serde(default)]
    pub r2: Vec<f64>,
    pub scenarios: Vec<Scenario>,
    #[serde(default = "default_replications")]
    pub replications: usize,
    #[serde(default)]
    pub seed: u64,
    /// Worker threads; `None` uses every core.
    #[serde(default)]
    pub workers: Option<usize>,
    /// Overrides the m and B of the test settings when set.
    #[serde(default)]
    pub profile: Option<Profile>,
    #[serde(default)]
    pub dgp: DgpConfig,
    #[serde(default)]
    pub structural: StructuralSettings,
    #[serde(default)]
    pub spatial: SpatialSettings,
    #[serde(default)]
    pub joint: JointSettings,
}

fn default_replications() -> usize {
    200
}

impl ExperimentGrid {
    pub fn from_toml(text: &str) -> Result<Self> {
        let grid: Self = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        grid.validate()?;
        Ok(grid)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidSettings(m.to_string()));
        if self.n_units.is_empty() || self.n_times.is_empty() || self.scenarios.is_empty() {
            return bad("grid axes n_units, n_times and scenarios must be nonempty");
        }
        if self.replications == 0 {
            return bad("replications must be at least 1");
        }
        if self.workers == Some(0) {
            return bad("workers must be at least 1");
        }
        for cell in self.cells() {
            self.dgp_config(&cell, 0).validate()?;
        }
        Ok(())
    }

    /// Cells in scenario-major, then N, T, R² order.
    pub fn cells(&self) -> Vec<CellKey> {
        let r2: Vec<Option<f64>> = if self.r2.is_empty() {
            vec![None]
        } else {
            self.r2.iter().copied().map(Some).collect()
        };
        let mut cells = Vec::new();
        for scenario in &self.scenarios {
            for &n_units in &self.n_units {
                for &n_times in &self.n_times {
                    for &r2 in &r2 {
                        cells.push(CellKey {
                            scenario: scenario.clone(),
                            n_units,
                            n_times,
                            r2,
                        });
                    }
                }
            }
        }
        cells
    }

    pub fn dgp_config(&self, cell: &CellKey, seed: u64) -> DgpConfig {
        DgpConfig {
            n_units: cell.n_units,
            n_times: cell.n_times,
            r2_target: cell.r2,
            change: cell.scenario.change().cloned(),
            heterogeneity: cell.scenario.heterogeneity().cloned(),
            seed,
            ..self.dgp.clone()
        }
    }

    /// Test settings with the profile applied.
    pub fn effective_settings(&self) -> (StructuralSettings, SpatialSettings, JointSettings) {
        let (mut structural, mut spatial, mut joint) = (self.structural.clone(), self.spatial.clone(), self.joint.clone());
        if let Some(profile) = self.profile {
            let (m, b) = profile.sizes();
            structural.sieve.replicates = m;
            structural.bootstrap.resamples = b;
            spatial.bootstrap.resamples = b;
            joint.structural.sieve.replicates = m;
            joint.structural.bootstrap.resamples = b;
            joint.spatial.bootstrap.resamples = b;
        }
        (structural, spatial, joint)
    }

    /// Stable hash of everything that changes replication results.
    fn fingerprint(&self) -> u64 {
        let settings = serde_json::to_string(&(self.test, &self.dgp, self.effective_settings())).unwrap_or_default();
        settings
            .bytes()
            .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
    }
}

/// Decision of one test component in one replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub component: TestKind,
    pub reject: bool,
    pub fraction_outside: f64,
    pub coverage_pct: f64,
}

impl From<&TestOutcome> for Decision {
    fn from(o: &TestOutcome) -> Self {
        Self {
            component: o.test,
            reject: o.reject,
            fraction_outside: o.fraction_outside,
            coverage_pct: o.coverage_pct,
        }
    }
}

/// One completed replication; also the checkpoint line format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub cell: CellKey,
    pub replication: usize,
    pub seed: u64,
    pub fingerprint: u64,
    pub decisions: Vec<Decision>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationSummary {
    pub replication: usize,
    pub seed: u64,
    pub reject: bool,
    pub coverage_pct: f64,
}

/// Aggregate over the successful replications of one cell. The joint test
/// yields one result per component (structural and spatial).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub test: TestKind,
    pub component: TestKind,
    pub key: CellKey,
    pub coverage_pct: f64,
    pub rejection_rate: f64,
    pub replications: usize,
    pub failed: usize,
    pub records: Vec<ReplicationSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedReplication {
    pub cell: String,
    pub replication: usize,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridReport {
    pub cells: Vec<CellResult>,
    pub failures: Vec<FailedReplication>,
    /// Replications read back from checkpoints instead of recomputed.
    pub resumed: usize,
}

fn run_replication(grid: &ExperimentGrid, kind: TestKind, cell: &CellKey, replication: usize) -> ReplicationRecord {
    let seed = cell.replication_seed(grid.seed, replication);
    let (structural, spatial, joint) = grid.effective_settings();
    let outcome = generate(&grid.dgp_config(cell, seed)).and_then(|(dataset, _)| match kind {
        TestKind::Structural => structural_change_test(&dataset, &structural, seed).map(|o| vec![Decision::from(&o)]),
        TestKind::Spatial => spatial_heterogeneity_test(&dataset, &spatial, seed).map(|o| vec![Decision::from(&o)]),
        TestKind::Joint => joint_test(&dataset, &joint, seed).map(|(s, p)| vec![Decision::from(&s), Decision::from(&p)]),
    });
    let (decisions, error) = match outcome {
        Ok(d) => (d, None),
        Err(e) => (Vec::new(), Some(e.to_string())),
    };
    ReplicationRecord {
        cell: cell.clone(),
        replication,
        seed,
        fingerprint: grid.fingerprint(),
        decisions,
        error,
    }
}

fn checkpoint_path(dir: &Path, kind: TestKind, cell: &CellKey) -> PathBuf {
    let kind = match kind {
        TestKind::Structural => "structural",
        TestKind::Spatial => "spatial",
        TestKind::Joint => "joint",
    };
    dir.join(format!("{kind}_{}.jsonl", cell.file_stem()))
}

/// Records of a checkpoint file that match this grid; a torn last line is ignored.
fn read_checkpoint(path: &Path, grid: &ExperimentGrid, cell: &CellKey) -> Result<BTreeMap<usize, ReplicationRecord>> {
    let mut done = BTreeMap::new();
    let Ok(file) = File::open(path) else {
        return Ok(done);
    };
    let fingerprint = grid.fingerprint();
    for line in BufReader::new(file).lines() {
        let line = line?;
        let Ok(record) = serde_json::from_str::<ReplicationRecord>(&line) else {
            continue;
        };
        if record.cell == *cell
            && record.replication < grid.replications
            && record.fingerprint == fingerprint
            && record.seed == cell.replication_seed(grid.seed, record.replication)
        {
            done.insert(record.replication, record);
        }
    }
    Ok(done)
}

fn aggregate(kind: TestKind, key: &CellKey, records: &[ReplicationRecord]) -> Vec<CellResult> {
    let components = match kind {
        TestKind::Joint => vec![TestKind::Structural, TestKind::Spatial],
        other => vec![other],
    };
    let failed = records.iter().filter(|r| r.error.is_some()).count();
    components
        .into_iter()
        .map(|component| {
            let summaries: Vec<ReplicationSummary> = records
                .iter()
                .filter_map(|r| {
                    let d = r.decisions.iter().find(|d| d.component == component)?;
                    Some(ReplicationSummary {
                        replication: r.replication,
                        seed: r.seed,
                        reject: d.reject,
                        coverage_pct: d.coverage_pct,
                    })
                })
                .collect();
            let n = summaries.len();
            let (coverage_pct, rejection_rate) = if n == 0 {
                (f64::NAN, f64::NAN)
            } else {
                (
                    summaries.iter().map(|s| s.coverage_pct).sum::<f64>() / n as f64,
                    summaries.iter().filter(|s| s.reject).count() as f64 / n as f64,
                )
            };
            CellResult {
                test: kind,
                component,
                key: key.clone(),
                coverage_pct,
                rejection_rate,
                replications: n,
                failed,
                records: summaries,
            }
        })
        .collect()
}

/// Runs every cell of the grid with `kind`. With a checkpoint directory,
/// each finished replication is appended to a per-cell JSONL file and
/// replications already present there are not recomputed.
pub fn run_grid(grid: &ExperimentGrid, kind: TestKind, checkpoint_dir: Option<&Path>) -> Result<GridReport> {
    grid.validate()?;
    let cells = grid.cells();
    let mut done: Vec<BTreeMap<usize, ReplicationRecord>> = Vec::with_capacity(cells.len());
    let mut writers = Vec::new();
    if let Some(dir) = checkpoint_dir {
        fs::create_dir_all(dir)?;
        for cell in &cells {
            let path = checkpoint_path(dir, kind, cell);
            done.push(read_checkpoint(&path, grid, cell)?);
            writers.push(Mutex::new(OpenOptions::new().create(true).append(true).open(&path)?));
        }
    } else {
        done.resize_with(cells.len(), BTreeMap::new);
    }
    let resumed = done.iter().map(BTreeMap::len).sum();

    let pending: Vec<(usize, usize)> = cells
        .iter()
        .enumerate()
        .flat_map(|(c, _)| (0..grid.replications).map(move |r| (c, r)))
        .filter(|&(c, r)| !done[c].contains_key(&r))
        .collect();

    let work = || -> Result<Vec<(usize, ReplicationRecord)>> {
        pending
            .par_iter()
            .map(|&(c, r)| {
                let record = run_replication(grid, kind, &cells[c], r);
                if let Some(writer) = writers.get(c) {
                    let mut line = serde_json::to_string(&record)?;
                    line.push('\n');
                    let mut file = writer.lock().expect("checkpoint writer poisoned");
                    file.write_all(line.as_bytes())?;
                    file.flush()?;
                }
                Ok((c, record))
            })
            .collect()
    };
    let fresh = match grid.workers {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::InvalidSettings(e.to_string()))?
            .install(work)?,
        None => work()?,
    };
    for (c, record) in fresh {
        done[c].insert(record.replication, record);
    }

    let mut results = Vec::new();
    let mut failures = Vec::new();
    for (cell, records) in cells.iter().zip(done) {
        let records: Vec<ReplicationRecord> = records.into_values().collect();
        failures.extend(records.iter().filter_map(|r| {
            Some(FailedReplication {
                cell: cell.label(),
                replication: r.replication,
                error: r.error.clone()?,
            })
        }));
        results.extend(aggregate(kind, cell, &records));
    }
    Ok(GridReport {
        cells: results,
        failures,
        resumed,
    })
}

/// Scenario list of the structural-change tables: the null row, then every
/// proportion at start, middle and end.
pub fn change_scenarios(proportions: &[f64]) -> Vec<Scenario> {
    let mut out = vec![Scenario::Null];
    for &proportion in proportions {
        for position in [Position::Start, Position::Middle, Position::End] {
            out.push(Scenario::Change(ChangeSpec {
                rho_prime: 0.75,
                proportion,
                position,
            }));
        }
    }
    out
}

/// Scenario list of the spatial-heterogeneity tables: the null row, then
/// every proportion over 1, 2 and 4 neighborhoods.
pub fn heterogeneity_scenarios(proportions: &[f64]) -> Vec<Scenario> {
    let mut out = vec![Scenario::Null];
    for &proportion in proportions {
        for neighborhoods in [1, 2, 4] {
            out.push(Scenario::Heterogeneity(HeterogeneitySpec {
                delta_prime: 1.25,
                proportion,
                neighborhoods,
            }));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_grid(test: TestKind) -> ExperimentGrid {
        ExperimentGrid {
            test,
            n_units: vec![16],
            n_times: vec![12],
            r2: vec![0.95],
            scenarios: vec![
                Scenario::Null,
                Scenario::Change(ChangeSpec {
                    rho_prime: 0.75,
                    proportion: 0.15,
                    position: Position::Start,
                }),
            ],
            replications: 3,
            seed: 17,
            workers: Some(2),
            profile: None,
            dgp: DgpConfig::default(),
            structural: StructuralSettings {
                sieve: crate::sieve::SieveSettings {
                    replicates: 5,
                    ..Default::default()
                },
                bootstrap: crate::bootstrap::BootstrapSettings {
                    resamples: 100,
                    ..Default::default()
                },
            },
            spatial: SpatialSettings {
                bootstrap: crate::bootstrap::BootstrapSettings {
                    resamples: 100,
                    ..Default::default()
                },
                ..Default::default()
            },
            joint: JointSettings::default(),
        }
    }

    #[test]
    fn single_replication_cell_equals_its_run() {
        let mut grid = tiny_grid(TestKind::Structural);
        grid.scenarios.truncate(1);
        grid.replications = 1;
        let report = run_grid(&grid, TestKind::Structural, None).unwrap();
        assert_eq!(report.cells.len(), 1);
        let cell = &report.cells[0];
        let seed = cell.key.replication_seed(grid.seed, 0);
        let (d, _) = generate(&grid.dgp_config(&cell.key, seed)).unwrap();
        let outcome = structural_change_test(&d, &grid.structural, seed).unwrap();
        assert_eq!(cell.coverage_pct, 100.0 * (1.0 - outcome.fraction_outside));
        assert_eq!(cell.rejection_rate, if outcome.reject { 1.0 } else { 0.0 });
    }

    #[test]
    fn rejection_rate_matches_records() {
        let grid = tiny_grid(TestKind::Structural);
        let report = run_grid(&grid, TestKind::Structural, None).unwrap();
        assert_eq!(report.cells.len(), 2);
        for cell in &report.cells {
            let rejects = cell.records.iter().filter(|r| r.reject).count();
            assert_eq!(cell.rejection_rate, rejects as f64 / cell.replications as f64);
            assert!((0.0..=100.0).contains(&cell.coverage_pct));
        }
    }

    #[test]
    fn scenarios_share_replication_seeds() {
        let grid = tiny_grid(TestKind::Structural);
        let cells = grid.cells();
        assert_eq!(cells[0].replication_seed(1, 4), cells[1].replication_seed(1, 4));
        assert_ne!(cells[0].replication_seed(1, 4), cells[0].replication_seed(1, 5));
    }

    #[test]
    fn resume_reproduces_full_run() {
        let grid = tiny_grid(TestKind::Spatial);
        let full = run_grid(&grid, TestKind::Spatial, None).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let mut partial = grid.clone();
        partial.replications = 2;
        run_grid(&partial, TestKind::Spatial, Some(dir.path())).unwrap();
        // Simulate a crash mid-write.
        let any = fs::read_dir(dir.path()).unwrap().next().unwrap().unwrap().path();
        OpenOptions::new().append(true).open(&any).unwrap().write_all(b"{\"cell\":").unwrap();
        let resumed = run_grid(&grid, TestKind::Spatial, Some(dir.path())).unwrap();
        assert_eq!(resumed.resumed, 4);
        assert_eq!(resumed.cells, full.cells);
    }

    #[test]
    fn worker_count_does_not_change_results() {
        let mut grid = tiny_grid(TestKind::Joint);
        grid.joint.structural = grid.structural.clone();
        grid.joint.spatial = grid.spatial.clone();
        grid.joint.max_iter = 2;
        grid.replications = 2;
        grid.workers = Some(1);
        let one = run_grid(&grid, TestKind::Joint, None).unwrap();
        grid.workers = Some(4);
        let many = run_grid(&grid, TestKind::Joint, None).unwrap();
        assert_eq!(one, many);
        assert_eq!(one.cells.len(), 4);
    }

    #[test]
    fn grid_parses_from_toml() {
        let text = r#"
            test = "structural"
            n_units = [20, 40]
            n_times = [40]
            r2 = [0.95]
            replications = 10
            seed = 3
            profile = "quick"

            [[scenarios]]
            kind = "null"

            [[scenarios]]
            kind = "change"
            proportion = 0.15
            position = "middle"

            [[scenarios]]
            kind = "heterogeneity"
            proportion = 0.1
            neighborhoods = 2

            [spatial.search]
            tau = inf
        "#;
        let grid = ExperimentGrid::from_toml(text).unwrap();
        assert_eq!(grid.cells().len(), 6);
        assert_eq!(grid.effective_settings().0.sieve.replicates, 20);
        assert!(grid.spatial.search.tau.is_infinite());
        let change = grid.scenarios[1].change().unwrap();
        assert_eq!((change.rho_prime, change.position), (0.75, Position::Middle));
    }

    #[test]
    fn invalid_grids_rejected() {
        let mut grid = tiny_grid(TestKind::Structural);
        grid.replications = 0;
        assert!(grid.validate().is_err());
        let mut grid = tiny_grid(TestKind::Structural);
        grid.n_units.clear();
        assert!(grid.validate().is_err());
        assert!(ExperimentGrid::from_toml("test = \"structural\"").is_err());
    }

    #[test]
    fn scenario_builders() {
        assert_eq!(change_scenarios(&[0.05, 0.1]).len(), 7);
        assert_eq!(heterogeneity_scenarios(&[0.05]).len(), 4);
    }
}
