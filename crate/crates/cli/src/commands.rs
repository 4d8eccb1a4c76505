use std::fs;
use std::path::{Path, PathBuf};

use panelshift::dgp::{ChangeSpec, HeterogeneitySpec};
use panelshift::experiment::{emit_table, run_grid, ExperimentGrid, GridReport};
use panelshift::io::{load_panel_csv, read_json, save_panel_csv, write_json, ColumnMap};
use panelshift::{
    forward_search_panel, generate, joint_test, spatial_heterogeneity_test, structural_change_test, BootstrapSettings,
    DgpConfig, Error, ForwardSearchSettings, JointSettings, PanelDataset, Result, SieveSettings, SpatialSettings,
    StructuralSettings, TestOutcome,
};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::args::{
    BootstrapArgs, Command, DataArgs, ExperimentArgs, JointArgs, SearchArgs, SieveArgs, SimulateArgs, SpatialArgs,
    StructuralArgs,
};

/// Everything needed to rerun a test: written with `--report`, read back with `--from-report`.
#[derive(Debug, Serialize, Deserialize)]
pub struct Report<S> {
    pub command: String,
    pub version: String,
    pub data: PathBuf,
    pub columns: ColumnMap,
    pub seed: u64,
    pub settings: S,
    pub n_units: usize,
    pub n_times: usize,
    pub outcomes: Vec<TestOutcome>,
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Simulate(args) => simulate(args),
        Command::TestStructural(args) => test_structural(args),
        Command::TestSpatial(args) => test_spatial(args),
        Command::TestJoint(args) => test_joint(args),
        Command::Experiment(args) => experiment(args),
    }
}

fn simulate(args: SimulateArgs) -> Result<()> {
    let mut config = match &args.config {
        Some(path) => read_config(path)?,
        None => DgpConfig::default(),
    };
    if let Some(v) = args.n_units {
        config.n_units = v;
    }
    if let Some(v) = args.n_times {
        config.n_times = v;
    }
    if let Some(v) = args.rho {
        config.rho = v;
    }
    if let Some(v) = args.seed {
        config.seed = v;
    }
    if args.r2.is_some() {
        config.r2_target = args.r2;
    }
    if let Some(proportion) = args.change_proportion {
        config.change = Some(ChangeSpec { rho_prime: args.rho_prime, proportion, position: args.change_position.into() });
    }
    if let Some(proportion) = args.hetero_proportion {
        config.heterogeneity = Some(HeterogeneitySpec {
            delta_prime: args.delta_prime,
            proportion,
            neighborhoods: args.neighborhoods,
        });
    }
    let (dataset, truth) = generate(&config)?;
    let truth_path = args.truth.unwrap_or_else(|| args.out.with_extension("truth.json"));
    save_panel_csv(&dataset, &args.out)?;
    write_json(&truth, &truth_path)?;
    println!(
        "wrote {} ({} units x {} times) and {}",
        args.out.display(),
        dataset.n_units(),
        dataset.n_times(),
        truth_path.display()
    );
    Ok(())
}

fn read_config(path: &Path) -> Result<DgpConfig> {
    if path.extension().is_some_and(|e| e == "json") {
        return read_json(path);
    }
    let text = fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

/// Settings, seed and columns from `--from-report`, or defaults.
fn base<S: DeserializeOwned + Default>(data: &DataArgs, command: &str) -> Result<(S, u64, ColumnMap)> {
    let Some(path) = &data.from_report else {
        return Ok((S::default(), 0, ColumnMap::default()));
    };
    let report: Report<S> = read_json(path)?;
    if report.command != command {
        return Err(Error::InvalidSettings(format!(
            "{} holds a {} report, not {command}",
            path.display(),
            report.command
        )));
    }
    Ok((report.settings, report.seed, report.columns))
}

fn columns(data: &DataArgs, mut map: ColumnMap) -> ColumnMap {
    let explicit = data.from_report.is_none();
    if explicit || data.unit_col != "unit" {
        map.unit.clone_from(&data.unit_col);
    }
    if explicit || data.time_col != "time" {
        map.time.clone_from(&data.time_col);
    }
    if explicit || data.y_col != "y" {
        map.y.clone_from(&data.y_col);
    }
    if !data.x_cols.is_empty() {
        map.x.clone_from(&data.x_cols);
    }
    if !data.w_cols.is_empty() {
        map.w.clone_from(&data.w_cols);
    }
    if data.neighborhood_col.is_some() {
        map.neighborhood.clone_from(&data.neighborhood_col);
    }
    map
}

fn apply_bootstrap(args: &BootstrapArgs, settings: &mut BootstrapSettings) {
    if let Some(v) = args.resamples {
        settings.resamples = v;
    }
    if args.subsample.is_some() {
        settings.subsample = args.subsample;
    }
    if let Some(v) = args.alpha {
        settings.alpha = v;
    }
    if let Some(v) = args.statistic {
        settings.statistic = v.into();
    }
    if let Some(v) = args.basis {
        settings.basis = v.into();
    }
}

fn apply_sieve(args: &SieveArgs, settings: &mut SieveSettings) {
    if let Some(v) = args.replicates {
        settings.replicates = v;
    }
    if let Some(v) = args.regressors {
        settings.regressors = v.into();
    }
}

fn apply_search(args: &SearchArgs, settings: &mut ForwardSearchSettings) {
    if args.initial_size.is_some() {
        settings.initial_size = args.initial_size;
    }
    if let Some(v) = args.tau {
        settings.tau = v;
    }
}

struct Loaded {
    dataset: PanelDataset,
    columns: ColumnMap,
    seed: u64,
}

fn load<S: DeserializeOwned + Default>(data: &DataArgs, command: &str) -> Result<(Loaded, S)> {
    let (settings, seed, map) = base::<S>(data, command)?;
    let columns = columns(data, map);
    let dataset = load_panel_csv(&data.data, &columns)?;
    Ok((Loaded { dataset, columns, seed: data.seed.unwrap_or(seed) }, settings))
}

fn finish<S: Serialize>(command: &str, data: &DataArgs, loaded: Loaded, settings: S, outcomes: Vec<TestOutcome>) -> Result<()> {
    for outcome in &outcomes {
        println!("{}", summary_line(outcome));
    }
    if let Some(path) = &data.report {
        let report = Report {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            data: data.data.clone(),
            columns: loaded.columns,
            seed: loaded.seed,
            settings,
            n_units: loaded.dataset.n_units(),
            n_times: loaded.dataset.n_times(),
            outcomes,
        };
        write_json(&report, path)?;
        println!("report: {}", path.display());
    }
    Ok(())
}

fn summary_line(outcome: &TestOutcome) -> String {
    let kind = serde_json::to_value(outcome.test).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default();
    format!(
        "{kind}: {} (fraction outside {:.4}, coverage {:.2}%, alpha {}, interval [{:.6}, {:.6}], {} checked)",
        if outcome.reject { "reject" } else { "do not reject" },
        outcome.fraction_outside,
        outcome.coverage_pct,
        outcome.alpha,
        outcome.ci.lower,
        outcome.ci.upper,
        outcome.n_statistics_checked,
    )
}

fn test_structural(args: StructuralArgs) -> Result<()> {
    const NAME: &str = "test-structural";
    let (loaded, mut settings) = load::<StructuralSettings>(&args.data, NAME)?;
    apply_sieve(&args.sieve, &mut settings.sieve);
    apply_bootstrap(&args.bootstrap, &mut settings.bootstrap);
    let outcome = structural_change_test(&loaded.dataset, &settings, loaded.seed)?;
    finish(NAME, &args.data, loaded, settings, vec![outcome])
}

fn test_spatial(args: SpatialArgs) -> Result<()> {
    const NAME: &str = "test-spatial";
    let (loaded, mut settings) = load::<SpatialSettings>(&args.data, NAME)?;
    apply_search(&args.search, &mut settings.search);
    apply_bootstrap(&args.bootstrap, &mut settings.bootstrap);
    let outcome = spatial_heterogeneity_test(&loaded.dataset, &settings, loaded.seed)?;
    if let Some(path) = &args.trace_out {
        let traces = forward_search_panel(&loaded.dataset, &settings.search)?;
        write_json(&traces, path)?;
    }
    finish(NAME, &args.data, loaded, settings, vec![outcome])
}

fn test_joint(args: JointArgs) -> Result<()> {
    const NAME: &str = "test-joint";
    let (loaded, mut settings) = load::<JointSettings>(&args.data, NAME)?;
    apply_sieve(&args.sieve, &mut settings.structural.sieve);
    apply_search(&args.search, &mut settings.spatial.search);
    apply_bootstrap(&args.bootstrap, &mut settings.structural.bootstrap);
    apply_bootstrap(&args.bootstrap, &mut settings.spatial.bootstrap);
    if let Some(v) = args.max_iter {
        settings.max_iter = v;
    }
    if let Some(v) = args.converge_tol {
        settings.converge_tol = v;
    }
    let (structural, spatial) = joint_test(&loaded.dataset, &settings, loaded.seed)?;
    finish(NAME, &args.data, loaded, settings, vec![structural, spatial])
}

#[derive(Serialize)]
struct ExperimentSummary<'a> {
    grid: &'a ExperimentGrid,
    report: &'a GridReport,
}

fn experiment(args: ExperimentArgs) -> Result<()> {
    let mut grid = ExperimentGrid::load(&args.grid)?;
    if args.workers.is_some() {
        grid.workers = args.workers;
    }
    if let Some(profile) = args.profile {
        grid.profile = Some(profile.into());
    }
    if let Some(v) = args.replications {
        grid.replications = v;
    }
    fs::create_dir_all(&args.out_dir).map_err(|e| Error::Io(format!("{}: {e}", args.out_dir.display())))?;
    let checkpoints = args.out_dir.join("checkpoints");
    let report = run_grid(&grid, grid.test, (!args.no_checkpoint).then_some(checkpoints.as_path()))?;

    let has_change = grid.scenarios.iter().any(|s| s.change().is_some());
    let has_heterogeneity = grid.scenarios.iter().any(|s| s.heterogeneity().is_some());
    let layout = args.layout.resolve(has_change, has_heterogeneity);
    let table = emit_table(&report.cells, layout)?;
    let write = |name: &str, text: &str| {
        let path = args.out_dir.join(name);
        fs::write(&path, text).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
    };
    write("table.txt", &table.text)?;
    write("results.csv", &table.csv)?;
    write_json(&ExperimentSummary { grid: &grid, report: &report }, args.out_dir.join("summary.json"))?;

    print!("{}", table.text);
    if report.resumed > 0 {
        println!("resumed {} replications from checkpoints", report.resumed);
    }
    if !report.failures.is_empty() {
        eprintln!("{} replications failed; see summary.json", report.failures.len());
    }
    println!("results in {}", args.out_dir.display());
    Ok(())
}
