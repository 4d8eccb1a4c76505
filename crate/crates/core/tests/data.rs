use panelshift::dgp::{ChangeSpec, HeterogeneitySpec, Position};
use panelshift::io::{load_panel_csv, read_json, save_panel_csv, write_json, ColumnMap};
use panelshift::{calibrate_r2, generate, DgpConfig, Error, GroundTruth};

#[test]
fn change_blocks_and_flagged_units_follow_the_design() {
    let block = |position| {
        DgpConfig {
            n_times: 40,
            change: Some(ChangeSpec { rho_prime: 0.75, proportion: 0.10, position }),
            ..Default::default()
        }
        .change_times()
    };
    assert_eq!(block(Position::Start), (1..=4).collect::<Vec<_>>());
    assert_eq!(block(Position::Middle), (19..=22).collect::<Vec<_>>());
    assert_eq!(block(Position::End), (37..=40).collect::<Vec<_>>());

    let config = DgpConfig {
        n_units: 20,
        heterogeneity: Some(HeterogeneitySpec { delta_prime: 1.25, proportion: 0.15, neighborhoods: 4 }),
        ..Default::default()
    };
    let (_, truth) = generate(&config).unwrap();
    assert_eq!(truth.heterogeneous_units.len(), 3);
    let hoods: Vec<u32> = truth.heterogeneous_units.iter().map(|&u| truth.neighborhoods[u - 1]).collect();
    assert_eq!(hoods, vec![1, 2, 3]);
}

#[test]
fn calibration_shrinks_errors_toward_zero() {
    let factor = |r2| calibrate_r2(&DgpConfig { r2_target: Some(r2), ..Default::default() });
    assert!(factor(0.2) > factor(0.5) && factor(0.5) > factor(0.95));
    assert!(factor(1.0 - 1e-9) < 1e-3);
}

#[test]
fn simulate_write_load_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let config = DgpConfig {
        n_units: 12,
        n_times: 9,
        r2_target: Some(0.5),
        seed: 31,
        change: Some(ChangeSpec { rho_prime: 0.75, proportion: 0.15, position: Position::End }),
        ..Default::default()
    };
    let (d, truth) = generate(&config).unwrap();
    let csv = dir.path().join("panel.csv");
    let json = dir.path().join("truth.json");
    save_panel_csv(&d, &csv).unwrap();
    write_json(&truth, &json).unwrap();
    let back = load_panel_csv(&csv, &ColumnMap::default()).unwrap();
    for i in 0..d.n_units() {
        for t in 0..d.n_times() {
            assert!((back.y(i, t) - d.y(i, t)).abs() <= 1e-12);
        }
    }
    assert_eq!(back, d);
    let truth_back: GroundTruth = read_json(&json).unwrap();
    assert_eq!(truth_back, truth);
}

#[test]
fn loader_names_the_offending_cell() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("gap.csv");
    std::fs::write(&path, "unit,time,y,x1,x2,w\n1,1,1,1,1,0\n1,2,1,1,1,0\n1,3,1,1,1,0\n2,1,1,1,1,0\n2,2,1,1,1,0\n").unwrap();
    assert_eq!(
        load_panel_csv(&path, &ColumnMap::default()).unwrap_err(),
        Error::UnbalancedPanel { unit: "2".into(), time: "3".into() }
    );
    assert!(matches!(load_panel_csv(dir.path().join("absent.csv"), &ColumnMap::default()), Err(Error::Io(_))));
}
