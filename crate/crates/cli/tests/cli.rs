use std::f64::consts::{FRAC_PI_2, PI};
use std::fs;
use std::path::Path;
use std::process::Command;

use qcorr_cli::config::{parse_config, ChiKind};
use qcorr_cli::output::{csv_text, Row, CSV_HEADER};
use qcorr_cli::presets::preset_runs;
use qcorr_cli::sweep::run_sweep;
use qcorr_cli::{CliError, Mode};
use qcorr_core::TauConnect;

fn binary() -> Command {
    Command::new(env!("CARGO_BIN_EXE_qcorr-pump"))
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<f64>>) {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(String::from).collect();
    let rows = lines
        .map(|l| l.split(',').map(|v| v.parse::<f64>().unwrap()).collect())
        .collect();
    (header, rows)
}

fn config_message(text: &str) -> String {
    match parse_config(text) {
        Err(CliError::Config(msg)) => msg,
        other => panic!("expected a config error, got {other:?}"),
    }
}

#[test]
fn empty_pair_section_takes_anomalous_defaults() {
    let c = parse_config("[pair]\n").unwrap();
    let p = c.pair_config().unwrap();
    assert_eq!((p.t_a, p.t_b, p.omega), (2.0, 1.0, 0.1));
    assert!((p.delta() + FRAC_PI_2).abs() < 1e-15);
    let [a, b] = c.baths().unwrap();
    assert_eq!((a.kappa, b.kappa), (0.01, 0.01));
    assert_eq!((a.temperature, b.temperature), (2.0, 1.0));
    assert_eq!(c.pair.chi, ChiKind::Optimal);
}

#[test]
fn zero_temperature_is_a_range_error() {
    let msg = config_message("[pair]\nt_b = 0.0\n");
    assert!(msg.starts_with("pair.t_b:"), "{msg}");
}

#[test]
fn unknown_keys_are_rejected_with_their_path() {
    let msg = config_message("[bath_a]\nkapa = 0.1\n");
    assert!(msg.contains("bath_a") && msg.contains("kapa"), "{msg}");
    let msg = config_message("dtt = 0.1\n");
    assert!(msg.contains("dtt"), "{msg}");
}

#[test]
fn type_errors_name_the_key() {
    let msg = config_message("[pair]\nomega = \"fast\"\n");
    assert!(msg.starts_with("pair.omega"), "{msg}");
}

#[test]
fn custom_chi_needs_both_entries() {
    let msg = config_message("[pair]\nchi = \"custom\"\nchi11 = 0.0\n");
    assert!(msg.starts_with("pair.chi_magnitude"), "{msg}");
    let msg = config_message("[pair]\nchi11 = 0.0\n");
    assert!(msg.starts_with("pair.chi11"), "{msg}");
}

#[test]
fn fig5_preset_values() {
    let runs = preset_runs("fig5").unwrap();
    let c = runs[0].config();
    assert_eq!((c.bath_a.kappa, c.bath_b.kappa), (0.01, 0.023));
    assert_eq!(c.schedule.tau_relax, 500.0);
    let schedule = c.schedule().unwrap();
    assert_eq!(schedule.tau_connect, TauConnect::Fixed(6.1));
    assert_eq!(schedule.n_cycles, 2);
    assert_eq!(runs[1].config().pair.chi, ChiKind::None);
}

#[test]
fn preset_file_families() {
    assert_eq!(preset_runs("fig1").unwrap().len(), 3);
    assert_eq!(preset_runs("fig2").unwrap().len(), 6);
    assert_eq!(preset_runs("fig4").unwrap().len(), 2);
    assert!(matches!(preset_runs("fig9"), Err(CliError::Config(_))));
}

#[test]
fn csv_floats_round_trip() {
    let row = Row {
        t: 0.1,
        e_a: -1.0 / 3.0,
        e_b: 1e-300,
        sed: -0.0,
        q_a: f64::MAX,
        q_b: 2.0_f64.sqrt(),
        concurrence: 0.0,
        mutual_info: 5e-17,
        sigma0: -7.25,
        sigma: 1.0,
        v_expect: PI,
    };
    let text = csv_text(&[row]);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some(CSV_HEADER));
    let parsed: Vec<f64> = lines.next().unwrap().split(',').map(|v| v.parse().unwrap()).collect();
    assert_eq!(parsed[1], row.e_a);
    assert_eq!(parsed[5], row.q_b);
    assert_eq!(parsed[10], row.v_expect);
}

#[test]
fn fig1_preset_is_deterministic_and_well_formed() {
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        let status = binary()
            .args(["closed", "--preset", "fig1", "--out"])
            .arg(d.path())
            .status()
            .unwrap();
        assert!(status.success());
    }
    for stem in ["fig1_delta_0", "fig1_delta_pi_2", "fig1_delta_minus_pi_2"] {
        for ext in ["csv", "json"] {
            let name = format!("{stem}.{ext}");
            let a = fs::read(dirs[0].path().join(&name)).unwrap();
            let b = fs::read(dirs[1].path().join(&name)).unwrap();
            assert!(a == b, "{name} differs between identical runs");
        }
    }
    let (header, rows) = read_csv(&dirs[0].path().join("fig1_delta_0.csv"));
    assert_eq!(header.join(","), CSV_HEADER);
    assert_eq!(header.len(), 11);
    let sed0 = rows[0][3];
    assert!(rows.iter().all(|r| r[3] <= sed0 + 1e-9));
    let meta: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dirs[0].path().join("fig1_delta_0.json")).unwrap()).unwrap();
    assert_eq!(meta["preset"], "fig1");
    assert_eq!(meta["csv"], "fig1_delta_0.csv");
}

#[test]
fn metadata_config_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("in.toml");
    fs::write(&cfg, "t_final = 30.0\n[pair]\nt_a = 1.7\ndelta = 0.4\n").unwrap();
    let first = dir.path().join("first");
    assert!(binary().args(["closed", "--config"]).arg(&cfg).arg("--out").arg(&first).status().unwrap().success());
    let meta: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(first.join("closed.json")).unwrap()).unwrap();
    let again = dir.path().join("again.toml");
    fs::write(&again, meta["config_toml"].as_str().unwrap()).unwrap();
    let second = dir.path().join("second");
    assert!(binary().args(["closed", "--config"]).arg(&again).arg("--out").arg(&second).status().unwrap().success());
    assert_eq!(fs::read(first.join("closed.csv")).unwrap(), fs::read(second.join("closed.csv")).unwrap());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let write = |name: &str, text: &str| {
        let p = dir.path().join(name);
        fs::write(&p, text).unwrap();
        p
    };
    let run = |args: &[&str], cfg: &Path, env: Option<(&str, &str)>| {
        let mut cmd = binary();
        cmd.args(args).arg("--config").arg(cfg).arg("--out").arg(dir.path().join("out"));
        if let Some((k, v)) = env {
            cmd.env(k, v);
        }
        cmd.status().unwrap().code()
    };

    let bad = write("bad.toml", "[pair]\nt_b = 0.0\n");
    assert_eq!(run(&["closed"], &bad, None), Some(2));

    let empty = write("empty.toml", "[sweep]\nmode = \"closed\"\n");
    assert_eq!(run(&["sweep"], &empty, None), Some(2));

    let big = write(
        "big.toml",
        "t_final = 1.0\n[sweep]\nmode = \"closed\"\nmax_runs = 2\n[sweep.grid]\n\"pair.delta\" = [0.0, 1.0, 2.0]\n",
    );
    assert_eq!(run(&["sweep"], &big, None), Some(4));

    let open = write("open.toml", "t_final = 1.0\n[start]\nkind = \"factorized\"\n");
    assert_eq!(run(&["open"], &open, Some(("QCORR_PUMP_CAP", "10"))), Some(4));

    let wrong_mode = write("mode.toml", "mode = \"pump\"\n");
    assert_eq!(run(&["closed"], &wrong_mode, None), Some(2));

    let ok = write("ok.toml", "t_final = 1.0\n");
    assert_eq!(run(&["closed"], &ok, None), Some(0));
}

#[test]
fn empty_grid_is_an_error() {
    let c = parse_config("[sweep]\nmode = \"closed\"\n[sweep.grid]\n").unwrap();
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(run_sweep(&c, dir.path(), 1), Err(CliError::Config(_))));
}

#[test]
fn misspelled_sweep_key_is_a_config_error() {
    let c = parse_config("[sweep]\nmode = \"closed\"\n[sweep.grid]\n\"pair.omgea\" = [0.1]\n").unwrap();
    let dir = tempfile::tempdir().unwrap();
    match run_sweep(&c, dir.path(), 1) {
        Err(CliError::Config(msg)) => assert!(msg.contains("omgea"), "{msg}"),
        other => panic!("expected a config error, got {other:?}"),
    }
}

#[test]
fn omega_sweep_keeps_the_sed_period() {
    let c = parse_config(
        "t_final = 200.0\noutput_stride = 10\n[sweep]\nmode = \"closed\"\n[sweep.grid]\n\"pair.omega\" = [0.05, 0.1, 0.2]\n",
    )
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let summaries = run_sweep(&c, dir.path(), 2).unwrap();
    for (omega, s) in [0.05, 0.1, 0.2].iter().zip(&summaries) {
        let period = PI / omega;
        assert!((s.sed_period - period).abs() < 0.01 * period, "omega {omega}: {}", s.sed_period);
    }
    let (header, rows) = read_csv(&dir.path().join("summary.csv"));
    assert_eq!(header[..2], ["run".to_string(), "pair.omega".to_string()]);
    assert_eq!(rows.iter().map(|r| r[1]).collect::<Vec<_>>(), vec![0.05, 0.1, 0.2]);
    assert!(dir.path().join("run_002.csv").exists());
}

#[test]
fn sweep_rows_do_not_depend_on_worker_count() {
    let text = "t_final = 20.0\n[sweep]\nmode = \"closed\"\n[sweep.grid]\n\"pair.delta\" = [-1.0, 0.0, 1.0]\n\"pair.t_a\" = [1.5, 3.0]\n";
    let c = parse_config(text).unwrap();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run_sweep(&c, a.path(), 1).unwrap();
    run_sweep(&c, b.path(), 3).unwrap();
    assert_eq!(
        fs::read(a.path().join("summary.csv")).unwrap(),
        fs::read(b.path().join("summary.csv")).unwrap()
    );
}

#[test]
fn phase_sweep_sets_the_sign_of_early_cold_heat() {
    let c = parse_config(
        "t_final = 20.0\n[start]\nwarmup = 300.0\n[hierarchy]\ndepth = 3\n\
         [sweep]\nmode = \"open\"\n[sweep.grid]\n\"pair.delta\" = [-1.5707963267948966, 0.0, 1.5707963267948966]\n",
    )
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let s = run_sweep(&c, dir.path(), 1).unwrap();
    let (anomalous, normal, reversed) = (s[0].q_b_early, s[1].q_b_early, s[2].q_b_early);
    assert!(anomalous > 0.0, "{anomalous}");
    assert!(reversed < 0.0, "{reversed}");
    assert!(normal.abs() < anomalous.abs() && normal.abs() < reversed.abs(), "{normal}");
    assert_eq!(Mode::Open, c.sweep.unwrap().mode);
}
