use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_radpair");

fn run(dir: &Path, sub: &str, config: &str, envs: &[(&str, &str)]) -> Output {
    let path = dir.join("run.json");
    fs::write(&path, config).unwrap();
    let mut cmd = Command::new(BIN);
    cmd.arg(sub).arg("--config").arg(&path).arg("--out").arg(dir.join("out"));
    cmd.env_remove("RADPAIR_THREADS");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().unwrap()
}

fn two_level(omega: f64, k_s: f64, k_t: f64, extra: &str) -> String {
    format!(
        r#"{{"schema":1,"system":{{"two_level":{{"omega":{omega}}}}},"rates":{{"k_s":{k_s},"k_t":{k_t}}},
           "times":{{"start":0,"stop":4,"count":41}}{extra}}}"#
    )
}

fn read(dir: &Path, name: &str) -> String {
    fs::read_to_string(dir.join("out").join(name)).unwrap()
}

fn rows(csv: &str) -> Vec<Vec<f64>> {
    csv.lines()
        .skip(1)
        .map(|l| l.split(',').map(|x| x.parse().unwrap_or(f64::NAN)).collect())
        .collect()
}

fn out_files(dir: &Path) -> Vec<String> {
    match fs::read_dir(dir.join("out")) {
        Ok(entries) => entries.map(|e| e.unwrap().file_name().into_string().unwrap()).collect(),
        Err(_) => Vec::new(),
    }
}

#[test]
fn evolve_without_rates_is_cos_squared() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), "evolve", &two_level(1.3, 0.0, 0.0, ""), &[]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    for approach in ["haberkorn", "measurement"] {
        let csv = read(dir.path(), &format!("radpair_{approach}.csv"));
        assert!(csv.starts_with("t,pop_s,pop_t,yield_s,yield_t,trace,coherence_st\n"));
        for r in rows(&csv) {
            assert!((r[1] - (1.3 * r[0]).cos().powi(2)).abs() <= 1e-9);
        }
    }
}

#[test]
fn zero_coupling_coherences_follow_each_approach() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = two_level(0.0, 0.6, 1.4, r#","rho0":[[[0.5,0],[0.5,0]],[[0.5,0],[0.5,0]]]"#);
    let out = run(dir.path(), "compare", &cfg, &[]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    for (approach, rate) in [("haberkorn", 1.0), ("measurement", 2.0)] {
        for r in rows(&read(dir.path(), &format!("radpair_{approach}.csv"))) {
            assert!((r[6] - 0.5 * (-rate * r[0]).exp()).abs() <= 1e-9, "{approach} t {}", r[0]);
        }
    }
    let report: serde_json::Value = serde_json::from_str(&read(dir.path(), "radpair_report.json")).unwrap();
    assert!(report["max_abs_pop_diff"].as_f64().unwrap() <= 1e-10);
    assert!(report["eq18_residual"].as_f64().unwrap() <= 1e-10);
}

#[test]
fn every_row_conserves_probability() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), "compare", &two_level(0.9, 0.4, 2.5, ""), &[]);
    assert_eq!(out.status.code(), Some(0));
    for approach in ["haberkorn", "measurement"] {
        for r in rows(&read(dir.path(), &format!("radpair_{approach}.csv"))) {
            assert!((r[5] + r[3] + r[4] - 1.0).abs() <= 1e-8);
        }
    }
}

#[test]
fn config_errors_exit_2_and_name_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        (two_level(1.0, -0.5, 1.0, ""), "k_s"),
        (r#"{"schema":1,"system":{"two_level":{"omega":1}},"rates":{"k_s":0,"k_t":1},"times":[0,1],"colour":1}"#.to_string(), "colour"),
        (two_level(1.0, 0.5, 1.0, "").replace("\"count\":41", "\"count\":1"), "times"),
        (r#"{"schema":2,"system":{"two_level":{"omega":1}},"rates":{"k_s":0,"k_t":1},"times":[0,1]}"#.to_string(), "schema"),
    ];
    for (cfg, field) in cases {
        let out = run(dir.path(), "evolve", &cfg, &[]);
        assert_eq!(out.status.code(), Some(2), "{field}");
        assert!(String::from_utf8_lossy(&out.stderr).contains(field), "{field}");
    }
    assert!(out_files(dir.path()).is_empty());
}

#[test]
fn physics_errors_exit_3_without_partial_output() {
    let dir = tempfile::tempdir().unwrap();
    let h = r#"[[[0,0],[1,0]],[[1,0],[0,0]]]"#;
    let bad_projector = r#"[[[1.001,0],[0,0]],[[0,0],[0,0]]]"#;
    let cfg = format!(
        r#"{{"schema":1,"system":{{"explicit":{{"hamiltonian":{h},"q_singlet":{bad_projector}}}}},
           "rates":{{"k_s":0.5,"k_t":1}},"times":[0,1,2]}}"#
    );
    for sub in ["evolve", "compare", "check"] {
        let out = run(dir.path(), sub, &cfg, &[]);
        assert_eq!(out.status.code(), Some(3), "{sub}");
    }
    let non_hermitian = two_level(1.0, 0.5, 1.0, "").replace(
        r#""two_level":{"omega":1}"#,
        r#""explicit":{"hamiltonian":[[[0,0],[1,0]],[[2,0],[0,0]]],"q_singlet":[[[1,0],[0,0]],[[0,0],[0,0]]]}"#,
    );
    assert_eq!(run(dir.path(), "evolve", &non_hermitian, &[]).status.code(), Some(3));
    assert!(out_files(dir.path()).is_empty());
}

#[test]
fn unwritable_output_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("out"), "a file, not a directory").unwrap();
    let out = run(dir.path(), "evolve", &two_level(1.0, 0.5, 1.0, ""), &[]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn check_reports_every_residual_on_two_spins() {
    let dir = tempfile::tempdir().unwrap();
    let s = 0.5;
    let q = format!("[[[0,0],[0,0],[0,0],[0,0]],[[0,0],[{s},0],[-{s},0],[0,0]],[[0,0],[-{s},0],[{s},0],[0,0]],[[0,0],[0,0],[0,0],[0,0]]]");
    let h = "[[[0.3,0],[0,0],[0,0],[0,0]],[[0,0],[0.1,0],[0.2,0.1],[0,0]],[[0,0],[0.2,-0.1],[-0.1,0],[0,0]],[[0,0],[0,0],[0,0],[-0.3,0]]]";
    let cfg = format!(
        r#"{{"schema":1,"system":{{"explicit":{{"hamiltonian":{h},"q_singlet":{q}}}}},
           "rates":{{"k_s":0.7,"k_t":1.9}},"times":[0,1]}}"#
    );
    let out = run(dir.path(), "check", &cfg, &[]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(out.status.code(), Some(0), "{stdout}{}", String::from_utf8_lossy(&out.stderr));
    for name in ["hamiltonian_hermiticity", "decoherence_gap", "trace_loss_haberkorn", "trace_loss_measurement"] {
        assert!(stdout.lines().any(|l| l.starts_with(name) && l.ends_with("ok")), "{name}");
    }
}

#[test]
fn config_echo_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let first = run(dir.path(), "compare", &two_level(1.1, 0.3, 0.8, ""), &[]);
    assert_eq!(first.status.code(), Some(0));
    let echo = read(dir.path(), "radpair_config.json");
    let report = read(dir.path(), "radpair_report.json");
    let curve = read(dir.path(), "radpair_measurement.csv");
    let again = tempfile::tempdir().unwrap();
    assert_eq!(run(again.path(), "compare", &echo, &[]).status.code(), Some(0));
    assert_eq!(read(again.path(), "radpair_report.json"), report);
    assert_eq!(read(again.path(), "radpair_measurement.csv"), curve);
    let strip = |text: &str| {
        let mut v: serde_json::Value = serde_json::from_str(text).unwrap();
        v["output"].as_object_mut().unwrap().remove("directory");
        v
    };
    // only the --out override differs between the two echoes
    assert_eq!(strip(&read(again.path(), "radpair_config.json")), strip(&echo));
}

#[test]
fn trajectories_are_identical_across_thread_counts() {
    let cfg = two_level(1.0, 0.5, 2.0, r#","trajectory":{"t_max":2,"n_traj":1500,"seed":42,"n_records":21}"#);
    let mut seen = Vec::new();
    for threads in ["1", "3"] {
        let dir = tempfile::tempdir().unwrap();
        let out = run(dir.path(), "trajectories", &cfg, &[("RADPAIR_THREADS", threads)]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
        seen.push((
            read(dir.path(), "radpair_trajectories_haberkorn.csv"),
            read(dir.path(), "radpair_trajectories_measurement.csv"),
        ));
    }
    assert_eq!(seen[0], seen[1]);
    assert!(seen[0].0.starts_with("t,surviving_fraction,pop_s_est,pop_s_stderr,pop_t_est,pop_t_stderr\n"));
}

#[test]
fn single_trajectory_leaves_stderr_empty() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = two_level(1.0, 0.5, 2.0, r#","approach":"haberkorn","trajectory":{"t_max":1,"n_traj":1,"seed":1,"n_records":5}"#);
    let out = run(dir.path(), "trajectories", &cfg, &[]);
    assert_eq!(out.status.code(), Some(0));
    let csv = read(dir.path(), "radpair_trajectories_haberkorn.csv");
    for line in csv.lines().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        assert_eq!(cols.len(), 6);
        assert_eq!(cols[3], "");
        assert_eq!(cols[5], "");
    }
}

#[test]
fn bad_thread_count_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), "evolve", &two_level(1.0, 0.5, 1.0, ""), &[("RADPAIR_THREADS", "zero")]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn sweep_writes_surface_and_rates() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = two_level(
        1.0,
        0.0,
        1.0,
        r#","sweep":{"log10_kt_over_omega":{"start":0,"stop":2,"count":3},"t_omega":{"start":0,"stop":60,"count":241}}"#,
    );
    let out = run(dir.path(), "sweep", &cfg, &[]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let surface = read(dir.path(), "radpair_surface.csv");
    assert_eq!(surface.lines().count(), 1 + 3 * 241 * 2);
    let rates = read(dir.path(), "radpair_rates.csv");
    assert!(rates.starts_with("log10_kt_over_omega,approach,rate,r_squared\n"));
    let at_100: Vec<f64> = rates
        .lines()
        .filter(|l| l.starts_with("2,"))
        .map(|l| l.split(',').nth(2).unwrap().parse().unwrap())
        .collect();
    assert_eq!(at_100.len(), 2);
    // Zeno rates 4ω²/k_T and 2ω²/k_T
    let ratio = at_100[0].max(at_100[1]) / at_100[0].min(at_100[1]);
    assert!((ratio - 2.0).abs() < 0.05, "{ratio}");
}
