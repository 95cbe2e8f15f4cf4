use orgdt::design::{DesignDecision, Mode, ModelOptions};
use orgdt::milp::{default_backend, CutOptions};
use orgdt::netmodel::{parse_network, to_json};
use orgdt::report::{emit_study, parse_study_csv};
use orgdt::sbd::price_scenario;
use orgdt::scenario::{load_scenarios, save_scenarios};
use orgdt::study::{run_study, StudyConfig};
use orgdt::testkit::{random_instance, InstanceShape, DESK6_NETWORK, DESK6_SCENARIOS};
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn orgdt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_orgdt"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Fixture {
    dir: tempfile::TempDir,
}

impl Fixture {
    fn new() -> Self {
        Self {
            dir: tempfile::tempdir().unwrap(),
        }
    }

    fn file(&self, name: &str, text: &str) -> PathBuf {
        let p = self.dir.path().join(name);
        std::fs::write(&p, text).unwrap();
        p
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    /// A three-bus instance with two scenarios.
    fn small(&self) -> (PathBuf, PathBuf) {
        let (net, set) = random_instance(
            9,
            InstanceShape {
                buses: 3,
                extra_lines: 1,
                candidates: 1,
                scenarios: 2,
                new_generator: false,
            },
        );
        (self.file("net.json", &to_json(&net)), self.file("scen.json", &save_scenarios(&set)))
    }

    fn desk(&self) -> (PathBuf, PathBuf) {
        (self.file("desk.json", DESK6_NETWORK), self.file("desk_scen.json", DESK6_SCENARIOS))
    }
}

#[test]
fn scenario_generation_is_reproducible_and_counted() {
    let f = Fixture::new();
    let (net, _) = f.desk();
    let run = |out: &str, seed: &str, pct: &str| {
        let o = orgdt(&["scenarios", "--net", s(&net), "--count", "20", "--percentile", pct, "--seed", seed, "--out", s(&f.path(out))]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        std::fs::read_to_string(f.path(out)).unwrap()
    };
    let a = run("a.json", "5", "0.3");
    assert_eq!(a, run("b.json", "5", "0.3"));
    assert_ne!(a, run("c.json", "6", "0.3"));
    let desk = parse_network(DESK6_NETWORK).unwrap();
    let set = load_scenarios(&a, &desk).unwrap();
    assert_eq!(set.scenarios.len(), 20);
    let none = load_scenarios(&run("d.json", "5", "0"), &desk).unwrap();
    assert!(none.scenarios.iter().all(|sc| sc.damaged_lines.is_empty()));
}

#[test]
fn five_percentiles_give_requested_counts() {
    let f = Fixture::new();
    let (net, _) = f.desk();
    let desk = parse_network(DESK6_NETWORK).unwrap();
    for pct in ["0.1", "0.3", "0.5", "0.7", "0.9"] {
        let o = orgdt(&["scenarios", "--net", s(&net), "--count", "20", "--percentile", pct]);
        assert_eq!(code(&o), 0);
        let set = load_scenarios(&String::from_utf8(o.stdout).unwrap(), &desk).unwrap();
        assert_eq!(set.scenarios.len(), 20);
        assert_eq!(set.damage_percentile, pct.parse::<f64>().unwrap());
    }
}

#[test]
fn designed_upgrades_reprice_to_zero() {
    let f = Fixture::new();
    let (net, scen) = f.small();
    let out = f.path("out");
    let o = orgdt(&["design", "--net", s(&net), "--scenarios", s(&scen), "--mode", "dc", "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let design: DesignDecision =
        serde_json::from_str(&std::fs::read_to_string(out.join("design_dc.json")).unwrap()).unwrap();
    let trace = std::fs::read_to_string(out.join("trace_dc.csv")).unwrap();
    assert!(trace.lines().count() >= 2);
    let net = parse_network(&std::fs::read_to_string(&net).unwrap()).unwrap();
    let set = load_scenarios(&std::fs::read_to_string(&scen).unwrap(), &net).unwrap();
    for sc in &set.scenarios {
        let price = price_scenario(&design, &net, sc, &ModelOptions::new(Mode::Dc), &default_backend(), &CutOptions::default())
            .unwrap();
        assert!(price <= 1e-6, "scenario {} prices {price}", sc.id);
    }
}

#[test]
fn unattainable_targets_exit_three_naming_lp_cr() {
    let f = Fixture::new();
    let mut net: serde_json::Value = serde_json::from_str(DESK6_NETWORK).unwrap();
    for b in net["buses"].as_array_mut().unwrap() {
        if b["is_critical"] == true {
            b["demand_p"] = serde_json::json!(5000.0);
        }
    }
    let path = f.file("net.json", &net.to_string());
    let (_, scen) = f.desk();
    let o = orgdt(&["design", "--net", s(&path), "--scenarios", s(&scen), "--mode", "dc", "--out", s(&f.path("o"))]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert!(stderr(&o).contains("lp_cr"));
}

#[test]
fn usage_errors_exit_two() {
    let f = Fixture::new();
    let (net, scen) = f.small();
    let missing = f.path("nope.json");
    let cases: Vec<Vec<&str>> = vec![
        vec!["certify", "--design", s(&missing), "--net", s(&net), "--scenarios", s(&scen), "--mode", "qc"],
        vec!["design", "--net", s(&net), "--scenarios", s(&scen), "--count", "3"],
        vec!["design", "--net", s(&net)],
        vec!["design", "--net", s(&net), "--scenarios", s(&scen), "--mode", "ac"],
        vec!["study", "--net", s(&net), "--scenarios", s(&scen), "--load-scale", "1,-2"],
        vec!["design", "--bogus"],
        vec!["scenarios", "--net", s(&missing), "--count", "2", "--percentile", "0.5"],
    ];
    for args in cases {
        let o = orgdt(&args);
        assert_eq!(code(&o), 2, "{args:?}: {}", stderr(&o));
    }
}

#[test]
fn flags_override_the_config_file() {
    let f = Fixture::new();
    let (net, scen) = f.small();
    let out = f.path("out");
    let config = f.file(
        "run.toml",
        &format!("net = {:?}\nscenarios = {:?}\nmode = \"qc\"\nout = {:?}\n", s(&net), s(&scen), s(&out)),
    );
    let o = orgdt(&["design", "--config", s(&config), "--mode", "dc"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(out.join("design_dc.json").exists());
    assert!(!out.join("design_qc.json").exists());
}

#[test]
fn qc_design_on_desk_certifies_without_shedding() {
    let f = Fixture::new();
    let (net, scen) = f.desk();
    let out = f.path("out");
    let o = orgdt(&["design", "--net", s(&net), "--scenarios", s(&scen), "--mode", "qc", "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report = f.path("recovery.csv");
    let design = out.join("design_qc.json");
    let o = orgdt(&[
        "certify", "--design", s(&design), "--net", s(&net), "--scenarios", s(&scen), "--mode", "qc", "--out", s(&report),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let mut rdr = csv::Reader::from_path(&report).unwrap();
    let headers = rdr.headers().unwrap().clone();
    let col = |name: &str| headers.iter().position(|h| h == name).unwrap();
    let (crit, ncr) = (col("mu_crit"), col("mu_ncr"));
    let mut n = 0;
    for rec in rdr.records() {
        let rec = rec.unwrap();
        assert!(rec[crit].parse::<f64>().unwrap().abs() <= 1e-4);
        assert!(rec[ncr].parse::<f64>().unwrap().abs() <= 1e-4);
        n += 1;
    }
    assert_eq!(n, 4);
}

#[test]
fn study_rows_and_metrics() {
    let f = Fixture::new();
    let (net, scen) = f.small();
    let study = |out: &str, extra: &[&str]| {
        let dir = f.path(out);
        let mut args = vec!["study", "--net", s(&net), "--scenarios", s(&scen), "--out", s(&dir)];
        args.extend_from_slice(extra);
        let o = orgdt(&args);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        parse_study_csv(&std::fs::read_to_string(dir.join("study.csv")).unwrap()).unwrap()
    };

    let one = study("one", &["--mode", "dc"]);
    assert_eq!(one.len(), 1);
    assert_eq!(one[0].zeta, None);

    let both = study("both", &["--mode", "both"]);
    assert_eq!(both.len(), 2);
    let dc = both.iter().find(|r| r.mode == Mode::Dc).unwrap();
    assert!(dc.zeta.is_some() || both.iter().any(|r| r.mode == Mode::Qc && r.objective <= 0.0));

    let dev = study("dev", &["--mode", "qc", "--devices", "--load-scale", "1,1.1"]);
    assert_eq!(dev.len(), 4);
    for r in dev.iter().filter(|r| r.devices) {
        let qc = dev.iter().find(|o| !o.devices && o.load_scale == r.load_scale).unwrap();
        assert_eq!(r.psi.is_some(), qc.objective > 0.0);
    }
}

#[test]
fn study_command_writes_what_the_library_writes() {
    let f = Fixture::new();
    let (net_path, scen_path) = f.small();
    let dir = f.path("cli");
    let o = orgdt(&["study", "--net", s(&net_path), "--scenarios", s(&scen_path), "--load-scale", "1,1.2", "--out", s(&dir)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));

    let net = parse_network(&std::fs::read_to_string(&net_path).unwrap()).unwrap();
    let set = load_scenarios(&std::fs::read_to_string(&scen_path).unwrap(), &net).unwrap();
    let config = StudyConfig {
        load_scales: vec![1.0, 1.2],
        ..StudyConfig::default()
    };
    let rows: Vec<_> = run_study(&net, &set, &config, &default_backend()).unwrap().into_iter().map(|r| r.row).collect();
    let lib = f.path("lib");
    let files = emit_study(&rows, &lib).unwrap();
    for file in files {
        let name = file.file_name().unwrap();
        assert_eq!(std::fs::read(dir.join(name)).unwrap(), std::fs::read(&file).unwrap(), "{name:?}");
    }
}
