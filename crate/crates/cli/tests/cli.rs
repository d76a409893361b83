use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

const BIN: &str = env!("CARGO_BIN_EXE_glauber");

fn glauber(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn out_arg(dir: &Path) -> String {
    dir.display().to_string()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn json(path: impl AsRef<Path>) -> serde_json::Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

/// Every file under `dir` except the manifest and the config copy.
fn artifacts(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir).unwrap().to_path_buf();
                if rel != Path::new("manifest.json") && rel != Path::new("config.toml") {
                    files.insert(rel, std::fs::read(&path).unwrap());
                }
            }
        }
    }
    files
}

fn manifest_without_timing(dir: &Path) -> serde_json::Value {
    let mut m = json(dir.join("manifest.json"));
    m.as_object_mut().unwrap().remove("timing");
    m
}

#[test]
fn exact_two_site_potts_chain_is_reversible() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("exact");
    let o = glauber(&[
        "exact",
        "--n",
        "2",
        "--tau",
        "0.5,1,2",
        "--set",
        "scorer.vocab_size=2",
        "--out",
        &out_arg(&dir),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    for tau in ["0.5", "1", "2"] {
        let a = json(dir.join(format!("cells/tau={tau}_n=2/analysis.json")));
        assert_eq!(a["vocab_size"], 2);
        assert!(a["reversibility_defect"].as_f64().unwrap() <= 1e-12);
        assert!(a["stationary_residual"].as_f64().unwrap() <= 1e-12);
        let top = a["stationary_top_states"].as_array().unwrap();
        let mass: f64 = top.iter().map(|s| s[1].as_f64().unwrap()).sum();
        assert!((mass - 1.0).abs() <= 1e-12, "all four states listed");
    }
    let m = json(dir.join("manifest.json"));
    assert_eq!(m["status"], "complete");
    assert_eq!(m["command"], "exact");
    assert_eq!(m["artifacts"].as_array().unwrap().len(), 4);
}

#[test]
fn identical_config_and_seed_reproduce_every_artifact() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("exp.toml");
    std::fs::write(
        &config,
        "seed = 11\n[scorer]\nkind = \"perturbed\"\nvocab_size = 5\nepsilon = 0.4\n\
         [grid]\ntau = [0.7, 1.3]\nn = [5, 7]\nreplicas = 6\n[chain]\nsteps = 3000\nrecord_every = 7\n\
         [rect]\ncount = 40\nk = 3\n",
    )
    .unwrap();
    for command in ["couple", "hit", "rect", "run"] {
        let dirs: Vec<PathBuf> = ["a", "b", "c"]
            .iter()
            .map(|d| tmp.path().join(format!("{command}-{d}")))
            .collect();
        for (dir, workers) in dirs.iter().zip(["1", "4", "2"]) {
            let cfg = config.display().to_string();
            let o = glauber(&[
                command,
                "--config",
                &cfg,
                "--workers",
                workers,
                "--out",
                &out_arg(dir),
            ]);
            assert!(o.status.success(), "{command}: {}", stderr(&o));
        }
        let first = artifacts(&dirs[0]);
        assert!(!first.is_empty());
        for dir in &dirs[1..] {
            assert_eq!(artifacts(dir), first, "{command} artifacts differ");
            assert_eq!(
                manifest_without_timing(dir),
                manifest_without_timing(&dirs[0])
            );
        }
        let m = json(dirs[0].join("manifest.json"));
        assert_eq!(m["seed"], 11);
        assert!(m["timing"]["wall_time_secs"].as_f64().unwrap() >= 0.0);
    }
}

#[test]
fn a_different_seed_changes_the_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let run = |seed: &str, name: &str| {
        let dir = tmp.path().join(name);
        let o = glauber(&[
            "couple",
            "--seed",
            seed,
            "--n",
            "6",
            "--set",
            "grid.replicas=8",
            "--out",
            &out_arg(&dir),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        dir
    };
    let (a, b) = (run("1", "a"), run("2", "b"));
    assert_ne!(artifacts(&a), artifacts(&b));
    assert_ne!(
        json(a.join("manifest.json"))["config_sha256"],
        json(b.join("manifest.json"))["config_sha256"]
    );
}

#[test]
fn couple_grid_summary_has_one_row_per_cell() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("couple");
    let o = glauber(&[
        "couple",
        "--tau",
        "0.3,1,3",
        "--n",
        "4,8",
        "--steps",
        "400",
        "--set",
        "grid.replicas=10",
        "--out",
        &out_arg(&dir),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let summary = std::fs::read_to_string(dir.join("summary.csv")).unwrap();
    let mut lines = summary.lines();
    assert_eq!(
        lines.next().unwrap(),
        "tau,n,replicas,median_meeting_step,timeout_fraction"
    );
    let rows: Vec<Vec<String>> = lines
        .map(|l| l.split(',').map(str::to_owned).collect())
        .collect();
    assert_eq!(rows.len(), 6);
    let keys: Vec<(String, String)> = rows.iter().map(|r| (r[0].clone(), r[1].clone())).collect();
    for tau in ["0.3", "1", "3"] {
        for n in ["4", "8"] {
            assert!(
                keys.contains(&(tau.into(), n.into())),
                "missing cell {tau},{n}"
            );
            assert!(dir
                .join(format!("cells/tau={tau}_n={n}/replicas.csv"))
                .exists());
        }
    }
    for r in &rows {
        assert_eq!(r[2], "10");
        let median: f64 = r[3].parse().unwrap();
        let timeouts: f64 = r[4].parse().unwrap();
        assert!((0.0..=400.0).contains(&median));
        assert!((0.0..=1.0).contains(&timeouts));
    }
    let grid = std::fs::read_to_string(dir.join("grid.csv")).unwrap();
    assert_eq!(
        grid.lines().next().unwrap(),
        "tau,n,seed,meeting_step,timeout_flag"
    );
    assert_eq!(grid.lines().count(), 1 + 60);
}

#[test]
fn invalid_configs_exit_with_usage_code_naming_the_field() {
    let tmp = tempfile::tempdir().unwrap();
    let bad_basin = tmp.path().join("bad.toml");
    std::fs::write(
        &bad_basin,
        "[basin]\nkind = \"token_count\"\ntarget = 0\nfraction = 1.5\n",
    )
    .unwrap();
    let cfg = bad_basin.display().to_string();
    let cases: Vec<(Vec<&str>, &str)> = vec![
        (vec!["run", "--tau", "-1"], "grid.tau[0]"),
        (vec!["run", "--tau", "1,0"], "grid.tau[1]"),
        (vec!["drift", "--config", &cfg], "basin.fraction"),
        (vec!["run", "--set", "grid.n=[]"], "grid.n"),
        (vec!["run", "--set", "grid.replicas=0"], "grid.replicas"),
        (
            vec!["run", "--set", "scorer.vocab_size=1"],
            "scorer.vocab_size",
        ),
        (vec!["margin"], "margin.exhaustive"),
    ];
    for (args, field) in cases {
        let mut args = args.clone();
        let out = tmp.path().join("out").display().to_string();
        args.extend(["--out", &out]);
        let o = glauber(&args);
        assert_eq!(o.status.code(), Some(2), "{args:?}: {}", stderr(&o));
        assert!(stderr(&o).contains(field), "{args:?}: {}", stderr(&o));
    }
    assert_eq!(glauber(&["no-such-command"]).status.code(), Some(2));
    assert_eq!(glauber(&["run", "--steps", "many"]).status.code(), Some(2));
}

#[test]
fn oversized_exact_problem_exits_with_capacity_code() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("cap");
    let o = glauber(&["exact", "--n", "10", "--out", &out_arg(&dir)]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("capacity"));
    let m = json(dir.join("manifest.json"));
    assert_eq!(m["status"], "failed");
    assert!(m["error"].as_str().unwrap().contains("1048576"));
}

#[test]
fn unreachable_endpoint_exits_with_transport_code() {
    let port = {
        let l = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        l.local_addr().unwrap().port()
    };
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("remote");
    let endpoint = format!("127.0.0.1:{port}");
    let o = glauber(&["run", "--endpoint", &endpoint, "--out", &out_arg(&dir)]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
    assert_eq!(json(dir.join("manifest.json"))["status"], "failed");
}

/// A scoring server that answers the handshake and a few requests, then
/// hangs up.
fn dying_server(dir: &Path, requests: usize) -> String {
    let script = dir.join("dying.sh");
    let mut f = std::fs::File::create(&script).unwrap();
    writeln!(
        f,
        "#!/bin/sh\ni=0\nwhile [ $i -le {requests} ] && IFS= read -r line; do printf '%s\\n' \"$line\"; i=$((i+1)); done | {BIN} serve-synthetic --n 6"
    )
    .unwrap();
    drop(f);
    let mut perms = std::fs::metadata(&script).unwrap().permissions();
    std::os::unix::fs::PermissionsExt::set_mode(&mut perms, 0o755);
    std::fs::set_permissions(&script, perms).unwrap();
    format!("stdio:{}", script.display())
}

#[test]
fn remote_failure_mid_run_keeps_partial_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("partial");
    let endpoint = dying_server(tmp.path(), 60);
    let o = glauber(&[
        "run",
        "--endpoint",
        &endpoint,
        "--n",
        "6",
        "--steps",
        "5000",
        "--out",
        &out_arg(&dir),
    ]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
    let m = json(dir.join("manifest.json"));
    assert_eq!(m["status"], "partial");
    assert!(m["error"].as_str().unwrap().contains("stopped early"));
    let summary = std::fs::read_to_string(dir.join("summary.csv")).unwrap();
    let row: Vec<&str> = summary.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row[7], "1", "run flagged as aborted");
    let records: usize = row[3].parse().unwrap();
    assert!(records > 1 && records < 5001, "{records} records");
}

#[test]
fn stdio_remote_scorer_reproduces_local_results() {
    let tmp = tempfile::tempdir().unwrap();
    let local = tmp.path().join("local");
    let remote = tmp.path().join("remote");
    let common = [
        "--n",
        "5",
        "--tau",
        "0.8,1.5",
        "--steps",
        "2000",
        "--set",
        "grid.replicas=4",
    ];
    let mut args = vec!["couple"];
    args.extend(common);
    args.extend(["--out", local.to_str().unwrap()]);
    let o = glauber(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    let endpoint = format!("stdio:{BIN} serve-synthetic --n 5");
    let mut args = vec!["couple", "--endpoint", &endpoint];
    args.extend(common);
    args.extend(["--out", remote.to_str().unwrap()]);
    let o = glauber(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(artifacts(&remote), artifacts(&local));
}

struct Server(std::process::Child);

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

#[test]
fn tcp_remote_scorer_reproduces_exact_analysis() {
    let mut child = Command::new(BIN)
        .args([
            "serve-synthetic",
            "--n",
            "3",
            "--scorer",
            "perturbed",
            "--set",
            "scorer.epsilon=0.7",
            "--listen",
            "127.0.0.1:0",
        ])
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap())
        .read_line(&mut line)
        .unwrap();
    let _server = Server(child);
    let addr = line
        .trim()
        .strip_prefix("listening on ")
        .expect("address line")
        .to_owned();

    let tmp = tempfile::tempdir().unwrap();
    let local = tmp.path().join("local");
    let remote = tmp.path().join("remote");
    let base = ["exact", "--n", "3", "--tau", "0.6,1"];
    let mut args = base.to_vec();
    args.extend([
        "--scorer",
        "perturbed",
        "--set",
        "scorer.epsilon=0.7",
        "--out",
        local.to_str().unwrap(),
    ]);
    assert!(glauber(&args).status.success());
    let endpoint = format!("tcp://{addr}");
    let mut args = base.to_vec();
    args.extend(["--endpoint", &endpoint, "--out", remote.to_str().unwrap()]);
    let o = glauber(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    for tau in ["0.6", "1"] {
        let rel = format!("cells/tau={tau}_n=3/analysis.json");
        let (a, b) = (json(local.join(&rel)), json(remote.join(&rel)));
        assert_eq!(a["c_matrix"], b["c_matrix"]);
        assert_eq!(a["t_mix_table"], b["t_mix_table"]);
        assert!(
            b["reversibility_defect"].as_f64().unwrap() > 1e-6,
            "perturbed chain is not reversible"
        );
    }
}

#[test]
fn resolved_config_round_trips_through_show_config() {
    let tmp = tempfile::tempdir().unwrap();
    let o = glauber(&[
        "show-config",
        "--scorer",
        "perturbed",
        "--set",
        "scorer.epsilon=0.25",
        "--tau",
        "0.5,2",
        "--set",
        "basin.kind=hamming_ball",
        "--set",
        "basin.center=[0,1,0]",
        "--set",
        "basin.radius=1",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let first = String::from_utf8(o.stdout).unwrap();
    assert!(first.contains("epsilon = 0.25"));
    let path = tmp.path().join("resolved.toml");
    std::fs::write(&path, &first).unwrap();
    let again = glauber(&["show-config", "--config", path.to_str().unwrap()]);
    assert_eq!(String::from_utf8(again.stdout).unwrap(), first);

    // the copy written next to the artifacts replays the run
    let run_a = tmp.path().join("a");
    assert!(glauber(&[
        "hit",
        "--config",
        path.to_str().unwrap(),
        "--out",
        run_a.to_str().unwrap()
    ])
    .status
    .success());
    let copy = run_a.join("config.toml").display().to_string();
    let run_b = tmp.path().join("b");
    assert!(
        glauber(&["hit", "--config", &copy, "--out", run_b.to_str().unwrap()])
            .status
            .success()
    );
    assert_eq!(artifacts(&run_a), artifacts(&run_b));
}

#[test]
fn traps_read_a_recorded_trajectory() {
    let tmp = tempfile::tempdir().unwrap();
    let states = tmp.path().join("start.ndjson");
    std::fs::write(&states, "{\"ids\":[0,0,0,0,0,0]}\n").unwrap();
    let run_dir = tmp.path().join("run");
    let s = states.display().to_string();
    let common = [
        "--scorer",
        "ferromagnetic",
        "--set",
        "scorer.strength=3",
        "--set",
        "scorer.vocab_size=3",
        "--tau",
        "0.6",
        "--states",
        &s,
        "--record-every",
        "5",
    ];
    let mut args = vec!["run", "--steps", "20000"];
    args.extend(common);
    args.extend(["--out", run_dir.to_str().unwrap()]);
    let o = glauber(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    let trajectory = run_dir.join("cells/tau=0.6_n=6/trajectory_r0.ndjson");
    let t = trajectory.display().to_string();
    let set = format!("traps.trajectory={t:?}");
    let traps_dir = tmp.path().join("traps");
    let mut args = vec!["traps", "--set", &set];
    args.extend(common);
    args.extend(["--out", traps_dir.to_str().unwrap()]);
    let o = glauber(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    let events = json(traps_dir.join("traps.json"));
    let events = events.as_array().unwrap();
    assert!(
        !events.is_empty(),
        "a strong ferromagnet at low temperature sits in its ground states"
    );
    for e in events {
        let rep: Vec<u64> = e["representative"]
            .as_array()
            .unwrap()
            .iter()
            .map(|t| t.as_u64().unwrap())
            .collect();
        assert!(
            rep.windows(2).all(|w| w[0] == w[1]),
            "trap at a ground state: {rep:?}"
        );
        assert_eq!(e["margin"]["kind"], "perfect");
    }
}

#[test]
fn drift_and_margin_reports_match_closed_forms() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("drift");
    let o = glauber(&[
        "drift",
        "--scorer",
        "independent",
        "--set",
        "scorer.vocab_size=10",
        "--set",
        "scorer.probability=0.95",
        "--n",
        "20",
        "--set",
        "basin.fraction=0.9",
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    // (1 − f)·p − f·(1 − p) at τ = 1
    let expected = 0.1 * 0.95 - 0.9 * 0.05;
    let r = json(dir.join("cells/tau=1_n=20/drift.json"));
    assert!((r["min"].as_f64().unwrap() - expected).abs() < 1e-12);
    assert_eq!(r["all_positive"], true);

    let dir = tmp.path().join("margin");
    let o = glauber(&[
        "margin",
        "--scorer",
        "ferromagnetic",
        "--set",
        "scorer.vocab_size=3",
        "--set",
        "scorer.strength=2",
        "--n",
        "4",
        "--tau",
        "0.5",
        "--set",
        "margin.exhaustive=true",
        "--set",
        "basin.kind=hamming_ball",
        "--set",
        "basin.center=[1,1,1,1]",
        "--set",
        "basin.radius=1",
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let m = json(dir.join("cells/n=4/margin.json"));
    // leaving the ball costs the ferromagnetic coupling of the second flipped site
    let margin = m["check"]["certified_margin"].as_f64().unwrap();
    assert!(margin > 0.0);
    let bound = &m["escape_bounds"][0];
    assert!((bound["per_step"].as_f64().unwrap() - 3.0 * (-margin / 0.5).exp()).abs() < 1e-12);
}
