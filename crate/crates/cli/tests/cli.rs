use std::fs;
use std::net::UdpSocket;
use std::path::Path;
use std::process::{Command, Output};
use std::thread;

use serde_json::Value;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_chokepoint"));
    c.env_remove("CHOKEPOINT_CONFIG");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn error_json(o: &Output) -> Value {
    let text = String::from_utf8_lossy(&o.stderr);
    let last = text.lines().last().unwrap_or_default();
    serde_json::from_str(last).unwrap_or_else(|_| panic!("stderr is not JSON: {text}"))
}

fn synth(dir: &Path, extra: &[&str]) -> String {
    let d = dir.to_str().unwrap();
    let mut args = vec!["synth", "--out", d, "--size", "150", "--country", "IN=0.6", "--country", "PK=0.3"];
    args.extend_from_slice(extra);
    let o = run(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    dir.join("synth").to_string_lossy().into_owned()
}

fn report(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let o = run(&["infer", "--no-such-flag"]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(error_json(&o)["error"]["kind"], "usage");
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}

#[test]
fn failures_emit_json_and_nonzero_exit() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().to_str().unwrap();
    let o = run(&["infer", "--out", out]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(error_json(&o)["error"]["kind"], "input");

    let o = run(&["infer", "--relationships", "/nonexistent/rel.txt", "--out", out]);
    assert_eq!(error_json(&o)["error"]["kind"], "config");

    let bad = tmp.path().join("rel.txt");
    fs::write(&bad, "1|2|-1\n1|x|0\n").unwrap();
    let o = run(&["infer", "--relationships", bad.to_str().unwrap(), "--out", out]);
    assert_eq!(o.status.code(), Some(1));
    let e = error_json(&o);
    assert_eq!(e["error"]["kind"], "ingest");
    assert!(e["error"]["message"].as_str().unwrap().contains("line 2"));

    let o = run(&["rank-as", "--threshold", "1.2", "--out", out]);
    assert_eq!(error_json(&o)["error"]["kind"], "config");
}

#[test]
fn oracle_check_reports_agreement() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(&["oracle-check", "--seed", "7", "--trials", "100", "--out", tmp.path().to_str().unwrap()]);
    assert!(o.status.success());
    assert!(stdout(&o).starts_with("100/100 agree"), "{}", stdout(&o));
    let r = report(&tmp.path().join("oracle-check/report.json"));
    assert_eq!(r["result"]["agree"], 100);
}

#[test]
fn reports_carry_stamp_and_rounded_curves() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synth(&tmp.path().join("d"), &[]);
    let out = tmp.path().join("o");
    let o = run(&["rank-as", "--threshold", "0.95", "--data-dir", &data, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let dir = out.join("rank-as");
    let r = report(&dir.join("report.json"));
    assert_eq!(r["command"], "rank-as");
    assert_eq!(r["version"], env!("CARGO_PKG_VERSION"));
    assert_eq!(r["config_hash"].as_str().unwrap().len(), 64);
    for role in ["relationships", "known_paths", "prefix_origins", "countries", "targets"] {
        assert_eq!(r["datasets"][role].as_str().unwrap().len(), 64, "{role}");
    }
    let sel = &r["result"]["selection"];
    assert!(sel["coverage"].as_f64().unwrap() >= 0.95);
    let csv = fs::read_to_string(dir.join("cdf.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("k,asn,cumulative_fraction"));
    let rows: Vec<&str> = lines.collect();
    assert!(!rows.is_empty());
    for row in &rows {
        let f = row.rsplit(',').next().unwrap();
        assert_eq!(f.split('.').nth(1).map(str::len), Some(4), "{row}");
    }
    assert_eq!(rows.last().unwrap().rsplit(',').next(), Some("1.0000"));
    assert!(dir.join("run-info.json").exists());
    let k = sel["ases"].as_array().unwrap().len();
    assert!(stdout(&o).starts_with(&format!("{k} ASes cover")));
}

#[test]
fn config_file_env_fallback_and_flag_precedence() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synth(&tmp.path().join("d"), &[]);
    let conf = tmp.path().join("run.conf");
    fs::write(&conf, format!("# test run\ndata_dir = {data}\nthreshold = 0.5\nout = reports\n")).unwrap();

    let o = bin().env("CHOKEPOINT_CONFIG", &conf).args(["rank-as"]).output().unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let from_env = report(&tmp.path().join("reports/rank-as/report.json"));
    assert_eq!(from_env["result"]["selection"]["threshold"], 0.5);

    let out = tmp.path().join("flags");
    let o = run(&["rank-as", "--config", conf.to_str().unwrap(), "--threshold", "0.9", "--out", out.to_str().unwrap()]);
    assert!(o.status.success());
    let flagged = report(&out.join("rank-as/report.json"));
    assert_eq!(flagged["result"]["selection"]["threshold"], 0.9);
    assert_ne!(flagged["config_hash"], from_env["config_hash"]);
    assert_eq!(flagged["datasets"], from_env["datasets"]);

    fs::write(&conf, "colour = blue\n").unwrap();
    let o = run(&["rank-as", "--config", conf.to_str().unwrap()]);
    assert_eq!(error_json(&o)["error"]["kind"], "config");
}

#[test]
fn same_inputs_give_identical_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synth(&tmp.path().join("d"), &[]);
    let cmds: [&[&str]; 7] = [
        &["infer"],
        &["coverage"],
        &["collateral"],
        &["routers"],
        &["dns-coverage"],
        &["hijack", "rank", "--top", "4"],
        &["ingest", "validate"],
    ];
    for (i, cmd) in cmds.iter().enumerate() {
        let mut seen = Vec::new();
        for run_dir in ["a", "b"] {
            let out = tmp.path().join(run_dir);
            let mut args = cmd.to_vec();
            args.extend(["--data-dir", &data, "--out", out.to_str().unwrap(), "--jobs", if run_dir == "a" { "1" } else { "3" }]);
            let o = run(&args);
            assert!(o.status.success(), "{cmd:?}: {}", String::from_utf8_lossy(&o.stderr));
            seen.push(out);
        }
        let dir_of = |root: &Path| {
            let cmd_dir = match cmd[0] {
                "hijack" => "hijack-rank",
                "ingest" => "ingest-validate",
                c => c,
            };
            root.join(cmd_dir)
        };
        for f in fs::read_dir(dir_of(&seen[0])).unwrap() {
            let f = f.unwrap().path();
            let name = f.file_name().unwrap().to_owned();
            if name == "run-info.json" {
                continue;
            }
            let other = dir_of(&seen[1]).join(&name);
            assert_eq!(fs::read(&f).unwrap(), fs::read(&other).unwrap(), "cmd {i}: {name:?}");
        }
    }
}

#[test]
fn hijack_single_attacker() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synth(&tmp.path().join("d"), &["--n-targets", "1"]);
    let out = tmp.path().join("o");
    let o = run(&["hijack", "--attacker", "1", "--data-dir", &data, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r = report(&out.join("hijack/report.json"));
    let outcome = &r["result"]["outcome"];
    let poisoned = outcome["poisoned"].as_object().unwrap();
    let counts = &outcome["counts"];
    let sum = counts["home"].as_u64().unwrap() + counts["foreign"].as_u64().unwrap() + counts["unknown"].as_u64().unwrap();
    assert_eq!(sum as usize, poisoned.len());
    assert!(!poisoned.contains_key("1"));
    let csv = fs::read_to_string(out.join("hijack/poisoned.csv")).unwrap();
    assert_eq!(csv.lines().count(), poisoned.len() + 1);

    let o = run(&["hijack", "--attacker", "1", "--claimed-path", "2,1", "--data-dir", &data]);
    assert_eq!(error_json(&o)["error"]["kind"], "analysis");
}

#[test]
fn probe_dns_through_the_cli() {
    let sock = UdpSocket::bind("127.0.0.1:0").unwrap();
    let port = sock.local_addr().unwrap().port();
    thread::spawn(move || {
        let mut buf = [0u8; 512];
        while let Ok((n, peer)) = sock.recv_from(&mut buf) {
            let mut reply = buf[..n].to_vec();
            reply[2] |= 0x80;
            reply[3] |= 0x80;
            reply[7] = 1;
            reply.extend_from_slice(&[0xC0, 12, 0, 1, 0, 1, 0, 0, 0, 60, 0, 4, 192, 0, 2, 1]);
            let _ = sock.send_to(&reply, peer);
        }
    });
    let closed = UdpSocket::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let tmp = tempfile::tempdir().unwrap();
    let list = tmp.path().join("addrs.txt");
    fs::write(&list, format!("127.0.0.1:{port}\n127.0.0.1:{closed}\n")).unwrap();
    let out = tmp.path().join("o");
    let o = run(&[
        "probe", "dns", "--addresses", list.to_str().unwrap(), "--timeout-ms", "300", "--rate", "0", "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let lines = fs::read_to_string(out.join("probe-dns/results.txt")).unwrap();
    let lines: Vec<&str> = lines.lines().collect();
    assert!(lines[0].starts_with("127.0.0.1|open|"));
    assert!(lines[1].starts_with("127.0.0.1|closed|"));
    let r = report(&out.join("probe-dns/report.json"));
    assert_eq!(r["result"]["counts"]["open"], 1);
    assert!(r["datasets"]["addresses"].is_string());
}
