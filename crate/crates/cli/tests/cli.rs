//! End-to-end checks of the `pushsync` binary.

use std::io::{BufRead, BufReader};
use std::net::TcpListener;
use std::path::Path;
use std::process::{Child, Command, Output, Stdio};
use std::thread;
use std::time::{Duration, Instant};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_pushsync"))
}

fn free_port() -> u16 {
    TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port()
}

/// Kills the child when dropped so a failing test leaves no process behind.
struct Guard(Child);

impl Drop for Guard {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

fn spawn(cmd: &mut Command) -> Guard {
    Guard(cmd.stdout(Stdio::piped()).stderr(Stdio::piped()).spawn().unwrap())
}

/// Waits for a stdout line containing `needle` and returns it.
fn wait_for_line(child: &mut Child, needle: &str) -> String {
    let out = child.stdout.take().unwrap();
    let (tx, rx) = std::sync::mpsc::channel();
    let needle = needle.to_owned();
    thread::spawn(move || {
        // keep draining so the child never writes to a closed pipe
        for line in BufReader::new(out).lines().map_while(Result::ok) {
            if line.contains(&needle) {
                let _ = tx.send(line);
            }
        }
    });
    rx.recv_timeout(Duration::from_secs(20)).expect("expected output line")
}

fn wait_exit(child: &mut Child, limit: Duration) -> std::process::ExitStatus {
    let start = Instant::now();
    loop {
        if let Some(status) = child.try_wait().unwrap() {
            return status;
        }
        assert!(start.elapsed() < limit, "process did not exit in {limit:?}");
        thread::sleep(Duration::from_millis(50));
    }
}

fn generate(dir: &Path, events: u64) {
    let conf = dir.join("small.conf");
    std::fs::write(
        &conf,
        format!("seed=3\ncycles=5\ntotal_events={events}\nbaseline_resources=50\ncategory_prob=0.2\n"),
    )
    .unwrap();
    let out = bin()
        .args(["generate", "--config", conf.to_str().unwrap(), "--data-dir"])
        .arg(dir.join("data"))
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains(&format!("wrote {events} events")));
}

#[test]
fn three_process_loopback_run() {
    let tmp = tempfile::tempdir().unwrap();
    generate(tmp.path(), 100);
    let (broker_addr, source_addr) = (
        format!("127.0.0.1:{}", free_port()),
        format!("127.0.0.1:{}", free_port()),
    );

    let mut broker = spawn(bin().args(["broker", "--addr", &broker_addr]));
    wait_for_line(&mut broker.0, "broker listening");

    let replica = tmp.path().join("replica");
    let mut dest = spawn(
        bin()
            .args([
                "dest",
                "--broker",
                &broker_addr,
                "--source",
                &source_addr,
                "--idle-exit-ms",
                "1500",
                "--workers",
                "2",
            ])
            .arg("--data-dir")
            .arg(&replica)
            .arg("--report")
            .arg(tmp.path().join("queue.csv")),
    );
    wait_for_line(&mut dest.0, "subscribed to dbpedia");

    let _source = spawn(
        bin()
            .args(["source", "--addr", &source_addr, "--broker", &broker_addr])
            .args(["--poll-interval-ms", "100", "--max-polls", "3", "--linger-ms", "20000"])
            .arg("--data-dir")
            .arg(tmp.path().join("data")),
    );
    let status = wait_exit(&mut dest.0, Duration::from_secs(40));
    assert!(status.success(), "dest failed: {status}");
    assert!(tmp.path().join("queue.csv").exists());

    let out = bin()
        .arg("diff")
        .arg("--data-dir")
        .arg(tmp.path().join("data"))
        .arg("--replica")
        .arg(&replica)
        .output()
        .unwrap();
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(out.status.success(), "{stdout}");
    assert!(stdout.contains("diff 0"), "{stdout}");
}

#[test]
fn occupied_port_fails_naming_the_address() {
    let held = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = held.local_addr().unwrap().to_string();
    let out = bin().args(["broker", "--addr", &addr]).output().unwrap();
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains(&addr));
}

#[test]
fn dest_without_broker_retries_then_fails() {
    let tmp = tempfile::tempdir().unwrap();
    let addr = format!("127.0.0.1:{}", free_port());
    let start = Instant::now();
    let out = bin()
        .args(["dest", "--broker", &addr, "--connect-timeout-ms", "800", "--data-dir"])
        .arg(tmp.path().join("replica"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains(&addr));
    assert!(
        start.elapsed() >= Duration::from_millis(300),
        "gave up without retrying"
    );
}

fn run_accuracy(report: &Path) -> Output {
    bin()
        .args([
            "run", "--preset", "accuracy", "--seed", "7", "--scale", "0.01", "--report",
        ])
        .arg(report)
        .output()
        .unwrap()
}

#[test]
fn accuracy_run_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let a = run_accuracy(&tmp.path().join("a.csv"));
    let b = run_accuracy(&tmp.path().join("b.csv"));
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    assert_eq!(a.stdout, b.stdout);
    let (ra, rb) = (
        std::fs::read(tmp.path().join("a.csv")).unwrap(),
        std::fs::read(tmp.path().join("b.csv")).unwrap(),
    );
    assert_eq!(ra, rb);
    assert_eq!(String::from_utf8_lossy(&ra).lines().count(), 1 + 20 * 2);
}

#[test]
fn usage_errors_exit_two() {
    let out = bin().args(["run", "--preset", "nope"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let out = bin()
        .args(["run", "--preset", "payload", "--scale", "-1"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn diff_reports_an_incomplete_replica() {
    let tmp = tempfile::tempdir().unwrap();
    generate(tmp.path(), 20);
    let empty = tmp.path().join("empty");
    std::fs::create_dir(&empty).unwrap();
    let out = bin()
        .arg("diff")
        .arg("--data-dir")
        .arg(tmp.path().join("data"))
        .arg("--replica")
        .arg(&empty)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stdout).contains("missing"));
}
