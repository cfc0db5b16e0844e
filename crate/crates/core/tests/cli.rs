use std::path::PathBuf;
use std::process::Command;

const BIN: &str = env!("CARGO_BIN_EXE_magweyl");

const SMALL: &str = "\
grid.L = 6
grid.n = 16
grid.q_L = 2
grid.q_n = 2
wave.L = 1.5
wave.n = 16
hbar.ladder = 3
quad.order = 12
";

const SUBCOMMANDS: [&str; 8] = ["flux", "cocycle-check", "product", "poisson-check", "quantize", "gauge-check", "converge", "rieffel"];

fn scratch(name: &str) -> PathBuf {
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("cli");
    std::fs::create_dir_all(&dir).unwrap();
    dir.join(name)
}

fn write_config(name: &str, text: &str) -> PathBuf {
    let path = scratch(name);
    std::fs::write(&path, text).unwrap();
    path
}

fn run(config: &PathBuf, out: &PathBuf, subcommand: &str) -> i32 {
    run_with_threads(config, out, subcommand, 1)
}

fn run_with_threads(config: &PathBuf, out: &PathBuf, subcommand: &str, threads: usize) -> i32 {
    Command::new(BIN)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .arg(subcommand)
        .env("MAGWEYL_THREADS", threads.to_string())
        .output()
        .unwrap()
        .status
        .code()
        .unwrap()
}

#[test]
fn repeated_runs_write_identical_csv() {
    let config = write_config("determinism.cfg", SMALL);
    for sub in SUBCOMMANDS {
        let first = scratch(&format!("{sub}.1.csv"));
        let second = scratch(&format!("{sub}.2.csv"));
        let a = run(&config, &first, sub);
        // a different thread count must not change a single bit
        let b = run_with_threads(&config, &second, sub, 3);
        assert_eq!(a, b, "{sub}");
        assert!(a == 0 || a == 1, "{sub} exited with {a}");
        let (x, y) = (std::fs::read(&first).unwrap(), std::fs::read(&second).unwrap());
        assert!(!x.is_empty(), "{sub}");
        assert_eq!(x, y, "{sub} output differs between runs");
    }
}

#[test]
fn csv_header_carries_the_configuration() {
    let config = write_config("header.cfg", SMALL);
    let out = scratch("header.csv");
    assert_eq!(run(&config, &out, "flux"), 0);
    let text = std::fs::read_to_string(&out).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("# magweyl "));
    assert!(lines.next().unwrap().starts_with("# config_sha256="));
    assert!(text.contains("# config grid.n = 16\n"));
    assert!(text.contains("\ndraw,flux,circulation,stokes_residual\n"));
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let status = Command::new(BIN).arg("frobnicate").output().unwrap().status;
    assert_eq!(status.code(), Some(2));
}

#[test]
fn invalid_configuration_is_a_usage_error() {
    let config = write_config("bad.cfg", "grid.n = 31\nbogus = 1\n");
    let output = Command::new(BIN).arg("--config").arg(&config).arg("flux").output().unwrap();
    assert_eq!(output.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("grid.n"), "{stderr}");
    assert!(stderr.contains("bogus"), "{stderr}");
}

#[test]
fn violated_invariant_exits_with_one() {
    let config = write_config("tight.cfg", "cocycle.tolerance = 1e-300\ncocycle.draws = 5\n");
    let out = scratch("tight.csv");
    assert_eq!(run(&config, &out, "cocycle-check"), 1);
    let text = std::fs::read_to_string(&out).unwrap();
    assert!(text.contains("# violated cocycle_identity"), "{text}");
}

#[test]
fn plots_are_written_next_to_the_csv() {
    let config = write_config("plots.cfg", &format!("{SMALL}output.plots = true\n"));
    let out = scratch("plots.csv");
    assert_eq!(run(&config, &out, "converge"), 0);
    let svgs: Vec<_> = std::fs::read_dir(out.parent().unwrap())
        .unwrap()
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.starts_with("plots.") && n.ends_with(".svg"))
        .collect();
    assert!(!svgs.is_empty());
}
