use std::os::unix::fs::PermissionsExt;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_satstereo"))
}

fn run(cmd: &mut Command) -> Output {
    let out = cmd.output().expect("binary runs");
    if !out.status.success() {
        eprintln!("stderr: {}", String::from_utf8_lossy(&out.stderr));
    }
    out
}

/// A synthetic scene written once by `synth-scene`.
fn scene() -> &'static PathBuf {
    static DIR: OnceLock<PathBuf> = OnceLock::new();
    DIR.get_or_init(|| {
        let dir = tempfile::Builder::new()
            .prefix("cli-scene-")
            .tempdir_in(env!("CARGO_TARGET_TMPDIR"))
            .unwrap()
            .keep();
        let out = run(bin().args(["synth-scene", "--out"]).arg(&dir));
        assert!(out.status.success());
        dir
    })
}

fn script(path: &Path, body: &str) -> PathBuf {
    std::fs::write(path, format!("#!/bin/sh\n{body}\n")).unwrap();
    std::fs::set_permissions(path, std::fs::Permissions::from_mode(0o755)).unwrap();
    path.to_path_buf()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

#[test]
fn run_writes_dsm_manifest_and_report() {
    let dir = scene();
    let out_dir = dir.join("run-out");
    let out = run(bin()
        .arg("run")
        .arg("-c")
        .arg(dir.join("config.toml"))
        .arg("--output-dir")
        .arg(&out_dir)
        .arg("--save-intermediates"));
    assert_eq!(code(&out), 0);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("DSM "), "{stdout}");
    assert!(stdout.contains("overall"), "{stdout}");
    for f in ["dsm.pfm", "dsm.pfm.geo", "manifest.json", "report.jsonl", "disparity.pfm", "rectified_left.pfm"] {
        assert!(out_dir.join(f).exists(), "{f}");
    }
    let m: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["config"]["save_intermediates"], true);
}

#[test]
fn stage_commands_chain_into_a_dsm() {
    let dir = scene();
    let st = dir.join("stages");
    let cfg = dir.join("config.toml");
    assert_eq!(code(&run(bin().arg("rectify").arg("-c").arg(&cfg).arg("--out").arg(&st))), 0);
    let rect = st.join("rectification.json");
    assert_eq!(
        code(&run(bin()
            .arg("match")
            .arg("--left")
            .arg(st.join("rectified_left.pfm"))
            .arg("--right")
            .arg(st.join("rectified_right.pfm"))
            .arg("--rectification")
            .arg(&rect)
            .arg("--out")
            .arg(st.join("disp.pfm")))),
        0
    );
    assert_eq!(
        code(&run(bin()
            .arg("triangulate")
            .arg("-c")
            .arg(&cfg)
            .arg("--disparity")
            .arg(st.join("disp.pfm"))
            .arg("--rectification")
            .arg(&rect)
            .arg("--out")
            .arg(st.join("points.txt")))),
        0
    );
    assert_eq!(
        code(&run(bin()
            .arg("dsm")
            .arg("--points")
            .arg(st.join("points.txt"))
            .arg("-c")
            .arg(&cfg)
            .arg("--out")
            .arg(st.join("dsm.pfm")))),
        0
    );
    let out = run(bin()
        .arg("eval")
        .arg("--dsm")
        .arg(st.join("dsm.pfm"))
        .arg("--gt")
        .arg(dir.join("gt_dsm.pfm"))
        .arg("--out")
        .arg(st.join("report.jsonl")));
    assert_eq!(code(&out), 0);
    let first = std::fs::read_to_string(st.join("report.jsonl")).unwrap();
    let overall: serde_json::Value = serde_json::from_str(first.lines().next().unwrap()).unwrap();
    assert_eq!(overall["scope"], "overall");
    assert!(overall["valid_pct"].as_f64().unwrap() > 90.0, "{overall}");
    assert!(overall["mae"].as_f64().unwrap() < 0.5, "{overall}");
}

#[test]
fn exit_codes() {
    let dir = scene();
    let cfg = dir.join("config.toml");
    // usage error
    assert_eq!(code(&run(bin().arg("frobnicate"))), 2);
    // invalid config value
    let out = run(bin()
        .arg("run")
        .arg("-c")
        .arg(&cfg)
        .args(["--set", "tile_overlap=2000"]));
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("tile_overlap"));
    // unknown config key
    assert_eq!(code(&run(bin().arg("run").arg("-c").arg(&cfg).args(["--set", "speed=11"]))), 2);
    // unreadable input
    let out = run(bin().args(["match", "--left", "/nonexistent.pfm", "--right", "/nonexistent.pfm", "--dmin", "0", "--dmax", "4", "--out", "/tmp/x.pfm"]));
    assert_eq!(code(&out), 3);
    // failing adapter
    let fail = script(&dir.join("fail.sh"), "echo 'no GPU available' >&2\nexit 1");
    let out = run(bin()
        .arg("match")
        .arg("--left")
        .arg(dir.join("left.pfm"))
        .arg("--right")
        .arg(dir.join("right.pfm"))
        .args(["--dmin", "-4", "--dmax", "4", "--external"])
        .arg(&fail)
        .arg("--out")
        .arg(dir.join("never.pfm")));
    assert_eq!(code(&out), 4);
    assert!(String::from_utf8_lossy(&out.stderr).contains("no GPU available"));
}

#[test]
fn scratch_directory_comes_from_the_environment() {
    let dir = scene();
    let scratch = dir.join("scratch-root");
    std::fs::create_dir_all(&scratch).unwrap();
    let log = dir.join("scratch-log.txt");
    let echo = script(
        &dir.join("echo.sh"),
        &format!("dirname \"$1\" > {}\ncp \"$1\" \"$5\"", log.display()),
    );
    let out = run(bin()
        .env("SATSTEREO_SCRATCH", &scratch)
        .arg("match")
        .arg("--left")
        .arg(dir.join("left.pfm"))
        .arg("--right")
        .arg(dir.join("left.pfm"))
        .args(["--dmin", "0", "--dmax", "2", "--no-lr", "--external"])
        .arg(&echo)
        .arg("--out")
        .arg(dir.join("echo.pfm")));
    assert_eq!(code(&out), 0);
    let used = PathBuf::from(std::fs::read_to_string(&log).unwrap().trim());
    assert!(used.starts_with(&scratch), "{used:?}");
}

#[test]
fn classify_pairs_from_metadata() {
    let dir = scene();
    let meta = dir.join("pairs.json");
    std::fs::write(
        &meta,
        r#"[{"id_1": "a", "id_2": "b", "baseline_angle": 20, "incidence_1": 25, "incidence_2": 30},
            {"id_1": "c", "id_2": "d", "baseline_angle": 3, "incidence_1": 25, "incidence_2": 30}]"#,
    )
    .unwrap();
    let out = run(bin().arg("classify-pairs").arg("--metadata").arg(&meta));
    assert_eq!(code(&out), 0);
    let text = String::from_utf8_lossy(&out.stdout);
    let lines: Vec<&str> = text.lines().collect();
    assert!(lines[0].starts_with("a\tb\tfavorable"), "{text}");
    assert!(lines[1].starts_with("c\td\tchallenging"), "{text}");

    std::fs::write(&meta, r#"[{"id_1": "a", "id_2": "b", "incidence_1": 25, "incidence_2": 30}]"#).unwrap();
    assert_eq!(code(&run(bin().arg("classify-pairs").arg("--metadata").arg(&meta))), 2);

    let out = run(bin().arg("classify-pairs").arg("--estimate").arg("-c").arg(dir.join("config.toml")));
    assert_eq!(code(&out), 0);
    assert!(String::from_utf8_lossy(&out.stdout).contains("favorable\tbaseline 22.00"));
}
