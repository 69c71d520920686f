use std::process::Command;

fn dmh(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_dmh"))
        .args(args)
        .output()
        .expect("binary runs")
}

#[test]
fn binary_maps_errors_to_exit_codes() {
    assert_eq!(dmh(&["--help"]).status.code(), Some(0));
    let usage = dmh(&["frobnicate"]);
    assert_eq!(usage.status.code(), Some(64));
    assert!(String::from_utf8_lossy(&usage.stderr).contains("Usage"));
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("missing.ckpt");
    let io = dmh(&["eval", "--checkpoint", missing.to_str().unwrap(), "--manifest", "m.jsonl"]);
    assert_eq!(io.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&io.stderr).starts_with("error: "));
}

#[test]
fn gradcheck_exit_status_follows_the_verdict() {
    let ok = dmh(&["gradcheck", "--seed", "3"]);
    assert_eq!(ok.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&ok.stdout).contains("gradcheck passed"));
    assert_eq!(dmh(&["gradcheck", "--seed", "3", "--inject-sign-flip"]).status.code(), Some(1));
}
