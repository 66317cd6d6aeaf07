//! End-to-end command-line checks: artifact layout and exit codes
//! (0 success, 1 check/eval failure, 2 usage/config error).

use std::path::PathBuf;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_crowdnav"))
}

fn temp_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("crowdnav_cli_{tag}"));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

#[test]
fn unknown_encoder_is_a_usage_error() {
    let out = bin()
        .args(["train", "--encoder", "transformer", "--episodes", "0"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("run.encoder"), "{stderr}");
}

#[test]
fn unknown_subcommand_flag_is_a_usage_error() {
    let out = bin().args(["train", "--bogus-flag"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_oracle_suite_is_a_usage_error() {
    let out = bin().args(["oracle", "nonsense"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn oracle_reward_suite_passes_with_exit_zero() {
    let out = bin().args(["oracle", "reward"]).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("[PASS]"), "{stdout}");
}

#[test]
fn render_missing_file_fails_with_exit_one() {
    let out = bin()
        .args(["render", "/nonexistent/trajectory.csv"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn render_malformed_csv_reports_the_line() {
    let dir = temp_dir("render_bad");
    let csv = dir.join("bad.csv");
    std::fs::write(&csv, "episode,step,agent_id,x,y,vx,vy\n0,0,0,1,2,3\n").unwrap();
    let out = bin()
        .arg("render")
        .arg(&csv)
        .arg("--out")
        .arg(dir.join("out.svg"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("line 2"), "{stderr}");
}

#[test]
fn train_eval_inspect_render_round_trip() {
    let dir = temp_dir("round_trip");
    let run_dir = dir.join("run");

    // Zero-episode training still writes the initial checkpoint, config, an
    // empty (header-only) CSV, and the curve.
    let out = bin()
        .args(["train", "--episodes", "0", "--seed", "3", "--obstacles", "2"])
        .arg("--out")
        .arg(&run_dir)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(run_dir.join("resolved_config.toml").exists());
    assert!(run_dir.join("reward_curve.svg").exists());
    let csv = std::fs::read_to_string(run_dir.join("training_log.csv")).unwrap();
    assert_eq!(
        csv.trim(),
        "episode,steps,cum_reward,outcome,alpha,critic_loss,policy_loss,buffer_size"
    );
    let ckpt = run_dir.join("ckpt_final.ckpt");
    assert!(ckpt.exists());

    // Evaluate the untrained checkpoint; artifacts land in the out dir.
    let eval_dir = dir.join("eval");
    let out = bin()
        .args(["eval", "--episodes", "3", "--seed", "3", "--obstacles", "2"])
        .arg("--checkpoint")
        .arg(&ckpt)
        .arg("--out")
        .arg(&eval_dir)
        .arg("--trajectories")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(eval_dir.join("eval_episodes.csv").exists());
    assert!(eval_dir.join("eval_summary.csv").exists());
    let traj = eval_dir.join("trajectories.csv");
    assert!(traj.exists());

    // Render the dumped trajectories.
    let svg = dir.join("render.svg");
    let out = bin()
        .arg("render")
        .arg(&traj)
        .arg("--out")
        .arg(&svg)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let svg_text = std::fs::read_to_string(&svg).unwrap();
    assert!(svg_text.contains("<polyline"));

    // Inspect works on the attention checkpoint.
    let inspect_dir = dir.join("inspect");
    let out = bin()
        .args(["inspect", "--episode-seed", "4", "--seed", "3", "--obstacles", "2"])
        .arg("--checkpoint")
        .arg(&ckpt)
        .arg("--out")
        .arg(&inspect_dir)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(inspect_dir.join("attention.csv").exists());
    assert!(inspect_dir.join("inspect_trajectory.svg").exists());

    // Wrong encoder against the checkpoint: refusal naming both identities.
    let out = bin()
        .args(["eval", "--encoder", "rg", "--episodes", "1", "--obstacles", "2"])
        .arg("--checkpoint")
        .arg(&ckpt)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("lsa") && stderr.contains("rg"), "{stderr}");
}

#[test]
fn inspect_refuses_graph_checkpoints() {
    let dir = temp_dir("inspect_rg");
    let run_dir = dir.join("run");
    let out = bin()
        .args(["train", "--episodes", "0", "--encoder", "rg", "--seed", "8"])
        .arg("--out")
        .arg(&run_dir)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let out = bin()
        .args(["inspect", "--encoder", "rg"])
        .arg("--checkpoint")
        .arg(run_dir.join("ckpt_final.ckpt"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("no attention scores"), "{stderr}");
}

#[test]
fn square_scenario_evaluates_a_circle_trained_checkpoint() {
    // The transferability path: train on the circle (zero episodes for
    // speed), evaluate the same checkpoint on the square crossing.
    let dir = temp_dir("transfer");
    let run_dir = dir.join("run");
    let out = bin()
        .args(["train", "--episodes", "0", "--seed", "2", "--scenario", "circle"])
        .arg("--out")
        .arg(&run_dir)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let out = bin()
        .args(["eval", "--episodes", "2", "--seed", "2", "--scenario", "square"])
        .arg("--checkpoint")
        .arg(run_dir.join("ckpt_final.ckpt"))
        .arg("--out")
        .arg(dir.join("eval_square"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
}
