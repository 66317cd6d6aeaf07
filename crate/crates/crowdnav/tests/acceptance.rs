//! Acceptance suite: one test per acceptance criterion, each printing a
//! pass/fail line with its tolerance.
//!
//! Criteria 7 and 8 train for hours and are `#[ignore]`d from the default
//! run; execute them explicitly:
//!
//! ```text
//! cargo test --release --test acceptance -- --ignored --nocapture
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crowdnav::diffcore::{deserialize_params, serialize_params, ParameterStore, Tape};
use crowdnav::dsac::{Dsac, DsacConfig};
use crowdnav::encoders::{
    AttentionVariant, CrowdEncoder, EncoderKind, IdentityEncoder, StateEncoder,
};
use crowdnav::harness::{
    cmd_eval, cmd_inspect, cmd_train, moving_average, run_suite, OracleCheck, OracleSuite,
    RunConfig, SoftViOracle, TabularMdp,
};
use crowdnav::scalar::Scalar;

fn report(criterion: &str, check: &OracleCheck) {
    println!(
        "[{}] criterion {criterion}: {} (tolerance {}) — {}",
        if check.pass { "PASS" } else { "FAIL" },
        check.name,
        check.tolerance,
        check.detail
    );
    assert!(check.pass, "criterion {criterion} failed: {}", check.detail);
}

fn line(criterion: &str, pass: bool, what: &str, detail: String) {
    println!(
        "[{}] criterion {criterion}: {what} — {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "criterion {criterion} failed: {detail}");
}

fn temp_dir(tag: &str) -> std::path::PathBuf {
    let dir = std::env::temp_dir().join(format!("crowdnav_accept_{tag}"));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

#[test]
fn criterion_01_gradient_oracle() {
    // Finite differences (step 1e-5) within relative error 1e-4 on 64 random
    // coordinates for each encoder + critic head and + policy head.
    let started = std::time::Instant::now();
    for check in run_suite(OracleSuite::Grad).unwrap() {
        report("1", &check);
    }
    let elapsed = started.elapsed();
    line(
        "1",
        elapsed.as_secs() < 120,
        "gradient oracle runtime",
        format!("{:.1} s (budget 120 s)", elapsed.as_secs_f64()),
    );
}

#[test]
fn criterion_02_tabular_soft_q_oracle() {
    // DSAC at fixed temperature converges to the soft value iteration fixed
    // point (iterated to 1e-10) within 1e-2 on a 3-state, 2-action MDP.
    let started = std::time::Instant::now();
    for check in run_suite(OracleSuite::Tabular).unwrap() {
        report("2", &check);
    }
    let elapsed = started.elapsed();
    line(
        "2",
        elapsed.as_secs() < 300,
        "tabular oracle runtime",
        format!("{:.1} s (budget 300 s)", elapsed.as_secs_f64()),
    );
}

#[test]
fn criterion_03_reward_equivalence() {
    // Implementation matches an independently written piecewise oracle
    // exactly on 100000 randomized inputs covering every branch >= 1000
    // times.
    for check in run_suite(OracleSuite::Reward).unwrap() {
        report("3", &check);
    }
}

#[test]
fn criterion_04_orca_safety() {
    // Two-agent head-on crossings stay violation-free in 100 of 100 seeds;
    // four agents on a circle with antipodal goals in at least 95 of 100.
    let started = std::time::Instant::now();
    for check in run_suite(OracleSuite::Orca).unwrap() {
        report("4", &check);
    }
    let elapsed = started.elapsed();
    line(
        "4",
        elapsed.as_secs() < 60,
        "collision-avoidance runtime",
        format!("{:.1} s (budget 60 s)", elapsed.as_secs_f64()),
    );
}

#[test]
fn criterion_05_injectivity_witness() {
    // Sum pooling collapses the equal-sum multisets {3,1} and {2,2} exactly;
    // LSTM pooling separates them for >= 19 of 20 random initializations.
    for check in run_suite(OracleSuite::Inject).unwrap() {
        report("5", &check);
    }
}

#[test]
fn criterion_06_attention_validity() {
    // Every emitted attention row set sums to 1 within 1e-9, and a lone
    // obstacle always carries weight exactly 1.
    let dir = temp_dir("attention");
    let mut cfg = RunConfig::default();
    cfg.run.out_dir = dir.join("train").display().to_string();
    cfg.run.episodes = 0;
    cfg.run.n_obstacles = 4;
    cfg.run.seed = 11;
    let trained = cmd_train(&cfg).unwrap();

    let inspect_dir = dir.join("inspect");
    let out = cmd_inspect(&cfg, &trained.final_checkpoint, 5, Some(&inspect_dir)).unwrap();
    assert!(!out.rows.is_empty());
    let mut per_step: std::collections::BTreeMap<usize, Scalar> = Default::default();
    for row in &out.rows {
        *per_step.entry(row.step).or_insert(0.0) += row.weight;
    }
    let worst = per_step
        .values()
        .map(|total| (total - 1.0).abs())
        .fold(0.0, Scalar::max);
    line(
        "6",
        worst < 1e-9,
        "multi-obstacle weight rows sum to one",
        format!("worst |sum - 1| = {worst:.3e} over {} steps", per_step.len()),
    );

    // Single obstacle: weight exactly one on every row.
    let mut cfg1 = cfg.clone();
    cfg1.run.n_obstacles = 1;
    cfg1.run.out_dir = dir.join("train1").display().to_string();
    let trained1 = cmd_train(&cfg1).unwrap();
    let out1 = cmd_inspect(&cfg1, &trained1.final_checkpoint, 5, None).unwrap();
    let all_exact = !out1.rows.is_empty() && out1.rows.iter().all(|r| r.weight == 1.0);
    line(
        "6",
        all_exact,
        "single-obstacle weights are exactly one",
        format!("{} rows checked", out1.rows.len()),
    );
}

/// Desk-scale learning run shared by criteria 7. Trains the LSTM-pooled
/// skip-attention encoder for 2000 one-obstacle episodes.
#[test]
#[ignore = "trains for on the order of an hour; run explicitly"]
fn criterion_07_desk_scale_learning() {
    let dir = temp_dir("desk_scale");
    let mut cfg = RunConfig::default();
    cfg.run.out_dir = dir.display().to_string();
    cfg.run.encoder = "lsa".to_string();
    cfg.run.n_obstacles = 1;
    cfg.run.episodes = 2000;
    cfg.run.seed = 7;

    let started = std::time::Instant::now();
    let trained = cmd_train(&cfg).unwrap();
    let train_secs = started.elapsed().as_secs_f64();

    let eval = cmd_eval(&cfg, &trained.final_checkpoint, 100, None, false).unwrap();
    line(
        "7",
        eval.summary.success_rate >= 0.8,
        "greedy success rate after 2000 episodes >= 0.8",
        format!(
            "success {:.3}, collision {:.3}, timeout {:.3} over 100 episodes",
            eval.summary.success_rate, eval.summary.collision_rate, eval.summary.timeout_rate
        ),
    );

    // Moving-average reward: final quintile above the first quintile.
    let rewards: Vec<Scalar> = trained.logs.iter().map(|l| l.cum_reward).collect();
    let ma = moving_average(&rewards, 100);
    let quintile = rewards.len() / 5;
    let mean_of = |slice: &[Option<Scalar>]| -> Scalar {
        let vals: Vec<Scalar> = slice.iter().filter_map(|v| *v).collect();
        vals.iter().sum::<Scalar>() / vals.len().max(1) as Scalar
    };
    let first = mean_of(&ma[..quintile]);
    let last = mean_of(&ma[rewards.len() - quintile..]);
    line(
        "7",
        last > first,
        "final-quintile moving-average reward above first quintile",
        format!("first {first:.4}, final {last:.4}"),
    );
    // Runtime is a target rather than a gate for this criterion; report it.
    println!(
        "[{}] criterion 7: training runtime — {train_secs:.0} s (target < 7200 s)",
        if train_secs < 7200.0 { "PASS" } else { "NOTE" }
    );
}

/// Encoder-ordering report at 2 obstacles, 5000 episodes, 3 seeds per
/// variant. Non-gating by design: seed variance at this scale can invert the
/// ordering, so the test reports and asserts only that the grid ran.
#[test]
#[ignore = "trains nine runs of 5000 episodes; multi-day on a small machine"]
fn criterion_08_ordering_report() {
    let dir = temp_dir("ordering");
    let mut results: Vec<(String, u64, Scalar)> = Vec::new();
    for encoder in ["aw", "sa", "lsa"] {
        for seed in [1u64, 2, 3] {
            let mut cfg = RunConfig::default();
            cfg.run.encoder = encoder.to_string();
            cfg.run.n_obstacles = 2;
            cfg.run.episodes = 5000;
            cfg.run.seed = seed;
            cfg.run.out_dir = dir.join(format!("{encoder}_s{seed}")).display().to_string();
            let trained = cmd_train(&cfg).unwrap();
            let rewards: Vec<Scalar> = trained.logs.iter().map(|l| l.cum_reward).collect();
            let ma = moving_average(&rewards, 100);
            let converged = ma
                .iter()
                .rev()
                .take(500)
                .filter_map(|v| *v)
                .collect::<Vec<Scalar>>();
            let mean = converged.iter().sum::<Scalar>() / converged.len().max(1) as Scalar;
            println!(
                "[REPORT] criterion 8: {encoder} seed {seed}: converged moving-average reward {mean:.4}"
            );
            results.push((encoder.to_string(), seed, mean));
        }
    }
    let mean_for = |enc: &str| -> Scalar {
        let vals: Vec<Scalar> = results
            .iter()
            .filter(|(e, _, _)| e == enc)
            .map(|(_, _, m)| *m)
            .collect();
        vals.iter().sum::<Scalar>() / vals.len() as Scalar
    };
    let (aw, sa, lsa) = (mean_for("aw"), mean_for("sa"), mean_for("lsa"));
    println!(
        "[REPORT] criterion 8: converged reward means — aw {aw:.4}, sa {sa:.4}, lsa {lsa:.4}; \
         expected ordering lsa >= aw (non-gating; seed variance can invert it at this scale)"
    );
    line(
        "8",
        results.len() == 9,
        "ordering report grid completed",
        format!("{} runs", results.len()),
    );
}

#[test]
fn criterion_09_training_determinism() {
    // Identical config and seed twice: byte-identical 50-episode training
    // CSVs.
    let run = |tag: &str| -> Vec<u8> {
        let dir = temp_dir(tag);
        let mut cfg = RunConfig::default();
        cfg.run.out_dir = dir.display().to_string();
        cfg.run.episodes = 50;
        cfg.run.seed = 1234;
        cfg.run.n_obstacles = 1;
        let out = cmd_train(&cfg).unwrap();
        std::fs::read(out.training_csv).unwrap()
    };
    let a = run("det_a");
    let b = run("det_b");
    line(
        "9",
        a == b,
        "two seeded runs produce byte-identical training CSVs",
        format!("{} bytes compared", a.len()),
    );
}

#[test]
fn criterion_10_checkpoint_integrity() {
    // Serialize, deserialize, and compare head outputs on 100 random encoded
    // states: exact equality.
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let encoder = CrowdEncoder::new(EncoderKind::Attention(AttentionVariant::Lsa), 2);
    let agent = Dsac::new(
        encoder,
        crowdnav::simulator::ACTION_COUNT,
        DsacConfig::default(),
        &mut rng,
    )
    .unwrap();

    let bytes = serialize_params(&agent.params);
    let restored: ParameterStore<Scalar> = deserialize_params(&bytes).unwrap();

    use rand::Rng;
    let mut exact = true;
    for _ in 0..100 {
        let encoded: Vec<Scalar> = (0..56).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let (p_a, logp_a) = agent.policy_forward(&agent.params, &encoded).unwrap();
        let (p_b, logp_b) = agent.policy_forward(&restored, &encoded).unwrap();
        let (q1_a, q2_a) = agent.critic_forward(&agent.params, &encoded).unwrap();
        let (q1_b, q2_b) = agent.critic_forward(&restored, &encoded).unwrap();
        exact &= p_a == p_b && logp_a == logp_b && q1_a == q1_b && q2_a == q2_b;
    }
    line(
        "10",
        exact,
        "restored checkpoint reproduces forward outputs exactly",
        "100 random encoded states through both heads".to_string(),
    );

    // Round trip through an actual training checkpoint file as well.
    let dir = temp_dir("ckpt_file");
    let mut cfg = RunConfig::default();
    cfg.run.out_dir = dir.display().to_string();
    cfg.run.episodes = 2;
    cfg.run.seed = 5;
    let trained = cmd_train(&cfg).unwrap();
    let (params, _) = crowdnav::harness::load_checkpoint(&trained.final_checkpoint).unwrap();
    let obs = crowdnav::simulator::JointObservation {
        robot_full: [0.0, -4.0, 0.0, 0.0, 0.3, 0.0, 4.0, 1.0, 0.0],
        obstacles: vec![[1.0, 1.0, -0.2, 0.0, 0.3]],
    };
    let enc = CrowdEncoder::new(EncoderKind::Attention(AttentionVariant::Lsa), 1);
    let mut tape_a = Tape::new(&params);
    let out_a = enc.record(&mut tape_a, "policy.enc", &obs).unwrap();
    let value_live = tape_a.value(out_a).to_vec();
    line(
        "10",
        value_live.iter().all(|v| v.is_finite()) && value_live.len() == 56,
        "reloaded training checkpoint drives the encoder",
        format!("encoded length {}", value_live.len()),
    );
}

// ---------------------------------------------------------------------------
// Supporting checks shared with the oracle suites: kept here so the
// acceptance target exercises the tabular machinery directly too.

#[test]
fn soft_value_iteration_matches_policy_evaluation_structure() {
    // The oracle's fixed point satisfies the entropy-regularised Bellman
    // identity with the softmax policy: V = E_pi[Q - alpha log pi].
    let alpha = 0.2;
    let oracle = SoftViOracle::solve(0.9, alpha, 1e-12);
    for s in 0..TabularMdp::STATES {
        let q = oracle.q[s];
        let m = q[0].max(q[1]);
        let z = ((q[0] - m) / alpha).exp() + ((q[1] - m) / alpha).exp();
        let v_soft = alpha * z.ln() + m;
        let pi = [((q[0] - m) / alpha).exp() / z, ((q[1] - m) / alpha).exp() / z];
        let v_pi: Scalar = (0..2)
            .map(|a| pi[a] * (q[a] - alpha * pi[a].ln()))
            .sum();
        assert!((v_soft - v_pi).abs() < 1e-9);
    }
}

#[test]
fn identity_encoder_round_trips_observations() {
    let enc = IdentityEncoder { len: 3 };
    let store: ParameterStore<Scalar> = ParameterStore::new();
    let mut tape = Tape::new(&store);
    let node = enc.record(&mut tape, "enc", &vec![1.0, -2.0, 3.0]).unwrap();
    assert_eq!(tape.value(node), &[1.0, -2.0, 3.0]);
    assert!(enc.record(&mut tape, "enc", &vec![1.0]).is_err());
}
