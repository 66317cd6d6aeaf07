//! Attention-based obstacle encoders.
//!
//! Per obstacle `i`, the pairwise input `[s_r, o_i]` (robot feature plus
//! rotated observable obstacle) is linearly projected, embedded to a shallow
//! feature `e_i`, and mapped to an interaction feature `h_i` — optionally
//! with the raw pairwise input skip-concatenated back in. A per-obstacle
//! score `f_a(e_i)` is softmax-normalised into weights, and the weighted
//! interaction features are pooled by summation or by an LSTM pass in spawn
//! order.

use rand_chacha::ChaCha8Rng;

use super::{
    robot_feature_node, rotated_obstacle, AttentionReport, StateEncoder, ENCODED_LEN,
    OBSTACLE_FEATURE_LEN, ROBOT_FEATURE_LEN,
};
use crate::diffcore::{DiffError, LstmSpec, MlpSpec, NodeId, ParameterStore, Tape};
use crate::scalar::Scalar;
use crate::simulator::JointObservation;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttentionVariant {
    /// Plain interaction features, sum pooling.
    Aw,
    /// Skip-connected interaction features, sum pooling.
    Sa,
    /// Skip-connected interaction features, LSTM pooling.
    Lsa,
}

impl AttentionVariant {
    fn skip(&self) -> bool {
        !matches!(self, AttentionVariant::Aw)
    }

    fn lstm(&self) -> bool {
        matches!(self, AttentionVariant::Lsa)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttentionDims {
    /// Raw pairwise width: robot feature + obstacle feature.
    pub pair: usize,
    /// Width after the linear projection feeding the embedding layer.
    pub projected: usize,
    /// Embedded shallow feature width.
    pub embed: usize,
    /// Interaction feature width (also the pooled output width).
    pub interact: usize,
    /// Hidden width of the score network.
    pub score_hidden: usize,
}

impl Default for AttentionDims {
    fn default() -> Self {
        AttentionDims {
            pair: ROBOT_FEATURE_LEN + OBSTACLE_FEATURE_LEN,
            projected: 150,
            embed: 100,
            interact: 50,
            score_hidden: 100,
        }
    }
}

pub struct AttentionEncoder {
    pub variant: AttentionVariant,
    dims: AttentionDims,
    proj: MlpSpec,
    embed: MlpSpec,
    interact_plain: MlpSpec,
    interact_skip: MlpSpec,
    score: MlpSpec,
    lstm: LstmSpec,
}

struct Recorded {
    encoded: NodeId,
    scores: Vec<NodeId>,
    weights: Option<NodeId>,
}

impl AttentionEncoder {
    pub fn new(variant: AttentionVariant, dims: AttentionDims) -> Self {
        AttentionEncoder {
            variant,
            dims,
            proj: MlpSpec::linear(&[dims.pair, dims.projected]),
            embed: MlpSpec::relu_first(&[dims.projected, dims.embed]),
            interact_plain: MlpSpec::linear(&[dims.embed, dims.interact]),
            interact_skip: MlpSpec::linear(&[dims.embed + dims.pair, dims.interact]),
            score: MlpSpec::relu_first(&[dims.embed, dims.score_hidden, 1]),
            lstm: LstmSpec::new(dims.interact, dims.interact),
        }
    }

    pub fn dims(&self) -> AttentionDims {
        self.dims
    }

    pub fn init_params(
        &self,
        store: &mut ParameterStore<Scalar>,
        prefix: &str,
        rng: &mut ChaCha8Rng,
    ) -> Result<(), DiffError> {
        self.proj.init_params(store, &format!("{prefix}.proj"), rng)?;
        self.embed.init_params(store, &format!("{prefix}.fe"), rng)?;
        let interact = if self.variant.skip() {
            &self.interact_skip
        } else {
            &self.interact_plain
        };
        interact.init_params(store, &format!("{prefix}.fh"), rng)?;
        self.score.init_params(store, &format!("{prefix}.fa"), rng)?;
        if self.variant.lstm() {
            self.lstm.init_params(store, &format!("{prefix}.lstm"), rng)?;
        }
        Ok(())
    }

    /// Embedded shallow feature of one robot-obstacle pair.
    pub fn record_embed(
        &self,
        tape: &mut Tape<Scalar>,
        prefix: &str,
        pair: NodeId,
    ) -> Result<NodeId, DiffError> {
        let projected = self.proj.record(tape, &format!("{prefix}.proj"), pair)?;
        self.embed.record(tape, &format!("{prefix}.fe"), projected)
    }

    /// Interaction feature from the shallow feature (and, in skip mode, the
    /// raw pairwise input concatenated back in).
    pub fn record_interaction(
        &self,
        tape: &mut Tape<Scalar>,
        prefix: &str,
        embedded: NodeId,
        pair: NodeId,
        skip: bool,
    ) -> Result<NodeId, DiffError> {
        if skip {
            let with_raw = tape.concat(&[embedded, pair]);
            self.interact_skip
                .record(tape, &format!("{prefix}.fh"), with_raw)
        } else {
            self.interact_plain
                .record(tape, &format!("{prefix}.fh"), embedded)
        }
    }

    /// Scalar attention score of one shallow feature.
    pub fn record_score(
        &self,
        tape: &mut Tape<Scalar>,
        prefix: &str,
        embedded: NodeId,
    ) -> Result<NodeId, DiffError> {
        self.score.record(tape, &format!("{prefix}.fa"), embedded)
    }

    fn record_parts(
        &self,
        tape: &mut Tape<Scalar>,
        prefix: &str,
        obs: &JointObservation,
    ) -> Result<Recorded, DiffError> {
        let s_r = robot_feature_node(tape, obs);
        let n = obs.obstacles.len();
        if n == 0 {
            let zeros = tape.constant(vec![0.0; self.dims.interact]);
            let encoded = tape.concat(&[s_r, zeros]);
            return Ok(Recorded {
                encoded,
                scores: Vec::new(),
                weights: None,
            });
        }

        let mut interactions = Vec::with_capacity(n);
        let mut scores = Vec::with_capacity(n);
        for i in 0..n {
            let o_i = tape.constant(rotated_obstacle(obs, i).to_vec());
            let pair = tape.concat(&[s_r, o_i]);
            let e_i = self.record_embed(tape, prefix, pair)?;
            let h_i = self.record_interaction(tape, prefix, e_i, pair, self.variant.skip())?;
            let score = self.record_score(tape, prefix, e_i)?;
            interactions.push(h_i);
            scores.push(score);
        }

        let score_vec = tape.concat(&scores);
        let weights = tape.softmax(score_vec);

        let weighted: Vec<NodeId> = interactions
            .iter()
            .enumerate()
            .map(|(i, &h_i)| {
                let w_i = tape.gather(weights, i);
                tape.scalar_mul(w_i, h_i)
            })
            .collect();

        let pooled = if self.variant.lstm() {
            self.lstm
                .record(tape, &format!("{prefix}.lstm"), &weighted)?
        } else {
            let mut acc = weighted[0];
            for &w in &weighted[1..] {
                acc = tape.add(acc, w);
            }
            acc
        };

        let encoded = tape.concat(&[s_r, pooled]);
        Ok(Recorded {
            encoded,
            scores,
            weights: Some(weights),
        })
    }

    pub fn record(
        &self,
        tape: &mut Tape<Scalar>,
        prefix: &str,
        obs: &JointObservation,
    ) -> Result<NodeId, DiffError> {
        Ok(self.record_parts(tape, prefix, obs)?.encoded)
    }

    /// Raw scores and softmax weights for one observation.
    pub fn report(
        &self,
        params: &ParameterStore<Scalar>,
        prefix: &str,
        obs: &JointObservation,
    ) -> Result<AttentionReport, DiffError> {
        let mut tape = Tape::new(params);
        let parts = self.record_parts(&mut tape, prefix, obs)?;
        let raw_scores = parts
            .scores
            .iter()
            .map(|&s| tape.scalar_value(s))
            .collect();
        let weights = parts
            .weights
            .map(|w| tape.value(w).to_vec())
            .unwrap_or_default();
        Ok(AttentionReport {
            raw_scores,
            weights,
        })
    }
}

impl StateEncoder<JointObservation> for AttentionEncoder {
    fn encoded_len(&self) -> usize {
        ENCODED_LEN
    }

    fn init_params(
        &self,
        store: &mut ParameterStore<Scalar>,
        prefix: &str,
        rng: &mut ChaCha8Rng,
    ) -> Result<(), DiffError> {
        AttentionEncoder::init_params(self, store, prefix, rng)
    }

    fn record(
        &self,
        tape: &mut Tape<Scalar>,
        prefix: &str,
        obs: &JointObservation,
    ) -> Result<NodeId, DiffError> {
        AttentionEncoder::record(self, tape, prefix, obs)
    }

    fn attention_report(
        &self,
        params: &ParameterStore<Scalar>,
        prefix: &str,
        obs: &JointObservation,
    ) -> Result<Option<AttentionReport>, DiffError> {
        self.report(params, prefix, obs).map(Some)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn observation(n: usize) -> JointObservation {
        let obstacles = (0..n)
            .map(|i| {
                let x = -1.5 + i as Scalar;
                [x, 1.0 + 0.3 * i as Scalar, 0.2, -0.4, 0.3]
            })
            .collect();
        JointObservation {
            robot_full: [0.0, -4.0, 0.1, 0.9, 0.3, 0.0, 4.0, 1.0, 1.2],
            obstacles,
        }
    }

    fn encoder(variant: AttentionVariant) -> (AttentionEncoder, ParameterStore<Scalar>) {
        let enc = AttentionEncoder::new(variant, AttentionDims::default());
        let mut store = ParameterStore::new();
        enc.init_params(&mut store, "enc", &mut rng(9)).unwrap();
        (enc, store)
    }

    #[test]
    fn all_variants_emit_56_values() {
        for variant in [
            AttentionVariant::Aw,
            AttentionVariant::Sa,
            AttentionVariant::Lsa,
        ] {
            let (enc, store) = encoder(variant);
            for n in [0, 1, 4] {
                let obs = observation(n);
                let mut tape = Tape::new(&store);
                let out = enc.record(&mut tape, "enc", &obs).unwrap();
                assert_eq!(tape.len(out), ENCODED_LEN, "{variant:?} with {n} obstacles");
                assert!(tape.value(out).iter().all(|v| v.is_finite()));
            }
        }
    }

    #[test]
    fn zero_obstacles_pool_to_zeros_after_robot_feature() {
        let (enc, store) = encoder(AttentionVariant::Lsa);
        let obs = observation(0);
        let mut tape = Tape::new(&store);
        let out = enc.record(&mut tape, "enc", &obs).unwrap();
        let v = tape.value(out);
        assert_eq!(&v[ROBOT_FEATURE_LEN..], &[0.0; 50]);
        let report = enc.report(&store, "enc", &obs).unwrap();
        assert!(report.weights.is_empty() && report.raw_scores.is_empty());
    }

    #[test]
    fn embedded_feature_has_width_100_and_zero_weights_give_zero() {
        let (enc, store) = encoder(AttentionVariant::Aw);
        let obs = observation(1);
        let mut tape = Tape::new(&store);
        let s_r = robot_feature_node(&mut tape, &obs);
        let o = tape.constant(rotated_obstacle(&obs, 0).to_vec());
        let pair = tape.concat(&[s_r, o]);
        let e = enc.record_embed(&mut tape, "enc", pair).unwrap();
        assert_eq!(tape.len(e), 100);

        let mut zeroed = store.clone();
        for name in [
            "enc.proj.w0",
            "enc.proj.b0",
            "enc.fe.w0",
            "enc.fe.b0",
        ] {
            let n = zeroed.values(name).unwrap().len();
            zeroed.set_values(name, &vec![0.0; n]).unwrap();
        }
        let mut tape = Tape::new(&zeroed);
        let s_r = robot_feature_node(&mut tape, &obs);
        let o = tape.constant(rotated_obstacle(&obs, 0).to_vec());
        let pair = tape.concat(&[s_r, o]);
        let e = enc.record_embed(&mut tape, "enc", pair).unwrap();
        assert_eq!(tape.value(e), &[0.0; 100]);
    }

    #[test]
    fn embed_matches_straight_line_composition() {
        let (enc, store) = encoder(AttentionVariant::Aw);
        let obs = observation(1);
        let pair: Vec<Scalar> = robot_feature(&obs)
            .iter()
            .chain(rotated_obstacle(&obs, 0).iter())
            .cloned()
            .collect();

        // Oracle: projection then embedding as two plain matrix products.
        let matvec = |w: &[Scalar], b: &[Scalar], x: &[Scalar]| -> Vec<Scalar> {
            let rows = b.len();
            let cols = x.len();
            (0..rows)
                .map(|r| {
                    b[r] + (0..cols).map(|c| w[r * cols + c] * x[c]).sum::<Scalar>()
                })
                .collect()
        };
        let projected = matvec(
            store.values("enc.proj.w0").unwrap(),
            store.values("enc.proj.b0").unwrap(),
            &pair,
        );
        let embedded: Vec<Scalar> = matvec(
            store.values("enc.fe.w0").unwrap(),
            store.values("enc.fe.b0").unwrap(),
            &projected,
        )
        .into_iter()
        .map(|v| v.max(0.0))
        .collect();

        let mut tape = Tape::new(&store);
        let p = tape.constant(pair);
        let e = enc.record_embed(&mut tape, "enc", p).unwrap();
        for (a, b) in tape.value(e).iter().zip(&embedded) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    use super::super::robot_feature;

    #[test]
    fn interaction_widths_follow_mode() {
        let (enc, store) = encoder(AttentionVariant::Sa);
        assert_eq!(enc.interact_plain.in_dim(), 100);
        assert_eq!(enc.interact_skip.in_dim(), 111);
        let obs = observation(1);
        let mut tape = Tape::new(&store);
        let out = enc.record(&mut tape, "enc", &obs).unwrap();
        assert_eq!(tape.len(out), 56);
    }

    #[test]
    fn skip_mode_with_zeroed_skip_columns_equals_plain_mode() {
        // Build skip weights whose last `pair` columns are zero and compare
        // against a plain encoder sharing every other parameter.
        let (skip_enc, mut skip_store) = encoder(AttentionVariant::Sa);
        let plain_enc = AttentionEncoder::new(AttentionVariant::Aw, AttentionDims::default());
        let dims = skip_enc.dims();

        // Copy the skip fh weights' embedding columns into a plain store.
        let mut plain_store = ParameterStore::new();
        plain_enc
            .init_params(&mut plain_store, "enc", &mut rng(9))
            .unwrap();
        for name in [
            "enc.proj.w0",
            "enc.proj.b0",
            "enc.fe.w0",
            "enc.fe.b0",
            "enc.fa.w0",
            "enc.fa.b0",
            "enc.fa.w1",
            "enc.fa.b1",
        ] {
            let v = skip_store.values(name).unwrap().to_vec();
            plain_store.set_values(name, &v).unwrap();
        }
        let skip_w = skip_store.values("enc.fh.w0").unwrap().to_vec();
        let skip_cols = dims.embed + dims.pair;
        let mut zeroed_skip = skip_w.clone();
        let mut plain_w = vec![0.0; dims.interact * dims.embed];
        for r in 0..dims.interact {
            for c in 0..dims.embed {
                plain_w[r * dims.embed + c] = skip_w[r * skip_cols + c];
            }
            for c in dims.embed..skip_cols {
                zeroed_skip[r * skip_cols + c] = 0.0;
            }
        }
        skip_store.set_values("enc.fh.w0", &zeroed_skip).unwrap();
        plain_store.set_values("enc.fh.w0", &plain_w).unwrap();
        let b = skip_store.values("enc.fh.b0").unwrap().to_vec();
        plain_store.set_values("enc.fh.b0", &b).unwrap();

        let obs = observation(2);
        let mut tape_s = Tape::new(&skip_store);
        let out_s = skip_enc.record(&mut tape_s, "enc", &obs).unwrap();
        let mut tape_p = Tape::new(&plain_store);
        let out_p = plain_enc.record(&mut tape_p, "enc", &obs).unwrap();
        for (a, b) in tape_s.value(out_s).iter().zip(tape_p.value(out_p)) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn identical_obstacles_share_weight_equally() {
        let (enc, store) = encoder(AttentionVariant::Sa);
        let mut obs = observation(3);
        let clone = obs.obstacles[0];
        obs.obstacles = vec![clone; 3];
        let report = enc.report(&store, "enc", &obs).unwrap();
        for &w in &report.weights {
            assert!((w - 1.0 / 3.0).abs() < 1e-9);
        }
    }

    #[test]
    fn single_obstacle_weight_is_exactly_one() {
        let (enc, store) = encoder(AttentionVariant::Lsa);
        let report = enc.report(&store, "enc", &observation(1)).unwrap();
        assert_eq!(report.weights, vec![1.0]);
    }

    #[test]
    fn weights_form_a_distribution_and_permute_with_obstacles() {
        let (enc, store) = encoder(AttentionVariant::Sa);
        let obs = observation(4);
        let report = enc.report(&store, "enc", &obs).unwrap();
        let total: Scalar = report.weights.iter().sum();
        assert!((total - 1.0).abs() < 1e-9);
        assert!(report.weights.iter().all(|&w| w > 0.0));

        let mut swapped = obs.clone();
        swapped.obstacles.swap(1, 3);
        let report_swapped = enc.report(&store, "enc", &swapped).unwrap();
        assert!((report.weights[1] - report_swapped.weights[3]).abs() < 1e-12);
        assert!((report.weights[3] - report_swapped.weights[1]).abs() < 1e-12);
    }

    #[test]
    fn sum_pooled_variants_ignore_obstacle_order() {
        for variant in [AttentionVariant::Aw, AttentionVariant::Sa] {
            let (enc, store) = encoder(variant);
            let obs = observation(4);
            let mut reversed = obs.clone();
            reversed.obstacles.reverse();
            let mut tape_a = Tape::new(&store);
            let a = enc.record(&mut tape_a, "enc", &obs).unwrap();
            let mut tape_b = Tape::new(&store);
            let b = enc.record(&mut tape_b, "enc", &reversed).unwrap();
            for (x, y) in tape_a.value(a).iter().zip(tape_b.value(b)) {
                assert!((x - y).abs() < 1e-9, "{variant:?} order-sensitive");
            }
        }
    }

    #[test]
    fn lstm_pooled_variant_is_order_sensitive() {
        let (enc, store) = encoder(AttentionVariant::Lsa);
        let obs = observation(4);
        let mut reversed = obs.clone();
        reversed.obstacles.reverse();
        let mut tape_a = Tape::new(&store);
        let a = enc.record(&mut tape_a, "enc", &obs).unwrap();
        let mut tape_b = Tape::new(&store);
        let b = enc.record(&mut tape_b, "enc", &reversed).unwrap();
        let dist: Scalar = tape_a
            .value(a)
            .iter()
            .zip(tape_b.value(b))
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<Scalar>()
            .sqrt();
        assert!(dist > 1e-9);
    }

    #[test]
    fn pipeline_equals_hand_chained_composition() {
        // LSTM-pooled skip attention on two obstacles, chained by hand from
        // the stage functions, must equal the one-shot encoding.
        let (enc, store) = encoder(AttentionVariant::Lsa);
        let obs = observation(2);

        let mut tape = Tape::new(&store);
        let s_r = robot_feature_node(&mut tape, &obs);
        let mut weighted = Vec::new();
        let mut scores = Vec::new();
        let mut interactions = Vec::new();
        for i in 0..2 {
            let o = tape.constant(rotated_obstacle(&obs, i).to_vec());
            let pair = tape.concat(&[s_r, o]);
            let e = enc.record_embed(&mut tape, "enc", pair).unwrap();
            let h = enc
                .record_interaction(&mut tape, "enc", e, pair, true)
                .unwrap();
            let a = enc.record_score(&mut tape, "enc", e).unwrap();
            scores.push(a);
            interactions.push(h);
        }
        let score_vec = tape.concat(&scores);
        let w = tape.softmax(score_vec);
        for (i, &h) in interactions.iter().enumerate() {
            let wi = tape.gather(w, i);
            weighted.push(tape.scalar_mul(wi, h));
        }
        let pooled = enc
            .lstm
            .record(&mut tape, "enc.lstm", &weighted)
            .unwrap();
        let hand = tape.concat(&[s_r, pooled]);
        let hand_value = tape.value(hand).to_vec();

        let mut tape2 = Tape::new(&store);
        let out = enc.record(&mut tape2, "enc", &obs).unwrap();
        for (a, b) in tape2.value(out).iter().zip(&hand_value) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
