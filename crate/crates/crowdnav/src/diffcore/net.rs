//! Layer specifications: chained affine layers and an LSTM sequence encoder.
//!
//! A spec owns no weights; it names them. Parameters live in a
//! [`ParameterStore`] under `{prefix}.w{i}` / `{prefix}.b{i}` (and gate names
//! for the LSTM), which lets one spec drive online, target, and checkpointed
//! copies of the same network.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::diffcore::store::ParameterStore;
use crate::diffcore::tape::{NodeId, Tape};
use crate::diffcore::DiffError;
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Linear,
    Relu,
    Tanh,
    Sigmoid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
}

/// Chain of affine layers with per-layer activations.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MlpSpec {
    pub layers: Vec<LayerSpec>,
}

/// Uniform init in [-1/sqrt(fan_in), +1/sqrt(fan_in)] for weights and biases.
fn uniform_fan_in<T: Real>(rng: &mut ChaCha8Rng, fan_in: usize, n: usize) -> Vec<T> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    (0..n).map(|_| T::of(rng.gen_range(-bound..bound))).collect()
}

impl MlpSpec {
    pub fn new(layers: Vec<LayerSpec>) -> Self {
        assert!(!layers.is_empty(), "MLP needs at least one layer");
        for pair in layers.windows(2) {
            assert_eq!(
                pair[0].out_dim, pair[1].in_dim,
                "consecutive MLP layers disagree on width"
            );
        }
        MlpSpec { layers }
    }

    /// ReLU after the first layer only; later layers linear.
    pub fn relu_first(dims: &[usize]) -> Self {
        Self::with_rule(dims, |i| i == 0)
    }

    /// ReLU after every layer except the last (prediction-head convention).
    pub fn relu_hidden(dims: &[usize]) -> Self {
        let last = dims.len() - 2;
        Self::with_rule(dims, |i| i < last)
    }

    /// All layers linear.
    pub fn linear(dims: &[usize]) -> Self {
        Self::with_rule(dims, |_| false)
    }

    fn with_rule(dims: &[usize], relu_at: impl Fn(usize) -> bool) -> Self {
        assert!(dims.len() >= 2, "MLP dims need input and output");
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, pair)| LayerSpec {
                in_dim: pair[0],
                out_dim: pair[1],
                activation: if relu_at(i) {
                    Activation::Relu
                } else {
                    Activation::Linear
                },
            })
            .collect();
        MlpSpec::new(layers)
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    /// Creates seeded parameters for every layer under `prefix`.
    pub fn init_params<T: Real>(
        &self,
        store: &mut ParameterStore<T>,
        prefix: &str,
        rng: &mut ChaCha8Rng,
    ) -> Result<(), DiffError> {
        for (i, layer) in self.layers.iter().enumerate() {
            let w = uniform_fan_in(rng, layer.in_dim, layer.out_dim * layer.in_dim);
            let b = uniform_fan_in(rng, layer.in_dim, layer.out_dim);
            store.insert(
                format!("{prefix}.w{i}"),
                vec![layer.out_dim, layer.in_dim],
                w,
            )?;
            store.insert(format!("{prefix}.b{i}"), vec![layer.out_dim], b)?;
        }
        Ok(())
    }

    fn check_params<T: Real>(
        &self,
        store: &ParameterStore<T>,
        prefix: &str,
    ) -> Result<(), DiffError> {
        for (i, layer) in self.layers.iter().enumerate() {
            for (tag, len) in [("w", layer.out_dim * layer.in_dim), ("b", layer.out_dim)] {
                let name = format!("{prefix}.{tag}{i}");
                let got = store.values(&name)?.len();
                if got != len {
                    return Err(DiffError::ShapeMismatch {
                        context: format!("layer {name}: expected {len} values, found {got}"),
                    });
                }
            }
        }
        Ok(())
    }

    /// Records the forward pass on `tape` and returns the output node.
    /// Parameter shapes are trusted here (they are fixed at insertion);
    /// [`MlpSpec::eval`] revalidates them for externally supplied stores.
    pub fn record<T: Real>(
        &self,
        tape: &mut Tape<T>,
        prefix: &str,
        input: NodeId,
    ) -> Result<NodeId, DiffError> {
        if tape.len(input) != self.in_dim() {
            return Err(DiffError::ShapeMismatch {
                context: format!(
                    "{prefix}: input length {} does not match first layer in-dim {}",
                    tape.len(input),
                    self.in_dim()
                ),
            });
        }
        let mut h = input;
        for (i, layer) in self.layers.iter().enumerate() {
            let w = tape.param(&format!("{prefix}.w{i}"))?;
            let b = tape.param(&format!("{prefix}.b{i}"))?;
            let z = tape.matvec(w, h);
            let z = tape.add(z, b);
            h = match layer.activation {
                Activation::Linear => z,
                Activation::Relu => tape.relu(z),
                Activation::Tanh => tape.tanh(z),
                Activation::Sigmoid => tape.sigmoid(z),
            };
        }
        Ok(h)
    }

    /// Evaluates the chain on plain values via a scratch tape, validating
    /// the referenced parameter shapes first.
    pub fn eval<T: Real>(
        &self,
        params: &ParameterStore<T>,
        prefix: &str,
        input: &[T],
    ) -> Result<Vec<T>, DiffError> {
        self.check_params(params, prefix)?;
        let mut tape = Tape::new(params);
        let x = tape.constant(input.to_vec());
        let out = self.record(&mut tape, prefix, x)?;
        Ok(tape.value(out).to_vec())
    }
}

/// Single-layer LSTM returning the final hidden state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LstmSpec {
    pub input: usize,
    pub hidden: usize,
}

const LSTM_GATES: [&str; 4] = ["i", "f", "g", "o"];

impl LstmSpec {
    pub fn new(input: usize, hidden: usize) -> Self {
        assert!(input > 0 && hidden > 0, "LSTM dims must be positive");
        LstmSpec { input, hidden }
    }

    pub fn init_params<T: Real>(
        &self,
        store: &mut ParameterStore<T>,
        prefix: &str,
        rng: &mut ChaCha8Rng,
    ) -> Result<(), DiffError> {
        let fan_in = self.input + self.hidden;
        for gate in LSTM_GATES {
            store.insert(
                format!("{prefix}.w_{gate}"),
                vec![self.hidden, fan_in],
                uniform_fan_in(rng, fan_in, self.hidden * fan_in),
            )?;
            store.insert(
                format!("{prefix}.b_{gate}"),
                vec![self.hidden],
                uniform_fan_in(rng, fan_in, self.hidden),
            )?;
        }
        Ok(())
    }

    fn check_params<T: Real>(
        &self,
        store: &ParameterStore<T>,
        prefix: &str,
    ) -> Result<(), DiffError> {
        let fan_in = self.input + self.hidden;
        for gate in LSTM_GATES {
            for (tag, len) in [("w_", self.hidden * fan_in), ("b_", self.hidden)] {
                let name = format!("{prefix}.{tag}{gate}");
                let got = store.values(&name)?.len();
                if got != len {
                    return Err(DiffError::ShapeMismatch {
                        context: format!("LSTM {name}: expected {len} values, found {got}"),
                    });
                }
            }
        }
        Ok(())
    }

    /// Runs the gate recurrence left-to-right from zero initial state and
    /// returns the final hidden state node. Empty sequences are rejected;
    /// callers decide what a zero-element pool means.
    pub fn record<T: Real>(
        &self,
        tape: &mut Tape<T>,
        prefix: &str,
        sequence: &[NodeId],
    ) -> Result<NodeId, DiffError> {
        if sequence.is_empty() {
            return Err(DiffError::EmptySequence);
        }
        for (t, x) in sequence.iter().enumerate() {
            if tape.len(*x) != self.input {
                return Err(DiffError::ShapeMismatch {
                    context: format!(
                        "LSTM {prefix}: sequence element {t} has length {}, expected {}",
                        tape.len(*x),
                        self.input
                    ),
                });
            }
        }

        let gate_params: Vec<(NodeId, NodeId)> = LSTM_GATES
            .iter()
            .map(|gate| {
                let w = tape.param(&format!("{prefix}.w_{gate}"))?;
                let b = tape.param(&format!("{prefix}.b_{gate}"))?;
                Ok((w, b))
            })
            .collect::<Result<_, DiffError>>()?;

        let mut h = tape.constant(vec![T::zero(); self.hidden]);
        let mut c = tape.constant(vec![T::zero(); self.hidden]);
        for &x in sequence {
            let z = tape.concat(&[x, h]);
            let mut pre = Vec::with_capacity(4);
            for (w, b) in &gate_params {
                let a = tape.matvec(*w, z);
                pre.push(tape.add(a, *b));
            }
            let i_gate = tape.sigmoid(pre[0]);
            let f_gate = tape.sigmoid(pre[1]);
            let g_cand = tape.tanh(pre[2]);
            let o_gate = tape.sigmoid(pre[3]);
            let keep = tape.mul(f_gate, c);
            let write = tape.mul(i_gate, g_cand);
            c = tape.add(keep, write);
            let c_act = tape.tanh(c);
            h = tape.mul(o_gate, c_act);
        }
        Ok(h)
    }

    /// Evaluates the recurrence on plain vectors via a scratch tape,
    /// validating the referenced parameter shapes first.
    pub fn eval<T: Real>(
        &self,
        params: &ParameterStore<T>,
        prefix: &str,
        sequence: &[Vec<T>],
    ) -> Result<Vec<T>, DiffError> {
        self.check_params(params, prefix)?;
        let mut tape = Tape::new(params);
        let nodes: Vec<NodeId> = sequence
            .iter()
            .map(|v| tape.constant(v.clone()))
            .collect();
        let out = self.record(&mut tape, prefix, &nodes)?;
        Ok(tape.value(out).to_vec())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(42)
    }

    #[test]
    fn zero_weights_map_everything_to_zero() {
        let spec = MlpSpec::relu_first(&[4, 3, 2]);
        let mut store: ParameterStore<f64> = ParameterStore::new();
        for (i, layer) in spec.layers.iter().enumerate() {
            store
                .insert(
                    format!("m.w{i}"),
                    vec![layer.out_dim, layer.in_dim],
                    vec![0.0; layer.out_dim * layer.in_dim],
                )
                .unwrap();
            store
                .insert(format!("m.b{i}"), vec![layer.out_dim], vec![0.0; layer.out_dim])
                .unwrap();
        }
        let out = spec.eval(&store, "m", &[1.0, -2.0, 3.0, 4.0]).unwrap();
        assert_eq!(out, vec![0.0, 0.0]);
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let spec = MlpSpec::linear(&[3, 3]);
        let mut store: ParameterStore<f64> = ParameterStore::new();
        store
            .insert(
                "id.w0",
                vec![3, 3],
                vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
            )
            .unwrap();
        store.insert("id.b0", vec![3], vec![0.0; 3]).unwrap();
        let v = [0.5, -1.25, 9.0];
        assert_eq!(spec.eval(&store, "id", &v).unwrap(), v.to_vec());
    }

    #[test]
    fn random_mlp_matches_straight_line_oracle() {
        // Independent re-implementation: plain loops, no tape.
        let spec = MlpSpec::relu_first(&[4, 3, 2]);
        let mut store: ParameterStore<f64> = ParameterStore::new();
        let mut r = rng();
        spec.init_params(&mut store, "net", &mut r).unwrap();
        let input = [0.7, -0.3, 1.1, 0.05];

        let mut h: Vec<f64> = input.to_vec();
        for (i, layer) in spec.layers.iter().enumerate() {
            let w = store.values(&format!("net.w{i}")).unwrap();
            let b = store.values(&format!("net.b{i}")).unwrap();
            let mut next = vec![0.0; layer.out_dim];
            for (r_, slot) in next.iter_mut().enumerate() {
                let mut acc = b[r_];
                for (c, &x) in h.iter().enumerate() {
                    acc += w[r_ * layer.in_dim + c] * x;
                }
                *slot = if layer.activation == Activation::Relu {
                    acc.max(0.0)
                } else {
                    acc
                };
            }
            h = next;
        }

        let got = spec.eval(&store, "net", &input).unwrap();
        for (g, o) in got.iter().zip(&h) {
            assert!((g - o).abs() < 1e-12);
        }
    }

    #[test]
    fn mlp_rejects_wrong_input_length() {
        let spec = MlpSpec::relu_first(&[4, 2]);
        let mut store: ParameterStore<f64> = ParameterStore::new();
        let mut r = rng();
        spec.init_params(&mut store, "net", &mut r).unwrap();
        let err = spec.eval(&store, "net", &[1.0, 2.0]).unwrap_err();
        assert!(matches!(err, DiffError::ShapeMismatch { .. }));
    }

    fn zeroed_lstm(spec: LstmSpec, prefix: &str) -> ParameterStore<f64> {
        let mut store = ParameterStore::new();
        let fan_in = spec.input + spec.hidden;
        for gate in LSTM_GATES {
            store
                .insert(
                    format!("{prefix}.w_{gate}"),
                    vec![spec.hidden, fan_in],
                    vec![0.0; spec.hidden * fan_in],
                )
                .unwrap();
            store
                .insert(
                    format!("{prefix}.b_{gate}"),
                    vec![spec.hidden],
                    vec![0.0; spec.hidden],
                )
                .unwrap();
        }
        store
    }

    #[test]
    fn zero_lstm_on_zero_input_stays_zero() {
        let spec = LstmSpec::new(3, 4);
        let store = zeroed_lstm(spec, "lstm");
        let seq = vec![vec![0.0; 3], vec![0.0; 3]];
        let h = spec.eval(&store, "lstm", &seq).unwrap();
        assert_eq!(h, vec![0.0; 4]);
    }

    #[test]
    fn single_step_matches_hand_evaluated_cell() {
        let spec = LstmSpec::new(2, 2);
        let mut store: ParameterStore<f64> = ParameterStore::new();
        let mut r = rng();
        spec.init_params(&mut store, "cell", &mut r).unwrap();
        let x = vec![0.4, -0.9];
        let got = spec.eval(&store, "cell", &[x.clone()]).unwrap();

        // One-cell closed form with h0 = c0 = 0.
        let sigma = |v: f64| 1.0 / (1.0 + (-v).exp());
        let z: Vec<f64> = x.iter().chain([0.0, 0.0].iter()).cloned().collect();
        let gate = |name: &str, act: &dyn Fn(f64) -> f64| -> Vec<f64> {
            let w = store.values(&format!("cell.w_{name}")).unwrap();
            let b = store.values(&format!("cell.b_{name}")).unwrap();
            (0..2)
                .map(|r_| {
                    let mut acc = b[r_];
                    for (c, &zv) in z.iter().enumerate() {
                        acc += w[r_ * 4 + c] * zv;
                    }
                    act(acc)
                })
                .collect()
        };
        let i = gate("i", &sigma);
        let f = gate("f", &|v| sigma(v));
        let g = gate("g", &|v: f64| v.tanh());
        let o = gate("o", &sigma);
        let _ = f;
        for r_ in 0..2 {
            let c = i[r_] * g[r_];
            let expect = o[r_] * c.tanh();
            assert!((got[r_] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn lstm_is_order_sensitive_for_generic_weights() {
        let spec = LstmSpec::new(3, 4);
        let mut store: ParameterStore<f64> = ParameterStore::new();
        let mut r = rng();
        spec.init_params(&mut store, "lstm", &mut r).unwrap();
        let u = vec![1.0, 0.2, -0.5];
        let v = vec![-0.3, 0.9, 0.1];
        let uv = spec.eval(&store, "lstm", &[u.clone(), v.clone()]).unwrap();
        let vu = spec.eval(&store, "lstm", &[v, u]).unwrap();
        let dist: f64 = uv
            .iter()
            .zip(&vu)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        assert!(dist > 1e-9, "LSTM collapsed order information: {dist}");
    }

    #[test]
    fn empty_sequence_is_invalid_input() {
        let spec = LstmSpec::new(3, 4);
        let store = zeroed_lstm(spec, "lstm");
        assert!(matches!(
            spec.eval(&store, "lstm", &[]),
            Err(DiffError::EmptySequence)
        ));
    }
}
