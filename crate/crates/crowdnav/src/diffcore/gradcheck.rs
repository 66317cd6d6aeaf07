//! Central finite-difference verification of analytic gradients.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::diffcore::store::{GradientStore, ParameterStore};
use crate::scalar::Real;

/// Worst coordinate found by a finite-difference sweep.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_err: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err < tol
    }
}

/// Central difference of `forward` along one parameter coordinate.
pub fn finite_difference<T: Real>(
    params: &ParameterStore<T>,
    name: &str,
    index: usize,
    step: T,
    forward: &dyn Fn(&ParameterStore<T>) -> T,
) -> T {
    let mut perturbed = params.clone();
    let base = params.values(name).expect("parameter exists")[index];
    perturbed.values_mut(name).unwrap()[index] = base + step;
    let plus = forward(&perturbed);
    perturbed.values_mut(name).unwrap()[index] = base - step;
    let minus = forward(&perturbed);
    (plus - minus) / (step + step)
}

/// Compares `analytic` against central differences of `forward` on
/// `n_coords` randomly chosen coordinates of the touched parameters.
///
/// The relative error denominator is floored so that near-zero coordinate
/// pairs compare absolutely instead of blowing up.
pub fn check_gradients<T: Real>(
    params: &ParameterStore<T>,
    analytic: &GradientStore<T>,
    forward: &dyn Fn(&ParameterStore<T>) -> T,
    n_coords: usize,
    step: T,
    rng: &mut ChaCha8Rng,
) -> GradCheckReport {
    let coords: Vec<(String, usize)> = {
        let names: Vec<&str> = analytic.iter().map(|(n, _)| n).collect();
        assert!(!names.is_empty(), "gradient store is empty");
        (0..n_coords)
            .map(|_| {
                let name = names[rng.gen_range(0..names.len())];
                let len = analytic.get(name).unwrap().len();
                (name.to_string(), rng.gen_range(0..len))
            })
            .collect()
    };

    let mut report = GradCheckReport {
        checked: coords.len(),
        max_rel_err: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        worst_analytic: 0.0,
        worst_numeric: 0.0,
    };
    for (name, index) in coords {
        let a = analytic.get(&name).unwrap()[index].to_f64().unwrap();
        let n = finite_difference(params, &name, index, step, forward)
            .to_f64()
            .unwrap();
        let denom = a.abs().max(n.abs()).max(1e-6);
        let rel = (a - n).abs() / denom;
        if rel > report.max_rel_err {
            report.max_rel_err = rel;
            report.worst_param = name;
            report.worst_index = index;
            report.worst_analytic = a;
            report.worst_numeric = n;
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::net::MlpSpec;
    use crate::diffcore::tape::Tape;
    use crate::scalar::Scalar;
    use rand::SeedableRng;

    #[test]
    fn mlp_composite_passes_finite_difference() {
        let spec = MlpSpec::relu_first(&[5, 8, 3]);
        let mut params: ParameterStore<Scalar> = ParameterStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        spec.init_params(&mut params, "net", &mut rng).unwrap();
        let input = vec![0.3, -0.8, 0.9, 0.1, -0.2];
        let probe = vec![0.7, -0.4, 1.1];

        let forward = {
            let spec = spec.clone();
            let input = input.clone();
            let probe = probe.clone();
            move |p: &ParameterStore<Scalar>| -> Scalar {
                let out = spec.eval(p, "net", &input).unwrap();
                out.iter().zip(&probe).map(|(o, q)| o * q).sum()
            }
        };

        let mut tape = Tape::new(&params);
        let x = tape.constant(input);
        let out = spec.record(&mut tape, "net", x).unwrap();
        let q = tape.constant(probe);
        let loss = tape.dot(out, q);
        let grads = tape.backward(loss).unwrap();

        let report = check_gradients(&params, &grads, &forward, 64, 1e-5, &mut rng);
        assert!(
            report.passes(1e-4),
            "gradcheck failed at {}[{}]: analytic {} vs numeric {}",
            report.worst_param,
            report.worst_index,
            report.worst_analytic,
            report.worst_numeric
        );
    }
}
