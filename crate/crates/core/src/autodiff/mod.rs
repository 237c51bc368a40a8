//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! A [`Tape`] records one forward pass; [`Tape::backward`] replays it in
//! reverse and returns [`Gradients`] for every node that needs one. The
//! gradient reversal operator ([`Tape::grl`]) is the identity going forward
//! and multiplies the upstream gradient by `-lambda` going backward.

mod tape;
mod tensor;

pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

use crate::error::{Error, Result};

/// Warm-up ramp for the reversal strength over training progress
/// `p ∈ [0, 1]`: `2 / (1 + exp(-10 p)) - 1`.
pub fn grl_lambda_schedule(progress: f64) -> f64 {
    let p = progress.clamp(0.0, 1.0);
    2.0 / (1.0 + (-10.0 * p).exp()) - 1.0
}

/// Compares the tape gradient of the scalar function `f` at `x` against
/// central differences with step `h`.
///
/// Returns the largest per-coordinate
/// `|analytic - numeric| / max(1e-8, |analytic| + |numeric|)`.
pub fn grad_check<F>(f: F, x: &Tensor, h: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    if !(h > 0.0) {
        return Err(Error::Argument(format!("finite-difference step must be > 0, got {h}")));
    }
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone());
    let out = f(&mut tape, xv)?;
    let analytic = tape.backward(out)?.wrt(xv);

    let eval = |probe: Tensor| -> Result<f64> {
        let mut t = Tape::new();
        let v = t.leaf(probe);
        let o = f(&mut t, v)?;
        Ok(t.value(o).data()[0])
    };

    let mut worst = 0.0f64;
    for i in 0..x.len() {
        let mut plus = x.clone();
        plus.data_mut()[i] += h;
        let mut minus = x.clone();
        minus.data_mut()[i] -= h;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * h);
        let a = analytic.data()[i];
        let err = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
        worst = worst.max(err);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const H: f64 = 1e-5;
    const TOL: f64 = 1e-4;

    fn random(rng: &mut ChaCha8Rng, dims: &[usize]) -> Tensor {
        let n = dims.iter().product();
        let data = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        Tensor::new(dims.to_vec(), data).unwrap()
    }

    fn mat(rows: &[&[f64]]) -> Tensor {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn matmul_identity_and_scalar() {
        let mut t = Tape::new();
        let a = t.constant(mat(&[&[1.0, 2.0], &[3.0, 4.0]]));
        let i = t.constant(mat(&[&[1.0, 0.0], &[0.0, 1.0]]));
        let p = t.matmul(a, i).unwrap();
        assert_eq!(t.value(p).data(), &[1.0, 2.0, 3.0, 4.0]);

        let x = t.constant(mat(&[&[2.0]]));
        let y = t.constant(mat(&[&[3.0]]));
        let z = t.matmul(x, y).unwrap();
        assert_eq!(t.value(z).data(), &[6.0]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::zeros(&[2, 3]));
        let b = t.constant(Tensor::zeros(&[2, 2]));
        let err = t.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("2x3") && err.contains("2x2"), "{err}");
    }

    #[test]
    fn matmul_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10 {
            let b = random(&mut rng, &[4, 2]);
            let a = random(&mut rng, &[3, 4]);
            let err = grad_check(
                |t, x| {
                    let bv = t.constant(b.clone());
                    let p = t.matmul(x, bv)?;
                    Ok(t.sum(p))
                },
                &a,
                H,
            )
            .unwrap();
            assert!(err < TOL, "{err}");
            let err = grad_check(
                |t, x| {
                    let av = t.constant(a.clone());
                    let p = t.matmul(av, x)?;
                    let q = t.tanh(p);
                    Ok(t.sum(q))
                },
                &b,
                H,
            )
            .unwrap();
            assert!(err < TOL, "{err}");
        }
    }

    #[test]
    fn add_bias_values_and_gradient() {
        let mut t = Tape::new();
        let a = t.constant(mat(&[&[1.0, 1.0]]));
        let z = t.constant(Tensor::vector(vec![0.0, 0.0]));
        let o = t.add_bias(a, z).unwrap();
        assert_eq!(t.value(o).data(), &[1.0, 1.0]);

        let a = t.constant(mat(&[&[1.0, 2.0], &[3.0, 4.0]]));
        let b = t.constant(Tensor::vector(vec![10.0, 20.0]));
        let o = t.add_bias(a, b).unwrap();
        assert_eq!(t.value(o).data(), &[11.0, 22.0, 13.0, 24.0]);

        let bad = t.constant(Tensor::vector(vec![1.0, 2.0, 3.0]));
        assert!(matches!(t.add_bias(a, bad), Err(Error::Shape(_))));

        // Upstream all-ones over 3x2 rows sums to 3 per bias entry.
        let mut t = Tape::new();
        let a = t.constant(Tensor::zeros(&[3, 2]));
        let b = t.leaf(Tensor::vector(vec![0.5, -0.5]));
        let o = t.add_bias(a, b).unwrap();
        let s = t.sum(o);
        let g = t.backward(s).unwrap().wrt(b);
        assert_eq!(g.data(), &[3.0, 3.0]);

        let err = grad_check(
            |t, x| {
                let a = t.constant(mat(&[&[0.1, 0.2], &[0.3, 0.4], &[0.5, 0.6]]));
                let o = t.add_bias(a, x)?;
                Ok(t.sum(o))
            },
            &Tensor::vector(vec![0.5, -0.5]),
            H,
        )
        .unwrap();
        assert!(err < TOL);
    }

    #[test]
    fn activations_forward_and_gradient() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::vector(vec![-1.0, 0.0, 2.0]));
        let r = t.relu(a);
        assert_eq!(t.value(r).data(), &[0.0, 0.0, 2.0]);
        let z = t.constant(Tensor::vector(vec![0.0]));
        let th = t.tanh(z);
        assert_eq!(t.value(th).data(), &[0.0]);

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..10 {
            let x = random(&mut rng, &[3, 5]);
            let err = grad_check(
                |t, v| {
                    let y = t.tanh(v);
                    let w = t.constant(
                        Tensor::vector((0..15).map(|i| i as f64 * 0.1 - 0.7).collect()).reshape(vec![3, 5]).unwrap(),
                    );
                    let y = t.mse(y, w)?;
                    Ok(y)
                },
                &x,
                H,
            )
            .unwrap();
            assert!(err < TOL, "tanh {err}");
            // Keep probe points away from the relu kink.
            let x = Tensor::new(
                x.dims().to_vec(),
                x.data().iter().map(|v| if v.abs() < 1e-3 { 0.5 } else { *v }).collect(),
            )
            .unwrap();
            let err = grad_check(
                |t, v| {
                    let y = t.relu(v);
                    let y = t.scale(y, 3.0);
                    Ok(t.sum(y))
                },
                &x,
                H,
            )
            .unwrap();
            assert!(err < TOL, "relu {err}");
        }
    }

    #[test]
    fn grl_is_identity_forward_and_negated_backward() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::vector(vec![0.5, -1.5]));
        let r = t.grl(x, 1.0).unwrap();
        assert!(t.value(r).bit_eq(t.value(x)));
        let s = t.sum(r);
        assert_eq!(t.backward(s).unwrap().wrt(x).data(), &[-1.0, -1.0]);

        let mut t = Tape::new();
        let x = t.leaf(Tensor::vector(vec![0.0, 0.0]));
        let r = t.grl(x, 0.5).unwrap();
        let w = t.constant(Tensor::vector(vec![2.0, -4.0]));
        let rw = weighted_sum(&mut t, r, w);
        assert_eq!(t.backward(rw).unwrap().wrt(x).data(), &[-1.0, 2.0]);

        let mut t = Tape::new();
        let x = t.leaf(Tensor::vector(vec![1.0]));
        assert!(matches!(t.grl(x, -0.1), Err(Error::Argument(_))));
    }

    // sum(r * w) for a constant vector w, so the upstream gradient into r is w.
    fn weighted_sum(t: &mut Tape, r: Var, w: Var) -> Var {
        let n = t.value(r).len();
        let wcol = t.constant(t.value(w).clone().reshape(vec![n, 1]).unwrap());
        let zero = t.constant(Tensor::zeros(&[1, n]));
        let row = t.add_bias(zero, r).unwrap();
        let p = t.matmul(row, wcol).unwrap();
        t.sum(p)
    }

    #[test]
    fn grl_grad_check_is_flipped_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random(&mut rng, &[6]);
        let mut t = Tape::new();
        let v = t.leaf(x.clone());
        let r = t.grl(v, 1.0).unwrap();
        let s = t.sum(r);
        let g = t.backward(s).unwrap().wrt(v);
        assert!(g.data().iter().all(|&d| d == -1.0));
        // The numeric derivative sees the identity (+1); the analytic one is
        // its exact negation, so the relative error is maximal.
        let err = grad_check(
            |t, v| {
                let r = t.grl(v, 1.0)?;
                Ok(t.sum(r))
            },
            &x,
            H,
        )
        .unwrap();
        assert!((err - 1.0).abs() < 1e-9);
        let err = grad_check(|t, v| Ok(t.sum(v)), &x, H).unwrap();
        assert!(err < 1e-10);
    }

    #[test]
    fn softmax_cross_entropy_values() {
        let mut t = Tape::new();
        let l = t.constant(mat(&[&[0.0, 0.0, 0.0]]));
        let ce = t.softmax_cross_entropy(l, &[0]).unwrap();
        assert!((t.value(ce).data()[0] - 3f64.ln()).abs() < 1e-12);
        let l = t.constant(mat(&[&[100.0, 0.0, 0.0]]));
        let ce = t.softmax_cross_entropy(l, &[0]).unwrap();
        assert!(t.value(ce).data()[0] < 1e-12);
        assert!(matches!(t.softmax_cross_entropy(l, &[3]), Err(Error::Argument(_))));
    }

    #[test]
    fn softmax_cross_entropy_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..10 {
            let logits = random(&mut rng, &[4, 3]);
            let labels: Vec<usize> = (0..4).map(|_| rng.random_range(0..3)).collect();
            let err = grad_check(|t, v| t.softmax_cross_entropy(v, &labels), &logits, H).unwrap();
            assert!(err < TOL, "{err}");
        }
    }

    #[test]
    fn mse_values_and_gradient() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::vector(vec![1.0, 1.0]));
        let b = t.constant(Tensor::vector(vec![0.0, 0.0]));
        let m = t.mse(a, a).unwrap();
        assert_eq!(t.value(m).data(), &[0.0]);
        let m = t.mse(a, b).unwrap();
        assert_eq!(t.value(m).data(), &[1.0]);
        let c = t.constant(Tensor::vector(vec![0.0]));
        assert!(matches!(t.mse(a, c), Err(Error::Shape(_))));

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let x = random(&mut rng, &[2, 3]);
            let y = random(&mut rng, &[2, 3]);
            let err = grad_check(
                |t, v| {
                    let w = t.constant(y.clone());
                    t.mse(v, w)
                },
                &x,
                H,
            )
            .unwrap();
            assert!(err < TOL);
        }
    }

    #[test]
    fn backward_reaches_and_skips() {
        let mut t = Tape::new();
        let p = t.leaf(Tensor::vector(vec![0.3, -0.2, 1.0]));
        let s = t.sum(p);
        assert_eq!(t.backward(s).unwrap().wrt(p).data(), &[1.0, 1.0, 1.0]);

        let mut t = Tape::new();
        let p = t.leaf(Tensor::vector(vec![0.3, -0.2, 1.0]));
        let q = t.leaf(Tensor::vector(vec![1.0]));
        let s = t.sum(q);
        let g = t.backward(s).unwrap();
        assert!(g.get(p).is_none());
        assert_eq!(g.wrt(p).data(), &[0.0, 0.0, 0.0]);

        let v = t.leaf(Tensor::vector(vec![1.0, 2.0]));
        assert!(matches!(t.backward(v), Err(Error::Argument(_))));
    }

    #[test]
    fn two_layer_mlp_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..10 {
            let x = random(&mut rng, &[5, 4]);
            let w1 = random(&mut rng, &[4, 6]);
            let b1 = random(&mut rng, &[6]);
            let w2 = random(&mut rng, &[6, 3]);
            let labels = [0usize, 1, 2, 1, 0];
            let net = |t: &mut Tape, w1: Var, w2: Var| -> Result<Var> {
                let xv = t.constant(x.clone());
                let b1v = t.constant(b1.clone());
                let h = t.matmul(xv, w1)?;
                let h = t.add_bias(h, b1v)?;
                let h = t.tanh(h);
                let o = t.matmul(h, w2)?;
                t.softmax_cross_entropy(o, &labels)
            };
            let w2c = w2.clone();
            let e1 = grad_check(
                |t, v| {
                    let w2 = t.constant(w2c.clone());
                    net(t, v, w2)
                },
                &w1,
                H,
            )
            .unwrap();
            let w1c = w1.clone();
            let e2 = grad_check(
                |t, v| {
                    let w1 = t.constant(w1c.clone());
                    net(t, w1, v)
                },
                &w2,
                H,
            )
            .unwrap();
            assert!(e1 < TOL && e2 < TOL, "{e1} {e2}");
        }
    }

    #[test]
    fn gather_rows_gradient_accumulates_repeats() {
        let mut t = Tape::new();
        let a = t.leaf(mat(&[&[1.0, 2.0], &[3.0, 4.0]]));
        let g = t.gather_rows(a, &[1, 1, 0]).unwrap();
        assert_eq!(t.value(g).data(), &[3.0, 4.0, 3.0, 4.0, 1.0, 2.0]);
        let s = t.sum(g);
        assert_eq!(t.backward(s).unwrap().wrt(a).data(), &[1.0, 1.0, 2.0, 2.0]);
        assert!(t.gather_rows(a, &[2]).is_err());
    }

    #[test]
    fn schedule_endpoints() {
        assert_eq!(grl_lambda_schedule(0.0), 0.0);
        assert!((grl_lambda_schedule(1.0) - (2.0 / (1.0 + (-10f64).exp()) - 1.0)).abs() < 1e-15);
        assert!(grl_lambda_schedule(0.5) > 0.9);
    }

    #[test]
    fn grad_check_rejects_nonpositive_step() {
        let x = Tensor::vector(vec![1.0]);
        assert!(grad_check(|t, v| Ok(t.sum(v)), &x, 0.0).is_err());
    }
}
