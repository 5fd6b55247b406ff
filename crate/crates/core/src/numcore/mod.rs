//! Dense matrices, a reverse-mode tape over them, and a finite-difference
//! gradient checker.

mod gradcheck;
mod matrix;
mod tape;

pub use gradcheck::{grad_check, GradCheckConfig, GradCheckReport};
pub use matrix::Matrix;
pub use tape::{bce_logits_value, bce_value, sigmoid, Activation, Gradients, SparseAggregator, Tape, Var};

pub use tape::softmax_rows;

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::error::Error;

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
        let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
        Matrix::new(rows, cols, data).unwrap()
    }

    fn naive_matmul(a: &Matrix, b: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(a.rows(), b.cols());
        for i in 0..a.rows() {
            for j in 0..b.cols() {
                let mut s = 0.0;
                for k in 0..a.cols() {
                    s += a.get(i, k) * b.get(k, j);
                }
                out.set(i, j, s).unwrap();
            }
        }
        out
    }

    #[test]
    fn affine_identity_and_zero_input() {
        let mut t = Tape::new();
        let x = t.constant(Matrix::identity(2));
        let w = t.leaf(Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap());
        let b = t.leaf(Matrix::row_vector(vec![0.0, 0.0]).unwrap());
        let y = t.affine(x, w, Some(b)).unwrap();
        assert_eq!(t.value(y).as_slice(), &[1.0, 2.0, 3.0, 4.0]);

        let z = t.constant(Matrix::zeros(3, 2));
        let b2 = t.leaf(Matrix::row_vector(vec![5.0, 6.0]).unwrap());
        let y2 = t.affine(z, w, Some(b2)).unwrap();
        for i in 0..3 {
            assert_eq!(t.value(y2).row(i), &[5.0, 6.0]);
        }
    }

    #[test]
    fn affine_matches_naive_matmul() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let x = random(4, 3, &mut rng);
            let w = random(3, 2, &mut rng);
            let mut t = Tape::new();
            let (vx, vw) = (t.constant(x.clone()), t.constant(w.clone()));
            let y = t.affine(vx, vw, None).unwrap();
            assert!(t.value(y).max_abs_diff(&naive_matmul(&x, &w)) < 1e-12);
        }
    }

    #[test]
    fn affine_shape_error_names_both_shapes() {
        let mut t = Tape::new();
        let x = t.constant(Matrix::zeros(2, 3));
        let w = t.leaf(Matrix::zeros(2, 2));
        match t.affine(x, w, None) {
            Err(Error::Shape { left, right, .. }) => {
                assert_eq!(left, (2, 3));
                assert_eq!(right, (2, 2));
            }
            other => panic!("expected shape error, got {:?}", other.map(|v| v.index())),
        }
    }

    #[test]
    fn activations() {
        let mut t = Tape::new();
        let x = t.constant(Matrix::row_vector(vec![-1.0, 0.0, 2.0]).unwrap());
        let r = t.activate(x, Activation::Relu).unwrap();
        assert_eq!(t.value(r).as_slice(), &[0.0, 0.0, 2.0]);
        let z = t.constant(Matrix::scalar(0.0).unwrap());
        let s = t.activate(z, Activation::Sigmoid).unwrap();
        assert_eq!(t.value(s).get(0, 0), 0.5);
        assert_eq!("tanh".parse::<Activation>().unwrap(), Activation::Tanh);
        assert!("gelu".parse::<Activation>().is_err());
    }

    #[test]
    fn relu_derivative_at_zero_is_zero() {
        let mut t = Tape::new();
        let x = t.leaf(Matrix::row_vector(vec![0.0, 1.0]).unwrap());
        let r = t.activate(x, Activation::Relu).unwrap();
        let s = t.sum_squares(r).unwrap();
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().as_slice(), &[0.0, 2.0]);
    }

    fn unary_loss(kind: Activation) -> impl Fn(&[Matrix]) -> crate::Result<(f64, Vec<Matrix>)> {
        move |p: &[Matrix]| {
            let mut t = Tape::new();
            let x = t.leaf(p[0].clone());
            let y = t.activate(x, kind)?;
            let w = t.constant(Matrix::column_vector(vec![0.3, -1.2, 0.7])?);
            let z = t.matmul(y, w)?;
            let l = t.sum_squares(z)?;
            let g = t.backward(l)?;
            Ok((t.value(l).get(0, 0), vec![g.get_or_zeros(x, p[0].shape())]))
        }
    }

    #[test]
    fn tanh_and_sigmoid_gradients_match_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for kind in [Activation::Tanh, Activation::Sigmoid] {
            let p = vec![random(5, 3, &mut rng)];
            let rep = grad_check(unary_loss(kind), &p, &GradCheckConfig::default()).unwrap();
            assert!(rep.max_rel_error < 1e-6, "{kind}: {rep:?}");
        }
    }

    #[test]
    fn softmax_examples() {
        let mut t = Tape::new();
        let x = t.constant(
            Matrix::from_rows(&[
                vec![0.0, 0.0, 0.0],
                vec![2f64.ln(), 0.0, 0.0],
                vec![1000.0, 0.0, 0.0],
            ])
            .unwrap(),
        );
        let s = t.row_softmax(x).unwrap();
        let v = t.value(s);
        for j in 0..3 {
            assert!((v.get(0, j) - 1.0 / 3.0).abs() < 1e-15);
        }
        assert!((v.get(1, 0) - 0.5).abs() < 1e-15);
        assert!((v.get(1, 1) - 0.25).abs() < 1e-15);
        // e^-1000 underflows to zero in double precision; the extended-precision
        // value is below 1e-434.
        assert_eq!(v.get(2, 0), 1.0);
        assert_eq!(v.get(2, 1), 0.0);
    }

    #[test]
    fn softmax_matches_direct_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random(6, 4, &mut rng);
        let s = softmax_rows(&x);
        for i in 0..6 {
            let denom: f64 = x.row(i).iter().map(|v| v.exp()).sum();
            for j in 0..4 {
                assert!((s.get(i, j) - x.get(i, j).exp() / denom).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn dropout_modes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut t = Tape::new();
        let x = t.constant(Matrix::filled(4, 4, 2.0).unwrap());
        assert_eq!(t.dropout(x, 0.0, true, &mut rng).unwrap(), x);
        assert_eq!(t.dropout(x, 0.2, false, &mut rng).unwrap(), x);
        assert!(matches!(t.dropout(x, 1.0, true, &mut rng), Err(Error::Config(_))));
        assert!(matches!(t.dropout(x, -0.1, true, &mut rng), Err(Error::Config(_))));
    }

    #[test]
    fn dropout_rate_concentrates() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut t = Tape::new();
        let x = t.constant(Matrix::filled(100, 1000, 1.0).unwrap());
        let y = t.dropout(x, 0.2, true, &mut rng).unwrap();
        let v = t.value(y);
        let zeros = v.as_slice().iter().filter(|&&a| a == 0.0).count() as f64 / v.len() as f64;
        assert!((zeros - 0.2).abs() < 0.01, "zero fraction {zeros}");
        assert!(v.as_slice().iter().all(|&a| a == 0.0 || a == 1.25));
    }

    #[test]
    fn quadratic_grad_check() {
        let f = |p: &[Matrix]| {
            let mut t = Tape::new();
            let x = t.leaf(p[0].clone());
            let l = t.sum_squares(x)?;
            let g = t.backward(l)?;
            Ok((t.value(l).get(0, 0), vec![g.get(x).unwrap().clone()]))
        };
        let p = vec![Matrix::row_vector(vec![1.5, -2.0, 0.25, 3.0]).unwrap()];
        let rep = grad_check(f, &p, &GradCheckConfig::default()).unwrap();
        assert!(rep.max_rel_error < 1e-8, "{rep:?}");
    }

    #[test]
    fn grad_check_detects_corrupted_gradient() {
        let f = |p: &[Matrix]| {
            let v = p[0].sum_squares();
            Ok((v, vec![p[0].map(|x| 4.0 * x)?]))
        };
        let p = vec![Matrix::row_vector(vec![1.0, 2.0, -3.0]).unwrap()];
        let rep = grad_check(f, &p, &GradCheckConfig::default()).unwrap();
        assert!((rep.max_rel_error - 0.5).abs() < 1e-6, "{rep:?}");
        assert!(!rep.passes(1e-4));
    }

    #[test]
    fn grad_check_reports_non_finite_loss() {
        let f = |_: &[Matrix]| Ok((f64::NAN, vec![Matrix::zeros(1, 1)]));
        let p = vec![Matrix::zeros(1, 1)];
        assert!(matches!(
            grad_check(f, &p, &GradCheckConfig::default()),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn shared_value_gradients_add() {
        // y = x·a + x·b reuses x; dy/dx must be the sum of the branches.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (xv, av, bv) = (random(3, 2, &mut rng), random(2, 1, &mut rng), random(2, 1, &mut rng));

        let branch = |w: &Matrix| {
            let mut t = Tape::new();
            let x = t.leaf(xv.clone());
            let c = t.constant(w.clone());
            let y = t.matmul(x, c).unwrap();
            let cs = t.constant(Matrix::filled(1, 3, 1.0).unwrap());
            let s = t.matmul(cs, y).unwrap();
            t.backward(s).unwrap().get(x).unwrap().clone()
        };
        let mut t = Tape::new();
        let x = t.leaf(xv.clone());
        let (a, b) = (t.constant(av.clone()), t.constant(bv.clone()));
        let ya = t.matmul(x, a).unwrap();
        let yb = t.matmul(x, b).unwrap();
        let y = t.add(ya, yb).unwrap();
        let cs = t.constant(Matrix::filled(1, 3, 1.0).unwrap());
        let s = t.matmul(cs, y).unwrap();
        let g = t.backward(s).unwrap();
        let mut expected = branch(&av);
        expected.add_assign(&branch(&bv));
        assert!(g.get(x).unwrap().max_abs_diff(&expected) < 1e-14);
    }

    /// Every differentiable primitive, composed into one scalar.
    fn composite(p: &[Matrix], agg: &Arc<SparseAggregator>) -> crate::Result<(f64, Vec<Matrix>)> {
        let mut t = Tape::new();
        let vars: Vec<Var> = p.iter().map(|m| t.leaf(m.clone())).collect();
        let (x, w, b, eps, c) = (vars[0], vars[1], vars[2], vars[3], vars[4]);
        let a = t.aggregate(x, agg)?;
        let h = t.self_scale_add(x, eps, a)?;
        let z = t.affine(h, w, Some(b))?;
        let z = t.add_bias(z, b)?;
        let z = t.activate(z, Activation::Tanh)?;
        let s = t.row_softmax(z)?;
        let col = t.column(s, 1)?;
        let r = t.scale_rows(z, col)?;
        let q = t.hadamard(r, z)?;
        let cat = t.concat_cols(&[q, s])?;
        let sc = t.scale(cat, 0.7)?;
        let sig = t.activate(sc, Activation::Sigmoid)?;
        let rows = t.gather_rows(sig, &[0, 2, 2, 3])?;
        let logit = t.matmul(rows, c)?;
        let p1 = t.activate(logit, Activation::Sigmoid)?;
        let p1 = t.clamp(p1, 1e-7, 1.0 - 1e-7)?;
        let l = t.bce(p1, &[1.0, 0.0, 1.0, 0.0])?;
        let g = t.backward(l)?;
        let grads = vars.iter().zip(p).map(|(&v, m)| g.get_or_zeros(v, m.shape())).collect();
        Ok((t.value(l).get(0, 0), grads))
    }

    #[test]
    fn composite_gradient_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let agg = Arc::new(SparseAggregator::neighbor_sum(&[
            vec![1, 2],
            vec![0],
            vec![0, 3],
            vec![2],
        ]));
        let p = vec![
            random(4, 3, &mut rng),
            random(3, 3, &mut rng),
            random(1, 3, &mut rng),
            Matrix::scalar(0.1).unwrap(),
            random(6, 1, &mut rng),
        ];
        let cfg = GradCheckConfig {
            samples: 1000,
            ..Default::default()
        };
        let rep = grad_check(|q| composite(q, &agg), &p, &cfg).unwrap();
        assert!(rep.coordinates >= 29);
        assert!(rep.max_rel_error < 1e-6, "{rep:?}");
    }

    #[test]
    fn bce_values_and_label_check() {
        assert!((bce_value(&[0.5, 0.5], &[1.0, 0.0]).unwrap() - 2f64.ln()).abs() < 1e-15);
        let near = bce_value(&[1.0 - 1e-7], &[1.0]).unwrap();
        assert!(near > 0.0 && near < 1.1e-7);
        assert!(matches!(bce_value(&[0.5], &[2.0]), Err(Error::Data(_))));
    }

    #[test]
    fn aggregation_is_order_independent() {
        // Node 0 sees the same multiset of neighbor rows under two numberings.
        let x = Matrix::from_rows(&[vec![0.0], vec![0.1], vec![0.2], vec![0.3]]).unwrap();
        let a = SparseAggregator::neighbor_sum(&[vec![1, 2, 3], vec![0], vec![0], vec![0]]);
        let xp = Matrix::from_rows(&[vec![0.0], vec![0.3], vec![0.1], vec![0.2]]).unwrap();
        let b = SparseAggregator::neighbor_sum(&[vec![1, 2, 3], vec![0], vec![0], vec![0]]);
        assert_eq!(a.apply(&x).get(0, 0).to_bits(), b.apply(&xp).get(0, 0).to_bits());
    }
}
