use adma_core::adaptive::{af_step, AdamConfig, AfState};
use adma_core::dlm::{self, DlmState};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

fn gaussian_series(rng: &mut ChaCha20Rng, d: usize, t_len: usize) -> (Vec<DVector<f64>>, Vec<f64>) {
    let theta = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let x: Vec<DVector<f64>> = (0..t_len)
        .map(|_| DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal)))
        .collect();
    let y = x
        .iter()
        .map(|xt| xt.dot(&theta) + rng.sample::<f64, _>(StandardNormal))
        .collect();
    (x, y)
}

/// Squared forecast errors `½ε_t²` of a fixed-λ filter, indexed by `t - 1`.
fn fixed_losses(x: &[DVector<f64>], y: &[f64], lambda: f64) -> Vec<f64> {
    let mut st = dlm::init_dlm(y[0], &x[0], 100.0).unwrap();
    let mut out = vec![0.0];
    for t in 1..y.len() {
        let e = y[t] - x[t].dot(&st.theta);
        out.push(0.5 * e * e);
        st = dlm::update(&st, &x[t], y[t], lambda).unwrap();
    }
    out
}

#[test]
fn recursive_gradient_matches_central_differences() {
    let h = 1e-5;
    let frozen = AdamConfig {
        gamma: 0.0,
        ..AdamConfig::default()
    };
    let mut rng = ChaCha20Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let (x, y) = gaussian_series(&mut rng, 5, 200);
        let lambda = rng.gen_range(0.9..0.999);
        let cfg = AdamConfig {
            lambda_init: lambda,
            ..frozen
        };
        let plus = fixed_losses(&x, &y, lambda + h);
        let minus = fixed_losses(&x, &y, lambda - h);
        let mut st = dlm::init_dlm(y[0], &x[0], 100.0).unwrap();
        let mut af = AfState::new(5, cfg).unwrap();
        for t in 1..y.len() {
            let step = af_step(&st, &af, &x[t], y[t]).unwrap();
            assert_eq!(step.af.lambda, lambda);
            if t + 1 > 3 {
                let fd = (plus[t] - minus[t]) / (2.0 * h);
                let rel = (step.gradient - fd).abs() / fd.abs().max(1.0);
                worst = worst.max(rel);
            }
            st = step.state;
            af = step.af;
        }
    }
    assert!(worst < 1e-3, "worst relative error {worst}");
}

#[test]
fn static_filter_with_known_variance_is_ridge() {
    let (d, t_len, g, v) = (5, 50, 100.0, 1.0);
    let mut rng = ChaCha20Rng::seed_from_u64(5);
    let (x, y) = gaussian_series(&mut rng, d, t_len);
    let mut st =
        DlmState::from_prior(DVector::zeros(d), DMatrix::identity(d, d) * g, v, 1).unwrap();
    for (xt, &yt) in x.iter().zip(&y) {
        st = dlm::update(&st, xt, yt, 1.0).unwrap();
        st.s = v;
    }
    let xm = DMatrix::from_fn(t_len, d, |i, j| x[i][j]);
    let yv = DVector::from_vec(y);
    let lhs = DMatrix::identity(d, d) / g + xm.transpose() * &xm / v;
    let rhs = xm.transpose() * yv / v;
    let ridge = lhs.lu().solve(&rhs).unwrap();
    let err = (&st.theta - &ridge).amax();
    assert!(err < 1e-8, "max abs difference {err}");
}
