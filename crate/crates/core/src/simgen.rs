//! Seeded synthetic data: static, abruptly changing and gradually drifting
//! regressions, and the three-regime Gaussian series used to study the DMA
//! weight recursion.
//!
//! All draws come from ChaCha20 (`rand_chacha::ChaCha20Rng::seed_from_u64`)
//! with standard normals from `rand_distr::StandardNormal`. Replication `r`
//! of an experiment seeded with `s` uses seed `replication_seed(s, r)`, a
//! SplitMix64 mix of the two. Within a time step the draw order is the
//! covariates, then the state noise (drift only), then the measurement noise.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::dlm::{self, DlmState};
use crate::error::{Error, Result};

/// Number of covariates in the simulation designs.
pub const DEFAULT_DIM: usize = 5;

/// Coefficients of the static design.
pub const STATIC_THETA: [f64; 5] = [-2.0, -1.0, 1.0, 2.0, 3.0];

/// Initial coefficients of the abrupt-change design.
pub const ABRUPT_THETA: [f64; 5] = [3.0, 2.0, 1.0, -1.0, -2.0];

/// Break times and multipliers of the abrupt-change design.
pub const ABRUPT_BREAKS: [(usize, f64); 3] = [(100, 0.5), (400, 1.4), (700, 0.7)];

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of replication `rep` within an experiment seeded with `seed`.
pub fn replication_seed(seed: u64, rep: u64) -> u64 {
    splitmix64(seed ^ splitmix64(rep.wrapping_add(1)))
}

pub fn rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

fn normal(rng: &mut ChaCha20Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn normals(rng: &mut ChaCha20Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| normal(rng)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimMeta {
    pub kind: String,
    pub seed: u64,
    /// Generator parameters as `name=value` pairs.
    pub params: Vec<(String, String)>,
}

/// A simulated series; row `t` of every matrix refers to time `t + 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSeries {
    pub x: Vec<Vec<f64>>,
    pub y: Vec<f64>,
    pub theta_path: Vec<Vec<f64>>,
    pub meta: SimMeta,
}

impl SimSeries {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.first().map_or(0, Vec::len)
    }

    /// The series as a dataset with predictors `x1..xd` and time labels `1..=T`.
    pub fn to_dataset(&self) -> Result<Dataset> {
        let names = (1..=self.dim()).map(|j| format!("x{j}")).collect();
        Dataset::from_columns(self.y.clone(), self.x.clone(), names)
    }
}

/// Piecewise-constant coefficients: `segments[i] = (start time, θ)`, with the
/// first segment starting at time 1.
pub fn gen_piecewise(
    segments: &[(usize, Vec<f64>)],
    t_len: usize,
    seed: u64,
    noise_sd: f64,
) -> Result<SimSeries> {
    let (first_start, first_theta) = segments
        .first()
        .ok_or(Error::Empty("coefficient segments"))?;
    if *first_start != 1 {
        return Err(Error::Config(
            "the first coefficient segment must start at t = 1".into(),
        ));
    }
    let d = first_theta.len();
    for pair in segments.windows(2) {
        if pair[1].0 <= pair[0].0 {
            return Err(Error::Config(
                "segment start times must be strictly increasing".into(),
            ));
        }
    }
    if segments.iter().any(|(_, th)| th.len() != d) {
        return Err(Error::Config(
            "all segments need the same coefficient dimension".into(),
        ));
    }
    if t_len == 0 {
        return Err(Error::Config("series length must be >= 1".into()));
    }
    if !(noise_sd >= 0.0) {
        return Err(Error::Config(
            "noise standard deviation must be >= 0".into(),
        ));
    }
    let mut rng = rng(seed);
    let mut series = SimSeries {
        x: Vec::with_capacity(t_len),
        y: Vec::with_capacity(t_len),
        theta_path: Vec::with_capacity(t_len),
        meta: SimMeta {
            kind: "piecewise".into(),
            seed,
            params: vec![
                ("T".into(), t_len.to_string()),
                ("segments".into(), segments.len().to_string()),
            ],
        },
    };
    let mut seg = 0;
    for t in 1..=t_len {
        while seg + 1 < segments.len() && segments[seg + 1].0 <= t {
            seg += 1;
        }
        let theta = segments[seg].1.clone();
        let x = normals(&mut rng, d);
        let mean: f64 = x.iter().zip(&theta).map(|(a, b)| a * b).sum();
        let y = mean + noise_sd * normal(&mut rng);
        series.x.push(x);
        series.y.push(y);
        series.theta_path.push(theta);
    }
    Ok(series)
}

/// Constant coefficients `θ₀`, `x_t ~ N(0, I)`, unit-variance noise.
pub fn gen_static(theta0: &[f64], t_len: usize, seed: u64) -> Result<SimSeries> {
    let mut s = gen_piecewise(&[(1, theta0.to_vec())], t_len, seed, 1.0)?;
    s.meta.kind = "static".into();
    s.meta.params = vec![
        ("T".into(), t_len.to_string()),
        ("theta0".into(), format!("{theta0:?}")),
    ];
    Ok(s)
}

/// Coefficients scaled by `multiplier` at each break time: `θ_t = m θ_{t-1}`
/// when `t` is a break, `θ_t = θ_{t-1}` otherwise.
pub fn gen_abrupt(
    theta0: &[f64],
    breaks: &[(usize, f64)],
    t_len: usize,
    seed: u64,
) -> Result<SimSeries> {
    let mut segments = vec![(1, theta0.to_vec())];
    let mut prev = 1;
    for &(time, mult) in breaks {
        if time <= prev || time >= t_len {
            return Err(Error::Config(format!(
                "break times must be strictly increasing within (1, {t_len}), got {time}"
            )));
        }
        if !mult.is_finite() {
            return Err(Error::Config(format!(
                "break multiplier must be finite, got {mult}"
            )));
        }
        let theta = segments
            .last()
            .unwrap()
            .1
            .iter()
            .map(|v| v * mult)
            .collect();
        segments.push((time, theta));
        prev = time;
    }
    let mut s = gen_piecewise(&segments, t_len, seed, 1.0)?;
    s.meta.kind = "abrupt".into();
    s.meta.params = vec![
        ("T".into(), t_len.to_string()),
        ("theta0".into(), format!("{theta0:?}")),
        ("breaks".into(), format!("{breaks:?}")),
    ];
    Ok(s)
}

/// A gradual-drift series together with the state-noise covariances used.
#[derive(Debug, Clone)]
pub struct DriftTrace {
    pub series: SimSeries,
    /// `W_t` for `t = 2..=T` (index 0 is `W_2`).
    pub state_noise: Vec<DMatrix<f64>>,
}

/// Random-walk coefficients with the discount state noise `W_t = (1-λ)/λ · C_{t-1}`.
///
/// `C_t` comes from a forgetting-factor filter run in lockstep on the emitted
/// responses with the true `λ` and prior scale `g`; `θ₀ = 0`.
pub fn gen_drift(
    lambda_true: f64,
    t_len: usize,
    seed: u64,
    g: f64,
    dim: usize,
) -> Result<SimSeries> {
    gen_drift_traced(lambda_true, t_len, seed, g, dim).map(|tr| tr.series)
}

pub fn gen_drift_traced(
    lambda_true: f64,
    t_len: usize,
    seed: u64,
    g: f64,
    dim: usize,
) -> Result<DriftTrace> {
    if !(lambda_true > 0.0 && lambda_true < 1.0) {
        return Err(Error::Config(format!(
            "drift lambda must lie in (0, 1), got {lambda_true}"
        )));
    }
    if t_len == 0 || dim == 0 {
        return Err(Error::Config(
            "drift series needs T >= 1 and dimension >= 1".into(),
        ));
    }
    let mut rng = rng(seed);
    let discount = (1.0 - lambda_true) / lambda_true;
    let mut theta = DVector::zeros(dim);
    let mut series = SimSeries {
        x: Vec::with_capacity(t_len),
        y: Vec::with_capacity(t_len),
        theta_path: Vec::with_capacity(t_len),
        meta: SimMeta {
            kind: "drift".into(),
            seed,
            params: vec![
                ("T".into(), t_len.to_string()),
                ("lambda".into(), lambda_true.to_string()),
                ("g".into(), g.to_string()),
                ("dim".into(), dim.to_string()),
            ],
        },
    };
    let mut state_noise = Vec::with_capacity(t_len.saturating_sub(1));
    let mut filter: Option<DlmState> = None;
    for _ in 1..=t_len {
        let x = DVector::from_vec(normals(&mut rng, dim));
        if let Some(f) = &filter {
            let w = &f.cov * discount;
            let omega = sample_gaussian(&w, &mut rng);
            theta += omega;
            state_noise.push(w);
        }
        let y = x.dot(&theta) + normal(&mut rng);
        filter = Some(match filter {
            None => dlm::init_dlm(y, &x, g)?,
            Some(f) => dlm::update(&f, &x, y, lambda_true)?,
        });
        series.x.push(x.iter().copied().collect());
        series.y.push(y);
        series.theta_path.push(theta.iter().copied().collect());
    }
    Ok(DriftTrace {
        series,
        state_noise,
    })
}

/// Draws from `N(0, cov)` through the symmetric eigendecomposition; tiny
/// negative eigenvalues from rounding are treated as zero.
fn sample_gaussian(cov: &DMatrix<f64>, rng: &mut ChaCha20Rng) -> DVector<f64> {
    let eig = cov.clone().symmetric_eigen();
    let z = DVector::from_vec(normals(rng, cov.nrows()));
    let scaled = DVector::from_iterator(
        z.len(),
        z.iter()
            .zip(eig.eigenvalues.iter())
            .map(|(zi, ev)| zi * ev.max(0.0).sqrt()),
    );
    eig.eigenvectors * scaled
}

/// One regime of the three-model design.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Regime {
    /// First time step (1-based) of the regime.
    pub start: usize,
    pub mean: f64,
    pub var: f64,
}

/// `N(1, 4)` for `t ≤ 100`, `N(0, 0.64)` for `101..=200`, `N(-2.5, 0.09)` after.
pub fn three_model_regimes() -> Vec<Regime> {
    vec![
        Regime {
            start: 1,
            mean: 1.0,
            var: 4.0,
        },
        Regime {
            start: 101,
            mean: 0.0,
            var: 0.64,
        },
        Regime {
            start: 201,
            mean: -2.5,
            var: 0.09,
        },
    ]
}

/// Samples each `y_t` from the active regime; returns the series and the
/// zero-based regime label of every step.
pub fn gen_three_model(
    t_len: usize,
    seed: u64,
    regimes: &[Regime],
) -> Result<(SimSeries, Vec<usize>)> {
    if regimes.first().map(|r| r.start) != Some(1) {
        return Err(Error::Config("the first regime must start at t = 1".into()));
    }
    if regimes.windows(2).any(|w| w[1].start <= w[0].start) {
        return Err(Error::Config(
            "regime starts must be strictly increasing".into(),
        ));
    }
    if regimes
        .iter()
        .any(|r| !(r.var > 0.0) || !r.mean.is_finite())
    {
        return Err(Error::Config("regime variances must be positive".into()));
    }
    let mut rng = rng(seed);
    let mut y = Vec::with_capacity(t_len);
    let mut labels = Vec::with_capacity(t_len);
    let mut theta_path = Vec::with_capacity(t_len);
    let mut active = 0;
    for t in 1..=t_len {
        while active + 1 < regimes.len() && regimes[active + 1].start <= t {
            active += 1;
        }
        let r = regimes[active];
        y.push(r.mean + r.var.sqrt() * normal(&mut rng));
        labels.push(active);
        theta_path.push(vec![r.mean]);
    }
    let series = SimSeries {
        x: vec![Vec::new(); t_len],
        y,
        theta_path,
        meta: SimMeta {
            kind: "three-model".into(),
            seed,
            params: vec![
                ("T".into(), t_len.to_string()),
                ("regimes".into(), format!("{regimes:?}")),
            ],
        },
    };
    Ok((series, labels))
}

/// Three regimes over three predictors, each driven by a different subset:
/// `x1` alone, then `x2` alone, then `x1` and `x3`.
pub fn switching_segments() -> Vec<(usize, Vec<f64>)> {
    vec![
        (1, vec![2.0, 0.0, 0.0]),
        (101, vec![0.0, -2.0, 0.0]),
        (201, vec![1.0, 0.0, 1.5]),
    ]
}

/// The three-regime switching design with unit noise.
pub fn gen_switching(t_len: usize, seed: u64) -> Result<SimSeries> {
    let mut s = gen_piecewise(&switching_segments(), t_len, seed, 1.0)?;
    s.meta.kind = "switching".into();
    Ok(s)
}
