//! Brute-force reference implementations shared by the integration tests.
//! Everything here is written against nalgebra dense matrices and explicit
//! enumeration, without touching the library's recursions.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use reshmm::linalg::{Mat2, Vec2};
use reshmm::model::{ModelParams, StateParams, WaveformSeries};

pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Random symmetric positive definite 2×2 with entries of order `scale`.
pub fn random_pd(rng: &mut ChaCha8Rng, scale: f64) -> Mat2 {
    let l00 = rng.gen_range(0.1..1.0) * scale.sqrt();
    let l10 = rng.gen_range(-0.5..0.5) * scale.sqrt();
    let l11 = rng.gen_range(0.05..0.5) * scale.sqrt();
    Mat2::new(l00 * l00, l00 * l10, l00 * l10, l10 * l10 + l11 * l11)
}

pub fn random_state(rng: &mut ChaCha8Rng) -> StateParams {
    let scale = rng.gen_range(0.05..2.0);
    StateParams {
        beta: Vec2::new(rng.gen_range(-3.0..3.0), rng.gen_range(-1.0..1.0)),
        lambda: rng.gen_range(0.3..5.0),
        psi: random_pd(rng, scale),
    }
}

/// Left-to-right transitions with random positive weights on every allowed
/// entry.
pub fn random_transitions(rng: &mut ChaCha8Rng, m: usize) -> Vec<Vec<f64>> {
    let mut a = vec![vec![0.0; m]; m + 1];
    for (i, row) in a.iter_mut().enumerate().take(m) {
        let w: Vec<f64> = (i..m).map(|_| rng.gen_range(0.2..1.0)).collect();
        let total: f64 = w.iter().sum();
        for (j, v) in (i..m).zip(w) {
            row[j] = v / total;
        }
    }
    a
}

pub fn random_model(rng: &mut ChaCha8Rng, m: usize, d_max: usize) -> ModelParams {
    ModelParams {
        a: random_transitions(rng, m),
        states: (0..m).map(|_| random_state(rng)).collect(),
        sigma2: rng.gen_range(0.1..2.0),
        d_max,
    }
}

pub fn random_waveform(rng: &mut ChaCha8Rng, id: &str, t: usize) -> WaveformSeries {
    let v = (0..t).map(|_| 2.0 * normal(rng)).collect();
    WaveformSeries::new(id, v).unwrap()
}

fn m2(m: &Mat2) -> Matrix2<f64> {
    Matrix2::new(m.0[0][0], m.0[0][1], m.0[1][0], m.0[1][1])
}

fn v2(v: &Vec2) -> Vector2<f64> {
    Vector2::new(v.0[0], v.0[1])
}

pub fn design(d: usize) -> DMatrix<f64> {
    DMatrix::from_fn(d, 2, |j, c| if c == 0 { 1.0 } else { j as f64 })
}

/// Dense Gaussian treatment of one segment: marginal log-density and the
/// conditional law of the random effect by Gaussian conditioning.
#[derive(Debug, Clone)]
pub struct DenseSegment {
    pub loglik: f64,
    pub u_hat: Vector2<f64>,
    pub u_cov: Matrix2<f64>,
}

pub fn dense_segment(y: &[f64], state: &StateParams, sigma2: f64) -> DenseSegment {
    let d = y.len();
    let x = design(d);
    let psi = DMatrix::from_column_slice(2, 2, m2(&state.psi).as_slice());
    let sigma = &x * &psi * x.transpose() + DMatrix::identity(d, d) * sigma2;
    let chol = sigma.clone().cholesky().expect("marginal covariance is PD");
    let r = DVector::from_column_slice(y) - &x * DVector::from_column_slice(v2(&state.beta).as_slice());
    let sinv_r = chol.solve(&r);
    let logdet: f64 = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let loglik = -0.5 * (d as f64 * LN_2PI + logdet + r.dot(&sinv_r));
    let pxt = &psi * x.transpose();
    let u = &pxt * &sinv_r;
    let cov = &psi - &pxt * chol.solve(&(&x * &psi));
    DenseSegment {
        loglik,
        u_hat: Vector2::new(u[0], u[1]),
        u_cov: Matrix2::new(cov[(0, 0)], cov[(0, 1)], cov[(1, 0)], cov[(1, 1)]),
    }
}

pub fn log_pmf(d: usize, lambda: f64) -> f64 {
    let mut lf = 0.0;
    for i in 2..d {
        lf += (i as f64).ln();
    }
    -lambda + (d - 1) as f64 * lambda.ln() - lf
}

/// Scoring convention for a singular prior covariance: diagonal jitter of
/// `1e-9 · trace/2` (or `1e-12` at zero trace), applied only when not PD.
pub fn scoring_psi(psi: &Mat2) -> Matrix2<f64> {
    let p = m2(psi);
    if p[(0, 0)] > 0.0 && p.determinant() > 0.0 {
        return p;
    }
    let tr = p.trace();
    let eps = if tr > 0.0 { 1e-9 * tr / 2.0 } else { 1e-12 };
    p + Matrix2::identity() * eps
}

/// `(state, start, duration)`, 0-based state and start.
pub type Seg = (usize, usize, usize);

pub fn enumerate(t: usize, m: usize, d_max: usize) -> Vec<Vec<Seg>> {
    fn go(pos: usize, t: usize, m: usize, d_max: usize, next_state: usize, cur: &mut Vec<Seg>, out: &mut Vec<Vec<Seg>>) {
        if pos == t {
            out.push(cur.clone());
            return;
        }
        for k in next_state..m {
            for d in 1..=d_max.min(t - pos) {
                cur.push((k, pos, d));
                go(pos + d, t, m, d_max, k + 1, cur, out);
                cur.pop();
            }
        }
    }
    let mut out = Vec::new();
    go(0, t, m, d_max, 0, &mut Vec::new(), &mut out);
    out
}

/// Everything the tests need to know about one waveform under one model,
/// obtained by listing every segmentation.
pub struct Oracle {
    pub segmentations: Vec<Vec<Seg>>,
    pub joints: Vec<f64>,
    pub loglik: f64,
    pub best: Option<usize>,
    /// Marginal posterior of each distinct segment.
    pub segment_probs: Vec<(Seg, f64)>,
    pub score_shape: f64,
    pub score_noise: f64,
    pub transitions: Vec<Vec<f64>>,
    pub dense: std::collections::HashMap<Seg, DenseSegment>,
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

pub fn oracle(y: &WaveformSeries, p: &ModelParams) -> Oracle {
    let vals = y.values();
    let m = p.num_states();
    let segmentations = enumerate(vals.len(), m, p.d_max);
    let mut dense = std::collections::HashMap::new();
    for segm in &segmentations {
        for &(k, s, d) in segm {
            dense
                .entry((k, s, d))
                .or_insert_with(|| dense_segment(&vals[s..s + d], &p.states[k], p.sigma2));
        }
    }
    let trans_log = |segm: &[Seg]| {
        let mut lp = p.a[0][segm[0].0].ln();
        for w in segm.windows(2) {
            lp += p.a[w[0].0 + 1][w[1].0].ln();
        }
        lp
    };
    let joints: Vec<f64> = segmentations
        .iter()
        .map(|segm| {
            let mut lp = trans_log(segm);
            for &(k, s, d) in segm {
                lp += log_pmf(d, p.states[k].lambda) + dense[&(k, s, d)].loglik;
            }
            lp
        })
        .collect();
    let loglik = log_sum_exp(&joints);
    let mut best: Option<usize> = None;
    for (i, &j) in joints.iter().enumerate() {
        if j == f64::NEG_INFINITY {
            continue;
        }
        match best {
            Some(b) if joints[b] >= j => {}
            _ => best = Some(i),
        }
    }
    let mut probs: std::collections::BTreeMap<Seg, f64> = Default::default();
    let mut shape = 0.0;
    let mut noise = 0.0;
    let mut transitions = vec![vec![0.0; m]; m + 1];
    for (segm, &j) in segmentations.iter().zip(&joints) {
        let w = (j - loglik).exp();
        if w == 0.0 {
            continue;
        }
        let mut sh = trans_log(segm);
        transitions[0][segm[0].0] += w;
        for pair in segm.windows(2) {
            transitions[pair[0].0 + 1][pair[1].0] += w;
        }
        let mut nz = 0.0;
        for &(k, s, d) in segm {
            *probs.entry((k, s, d)).or_insert(0.0) += w;
            let ds = &dense[&(k, s, d)];
            let psi = scoring_psi(&p.states[k].psi);
            let sm = ds.u_cov + ds.u_hat * ds.u_hat.transpose();
            let inv = psi.try_inverse().unwrap();
            sh += log_pmf(d, p.states[k].lambda) - LN_2PI
                - 0.5 * psi.determinant().ln()
                - 0.5 * (inv * sm).trace();
            let x = design(d);
            let coef = v2(&p.states[k].beta) + ds.u_hat;
            let fitted = &x * DVector::from_column_slice(coef.as_slice());
            let resid = DVector::from_column_slice(&vals[s..s + d]) - fitted;
            let c = DMatrix::from_column_slice(2, 2, ds.u_cov.as_slice());
            let tr = (&x * c * x.transpose()).trace();
            nz += -0.5 * d as f64 * (LN_2PI + p.sigma2.ln()) - (resid.norm_squared() + tr) / (2.0 * p.sigma2);
        }
        shape += w * sh;
        noise += w * nz;
    }
    Oracle {
        segmentations,
        joints,
        loglik,
        best,
        segment_probs: probs.into_iter().collect(),
        score_shape: shape,
        score_noise: noise,
        transitions,
        dense,
    }
}

pub fn close(a: f64, b: f64, tol: f64) -> bool {
    if a == b {
        return true;
    }
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}
