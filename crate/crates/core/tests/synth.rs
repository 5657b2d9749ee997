mod common;

use common::*;
use reshmm::inference::{loglik, viterbi};
use reshmm::model::ModelParams;
use reshmm::synth::{presets, sample_corpus, sample_waveform, waveform_rng, GeneratorConfig};

#[test]
fn first_sample_mean() {
    let p = presets::demo();
    let n = 100_000;
    let mut sum = 0.0;
    for i in 0..n {
        let mut r = waveform_rng(17, i);
        let (w, _) = sample_waveform(&p, "x", &mut r, Some(1)).unwrap();
        sum += w.values()[0];
    }
    let st = &p.states[0];
    let mean = sum / n as f64;
    let se = ((st.psi.0[0][0] + p.sigma2) / n as f64).sqrt();
    assert!((mean - st.beta.0[0]).abs() < 3.0 * se, "{mean} vs {}", st.beta.0[0]);
}

#[test]
fn duration_mean_is_one_plus_lambda() {
    let mut p = presets::demo();
    p.d_max = 200;
    let (_, truth) = sample_corpus(&GeneratorConfig { params: p.clone(), n: 4000, seed: 3, t_cap: None }).unwrap();
    for k in 0..p.num_states() {
        let d: Vec<f64> = truth
            .iter()
            .flat_map(|t| t.segments.iter())
            .filter(|s| s.state == k + 1)
            .map(|s| s.duration as f64)
            .collect();
        let lambda = p.states[k].lambda;
        let mean = d.iter().sum::<f64>() / d.len() as f64;
        let se = (lambda / d.len() as f64).sqrt();
        assert!((mean - (1.0 + lambda)).abs() < 3.0 * se, "state {k}: {mean}");
    }
}

#[test]
fn ground_truth_tiles_waveforms() {
    let (c, truth) = sample_corpus(&GeneratorConfig { params: presets::demo(), n: 50, seed: 4, t_cap: Some(30) }).unwrap();
    for (w, t) in c.waveforms().iter().zip(&truth) {
        assert_eq!(w.id(), t.id);
        let total: usize = t.segments.iter().map(|s| s.duration).sum();
        assert_eq!(total, w.len());
        assert!(w.len() <= 30);
        assert_eq!(t.u.len(), t.segments.len());
        assert!(t.segments.iter().all(|s| s.duration <= presets::demo().d_max));
    }
}

#[test]
fn sampling_is_deterministic_and_order_free() {
    let cfg = GeneratorConfig { params: presets::class_a(), n: 20, seed: 99, t_cap: None };
    let (a, ta) = sample_corpus(&cfg).unwrap();
    let (b, tb) = sample_corpus(&cfg).unwrap();
    assert_eq!(a.waveforms(), b.waveforms());
    assert_eq!(ta, tb);
    let mut r = waveform_rng(99, 7);
    let (w7, _) = sample_waveform(&cfg.params, "w00007", &mut r, None).unwrap();
    assert_eq!(&w7, &a.waveforms()[7]);
}

#[test]
fn true_parameters_beat_perturbed() {
    let p = presets::demo();
    let (c, _) = sample_corpus(&GeneratorConfig { params: p.clone(), n: 30, seed: 5, t_cap: None }).unwrap();
    let total = |q: &ModelParams| c.waveforms().iter().map(|w| loglik(w, q).unwrap()).sum::<f64>();
    let base = total(&p);
    let mut perturbations = Vec::new();
    for k in 0..p.num_states() {
        let mut q = p.clone();
        q.states[k].beta.0[0] += 0.5;
        perturbations.push(q);
        let mut q = p.clone();
        q.states[k].beta.0[1] += 0.1;
        perturbations.push(q);
        let mut q = p.clone();
        q.states[k].lambda *= 1.5;
        perturbations.push(q);
    }
    let mut q = p.clone();
    q.sigma2 *= 2.0;
    perturbations.push(q);
    for q in &perturbations {
        assert!(total(q) < base);
    }
}

#[test]
fn viterbi_recovers_boundaries_in_low_noise() {
    let mut p = presets::demo();
    p.sigma2 = 0.0025;
    let (c, truth) = sample_corpus(&GeneratorConfig { params: p.clone(), n: 40, seed: 6, t_cap: None }).unwrap();
    let (mut hit, mut total) = (0, 0);
    for (w, t) in c.waveforms().iter().zip(&truth) {
        let seg = viterbi(w, &p).unwrap();
        let found: Vec<usize> = seg.segments.iter().skip(1).map(|s| s.start).collect();
        for s in t.segments.iter().skip(1) {
            total += 1;
            if found.iter().any(|&f| f.abs_diff(s.start) <= 1) {
                hit += 1;
            }
        }
    }
    let acc = hit as f64 / total as f64;
    assert!(acc >= 0.9, "boundary accuracy {acc}");
}

#[test]
fn rng_helper_is_seeded() {
    let mut a = rng(1);
    let mut b = rng(1);
    assert_eq!(normal(&mut a), normal(&mut b));
}
