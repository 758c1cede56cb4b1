//! Quantizer, decoder, stop-gradient, causal masking, beam search and mixture sampling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use vqmpt::env2d::Config2D;
use vqmpt::numerics::{GaussianParams, Graph, NumericsError, Tensor};
use vqmpt::stage1::{Codebook, Stage1Config, Stage1Model};
use vqmpt::stage2::{
    beam_search, brute_force_best, build_gmm, labels_from_indices, ContextScorer, Gmm, GmmSampler, NextTokenModel,
    Stage2Config, Stage2Model,
};
use vqmpt::planners::Sampler;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn unit(r: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..d).map(|_| r.sample(StandardNormal)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

#[test]
fn quantizer_matches_exhaustive_scan() {
    let mut r = rng(1);
    let cb = Codebook::random(32, 8, 64, &mut r).unwrap();
    for _ in 0..10_000 {
        let q = unit(&mut r, 8);
        // Independent oracle: largest inner product, lowest index on ties.
        let dots: Vec<f64> = (0..32).map(|i| cb.code(i).iter().zip(&q).map(|(a, b)| a * b).sum()).collect();
        let best = (0..32).fold(0, |b, i| if dots[i] > dots[b] { i } else { b });
        let mut sorted = dots.clone();
        sorted.sort_by(|a, b| b.total_cmp(a));
        if sorted[0] - sorted[1] < 1e-9 {
            continue;
        }
        assert_eq!(cb.quantize(&q).unwrap(), best);
    }
    assert!(matches!(cb.quantize(&[0.0; 8]), Err(NumericsError::DegenerateInput(_))));
}

#[test]
fn decoder_covariances_are_positive_definite() {
    let mut r = rng(2);
    for m in 0..10 {
        let model = Stage1Model::new(Stage1Config::default(), &mut r).unwrap();
        for k in 0..1000 {
            let code = unit(&mut r, 8);
            let s = model.decode_to_gaussian(&code).unwrap().covariance();
            let (a, b, c) = (s[0][0], s[0][1], s[1][1]);
            let min_eig = (a + c) / 2.0 - ((a - c) / 2.0).hypot(b);
            assert!(min_eig > 0.0, "model {m} draw {k}: {s:?}");
        }
    }
}

fn small_stage1(r: &mut ChaCha8Rng) -> (Stage1Model, Codebook) {
    let cfg = Stage1Config {
        d_model: 16,
        d_factor: 4,
        codes: 8,
        layers: 1,
        heads: 2,
        d_k: Some(4),
        d_v: Some(4),
        mlp_hidden: 16,
        decoder_hidden: 8,
        entropy_samples: 0,
        ..Stage1Config::default()
    };
    let m = Stage1Model::new(cfg.clone(), r).unwrap();
    let cb = Codebook::random(cfg.codes, cfg.d_factor, cfg.d_model, r).unwrap();
    (m, cb)
}

#[test]
fn stop_gradients_are_exact() {
    let mut r = rng(3);
    for _ in 0..20 {
        let (model, cb) = small_stage1(&mut r);
        let n = r.random_range(2..10);
        let traj: Vec<Config2D> = (0..n).map(|_| Config2D::new(r.random_range(0.0..1.0), r.random_range(0.0..1.0))).collect();

        let mut g = Graph::new();
        let p = model.store.bind(&mut g, true);
        let codes = g.param(cb.codes.clone());
        let t = model.vq_terms(&mut g, &p, &cb, codes, &traj, None).unwrap();
        let grads = g.backward(t.codebook).unwrap();
        for (i, gr) in p.collect(&grads, &model.store).iter().enumerate() {
            if model.is_encoder_param(i) {
                assert!(gr.data().iter().all(|&v| v == 0.0), "codebook term reached encoder param {i}");
            }
        }
        assert!(grads.get(codes).is_some_and(|t| t.data().iter().any(|&v| v != 0.0)));

        let grads = g.backward(t.commitment).unwrap();
        assert!(grads.get(codes).is_none_or(|t| t.data().iter().all(|&v| v == 0.0)), "commitment reached codes");
        let enc: Vec<_> = p.collect(&grads, &model.store).into_iter().enumerate().filter(|(i, _)| model.is_encoder_param(*i)).collect();
        assert!(enc.iter().any(|(_, t)| t.data().iter().any(|&v| v != 0.0)));
    }
}

fn tiny_stage2(r: &mut ChaCha8Rng, codes: usize, max_len: usize) -> (Stage2Model, Codebook) {
    let cfg = Stage2Config {
        d_model: 12,
        patch: 4,
        resolution: 8,
        cross_layers: 1,
        ar_layers: 2,
        heads: 2,
        d_k: Some(6),
        d_v: Some(6),
        mlp_hidden: 16,
        embed_hidden: 8,
        codes,
        d_factor: 4,
        max_len,
        ..Stage2Config::default()
    };
    let m = Stage2Model::new(cfg.clone(), r).unwrap();
    let cb = Codebook::random(codes, cfg.d_factor, cfg.d_model, r).unwrap();
    (m, cb)
}

fn random_context(model: &Stage2Model, r: &mut ChaCha8Rng) -> Tensor {
    let cells: Vec<f64> = (0..64).map(|_| if r.random_bool(0.3) { 1.0 } else { 0.0 }).collect();
    let patches = Tensor::new(vec![4, 16], cells).unwrap();
    let mut g = Graph::new();
    let p = model.store.bind(&mut g, false);
    let s = Config2D::new(r.random_range(0.0..1.0), r.random_range(0.0..1.0));
    let e = Config2D::new(r.random_range(0.0..1.0), r.random_range(0.0..1.0));
    let m = model.context(&mut g, &p, &patches, s, e).unwrap();
    g.value(m).clone()
}

#[test]
fn future_positions_never_change_earlier_logits() {
    let mut r = rng(4);
    for _ in 0..30 {
        let (model, cb) = tiny_stage2(&mut r, 6, 8);
        let ctx = random_context(&model, &mut r);
        let len = r.random_range(2..7);
        let prefix: Vec<usize> = (0..len).map(|_| r.random_range(0..6)).collect();
        let j = r.random_range(0..len);
        let mut mutated = prefix.clone();
        mutated[j] = (mutated[j] + 1 + r.random_range(0..5)) % 6;
        let logits = |pre: &[usize]| {
            let mut g = Graph::new();
            let p = model.store.bind(&mut g, false);
            let c = g.constant(ctx.clone());
            let l = model.ar_logits(&mut g, &p, &cb, c, pre).unwrap();
            g.value(l).clone()
        };
        let (a, b) = (logits(&prefix), logits(&mutated));
        // Row k sees prefix[..k]; rows up to j never see position j.
        for k in 0..=j {
            assert_eq!(a.row(k), b.row(k), "row {k} changed after mutating position {j}");
        }
        assert_ne!(a.row(j + 1), b.row(j + 1));
    }
}

#[test]
fn wide_beam_equals_brute_force() {
    let mut r = rng(5);
    for case in 0..50 {
        let (model, cb) = tiny_stage2(&mut r, 4, 4);
        let context = random_context(&model, &mut r);
        let scorer = ContextScorer { model: &model, codebook: &cb, context };
        let exhaustive = scorer.classes().pow(4);
        let beam = beam_search(&scorer, exhaustive, 4).unwrap();
        let best = brute_force_best(&scorer, 4).unwrap();
        assert_eq!(beam.sequence, best.sequence, "case {case}");
        assert_eq!(*beam.sequence.last().unwrap(), 4);
        assert!(beam.sequence.len() <= 4);
    }
}

#[test]
fn label_sequences_are_well_formed() {
    let mut r = rng(6);
    for _ in 0..500 {
        let n = r.random_range(1..60);
        let raw: Vec<usize> = (0..n).map(|_| r.random_range(0..5)).collect();
        let max_len = r.random_range(2..14);
        let l = labels_from_indices(&raw, 32, max_len);
        assert!(l.len() <= max_len && l.len() >= 2);
        assert_eq!(*l.last().unwrap(), 32);
        assert!(l[..l.len() - 1].iter().all(|&c| c < 32));
        assert!(l.windows(2).all(|w| w[0] != w[1]));
        assert_eq!(l[0], raw[0]);
    }
}

/// Standard normal CDF.
fn phi(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

#[test]
fn mixture_samples_match_the_analytic_density() {
    let mut r = rng(7);
    let comps = vec![
        GaussianParams::new(vec![0.3, 0.4], vec![0.5], vec![0.010, 0.004]).unwrap(),
        GaussianParams::new(vec![0.7, 0.6], vec![-0.8], vec![0.004, 0.006]).unwrap(),
        GaussianParams::new(vec![0.5, 0.2], vec![0.0], vec![0.020, 0.002]).unwrap(),
    ];
    let gmm = Gmm::new(comps.clone()).unwrap();
    let m = 100_000;
    let mut sampler = GmmSampler::new(gmm.clone(), 11);
    let pts: Vec<Config2D> = (0..m).map(|_| sampler.draw()).collect();
    let k = comps.len() as f64;
    for _ in 0..3 {
        // Project onto a random direction: each component is N(uᵀμ, uᵀΣu).
        let u = unit(&mut r, 2);
        let proj: Vec<(f64, f64)> = comps
            .iter()
            .map(|c| {
                let s = c.covariance();
                let mean = u[0] * c.mean[0] + u[1] * c.mean[1];
                let var = u[0] * u[0] * s[0][0] + 2.0 * u[0] * u[1] * s[0][1] + u[1] * u[1] * s[1][1];
                (mean, var.sqrt())
            })
            .collect();
        let cdf = |x: f64| proj.iter().map(|(mu, sd)| phi((x - mu) / sd)).sum::<f64>() / k;
        // Equiprobable bin edges by bisection on the analytic CDF.
        let edges: Vec<f64> = (1..16)
            .map(|i| {
                let target = i as f64 / 16.0;
                let (mut lo, mut hi) = (-10.0, 10.0);
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if cdf(mid) < target {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                0.5 * (lo + hi)
            })
            .collect();
        let mut counts = [0usize; 16];
        for q in &pts {
            let x = u[0] * q.x + u[1] * q.y;
            counts[edges.partition_point(|&e| e < x)] += 1;
        }
        let expected = m as f64 / 16.0;
        let stat: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        // 0.999 quantile of chi-square with 15 degrees of freedom.
        assert!(stat < 37.697, "chi-square {stat} along {u:?}");
    }
    let mean = gmm.mean();
    for axis in 0..2 {
        let within: f64 = comps.iter().map(|c| c.covariance()[axis][axis]).sum::<f64>() / k;
        let mu_axis = if axis == 0 { mean.x } else { mean.y };
        let between: f64 = comps.iter().map(|c| (c.mean[axis] - mu_axis).powi(2)).sum::<f64>() / k;
        let sd = (within + between).sqrt();
        let sample_mean = pts.iter().map(|q| if axis == 0 { q.x } else { q.y }).sum::<f64>() / m as f64;
        assert!((sample_mean - mu_axis).abs() < 3.0 * sd / (m as f64).sqrt(), "axis {axis}");
    }
}

#[test]
fn goal_only_prediction_is_empty() {
    let mut r = rng(8);
    let (model, cb) = small_stage1(&mut r);
    assert!(matches!(build_gmm(&model, &cb, &[8]), Err(NumericsError::Domain(_))));
    let g = build_gmm(&model, &cb, &[1, 3, 8]).unwrap();
    assert_eq!(g.components.len(), 2);
    assert!(build_gmm(&model, &cb, &[9]).is_err());
}
