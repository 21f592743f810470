//! Regression thresholds fixed from seeded Monte Carlo and end-to-end runs.
//! Each comment gives the value measured when the threshold was set.

use dppsel::diversity::{log_det_distance, DiversityOptions, Reference, ReferenceSpec};
use dppsel::features::{synthesize, SynthSpec};
use dppsel::kernels::KernelSpec;
use dppsel::rng;
use dppsel::sketch::{row_project, sketch_dataset, sparse_jl, LayerGradient, SketchPlan};
use dppsel::toymodel::{gradients, make_toy_corpus, ToyModel, LAYER_NAME, TOY_DIM, TOY_VOCAB};

fn unit_rbf() -> KernelSpec {
    KernelSpec::rbf(1.0).unit_rows(true)
}

fn sq_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

#[test]
fn row_projection_preserves_squared_norm() {
    let mut within = 0;
    for t in 0..100u64 {
        let mut r = rng::seeded(1000 + t);
        let mut v = vec![0.0; 64 * 256];
        rng::fill_standard_normal(&mut r, &mut v);
        let g = LayerGradient::new("W", 64, 256, v).unwrap();
        let plan = SketchPlan::from_seed(64, 8, 1, 500 + t, &["W"]).unwrap();
        let out = sq_norm(&row_project(&g, &plan).unwrap());
        if (out - g.frobenius_sq()).abs() / g.frobenius_sq() < 0.5 {
            within += 1;
        }
    }
    // 100 of 100, p95 distortion 0.047
    assert!(within >= 95, "{within}/100");
}

#[test]
fn sparse_jl_preserves_squared_norm() {
    let mut within = 0;
    for t in 0..100u64 {
        let mut r = rng::seeded(2000 + t);
        let mut v = vec![0.0; 10_000];
        rng::fill_standard_normal(&mut r, &mut v);
        let out = sq_norm(&sparse_jl(&v, 1024, 8, 3000 + t).unwrap());
        let norm = sq_norm(&v);
        if (out - norm).abs() / norm < 0.2 {
            within += 1;
        }
    }
    // 100 of 100, p95 distortion 0.073
    assert!(within >= 95, "{within}/100");
}

#[test]
fn composed_sketch_preserves_pairwise_distances() {
    let layers = [("W1", 100, 500), ("W2", 50, 1000)];
    let names: Vec<&str> = layers.iter().map(|l| l.0).collect();
    let plan = SketchPlan::from_seed(64, 2048, 8, 77, &names).unwrap();
    let sets: Vec<Vec<LayerGradient>> = (0..50u64)
        .map(|e| {
            let mut r = rng::seeded(9000 + e);
            layers
                .iter()
                .map(|&(name, m, k)| {
                    let mut v = vec![0.0; m * k];
                    rng::fill_standard_normal(&mut r, &mut v);
                    LayerGradient::new(name, m, k, v).unwrap()
                })
                .collect()
        })
        .collect();
    let sk = sketch_dataset(&sets, &plan, false).unwrap();
    let (mut within, mut total) = (0, 0);
    for i in 0..50 {
        for j in i + 1..50 {
            let full: f64 = sets[i]
                .iter()
                .zip(&sets[j])
                .flat_map(|(a, b)| a.values().iter().zip(b.values()))
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt();
            let s: f64 = sk.row(i).iter().zip(sk.row(j)).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
            total += 1;
            if (s - full).abs() / full <= 0.15 {
                within += 1;
            }
        }
    }
    // 1225 of 1225, p95 distortion 0.035
    assert!(within * 10 >= total * 9, "{within}/{total}");
}

#[test]
fn duplicated_data_is_less_diverse_than_a_fresh_sample() {
    let reference = Reference::build(ReferenceSpec::hypersphere(400, 64, 1, unit_rbf())).unwrap();
    let opts = DiversityOptions::default();
    let dup = reference
        .measure(&synthesize(&SynthSpec::duplicated(400, 64, 4, 5)).unwrap(), &opts)
        .unwrap()
        .ldd;
    let fresh = reference
        .measure(&synthesize(&SynthSpec::hypersphere(400, 64, 5)).unwrap(), &opts)
        .unwrap()
        .ldd;
    // margin 20.438 nats
    assert!(dup - fresh > 20.0, "dup {dup}, fresh {fresh}");
}

#[test]
fn fresh_sample_sits_near_the_reference() {
    let reference = Reference::build(ReferenceSpec::hypersphere(1000, 256, 1, unit_rbf())).unwrap();
    for s in 0..3u64 {
        let x = synthesize(&SynthSpec::hypersphere(1000, 256, 500 + s)).unwrap();
        let ldd = reference.measure(&x, &DiversityOptions::default()).unwrap().ldd;
        // |ldd| at most 4.2e-4 over five seeds
        assert!(ldd.abs() <= 1e-3, "seed {s}: {ldd}");
    }
}

#[test]
fn reference_seed_barely_moves_ldd() {
    let x = synthesize(&SynthSpec::clustered(2000, 256, 20, 0.1, 4)).unwrap();
    let a = log_det_distance(&x, &unit_rbf(), &ReferenceSpec::hypersphere(2000, 4096, 1, unit_rbf())).unwrap();
    let b = log_det_distance(&x, &unit_rbf(), &ReferenceSpec::hypersphere(2000, 4096, 2, unit_rbf())).unwrap();
    // difference 2.6e-5
    assert!((a.ldd - b.ldd).abs() < 0.02, "{} vs {}", a.ldd, b.ldd);
}

#[test]
fn redundant_toy_corpus_has_larger_ldd() {
    let ldd = |redundancy: f64| {
        let model = ToyModel::random(TOY_VOCAB, TOY_DIM, 3, 1.0).unwrap();
        let (examples, _) = make_toy_corpus(500, 3, redundancy).unwrap();
        let grads = gradients(&model, &examples).unwrap();
        let plan = SketchPlan::from_seed(32, 1024, 8, 3, &[LAYER_NAME]).unwrap();
        let x = sketch_dataset(&grads, &plan, true).unwrap();
        log_det_distance(&x, &unit_rbf(), &ReferenceSpec::hypersphere(500, 1024, 1, unit_rbf()))
            .unwrap()
            .ldd
    };
    let (high, low) = (ldd(0.9), ldd(0.1));
    // 1.773 vs 0.180
    assert!(high > low + 1.0, "{high} vs {low}");
}
