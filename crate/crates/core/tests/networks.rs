mod common;

use common::*;
use edmgan::diff::{grad_check, Tape, Tensor};
use edmgan::edm::*;
use edmgan::networks::*;
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_critic(rng: &mut ChaCha8Rng) -> SchNetCritic {
    SchNetCritic::new(
        CriticConfig { feature_dim: 16, n_interactions: 2, ..Default::default() },
        rng,
    )
    .unwrap()
}

fn small_generator(rng: &mut ChaCha8Rng, n: usize) -> Generator {
    Generator::new(
        GeneratorConfig { noise_dim: 6, n_points: n, hidden: vec![12, 12], ..Default::default() },
        rng,
    )
    .unwrap()
}

fn noise(rng: &mut ChaCha8Rng, m: usize, k: usize) -> Tensor {
    Tensor::new(vec![m, k], (0..m * k).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap()
}

#[test]
fn identical_noise_rows_give_identical_samples() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let g = small_generator(&mut rng, 5);
    let row: Vec<f64> = (0..6).map(|_| rng.random()).collect();
    let z = Tensor::new(vec![3, 6], row.repeat(3)).unwrap();
    let out = g.generate(&z).unwrap();
    assert_eq!(out[0], out[1]);
    assert_eq!(out[1], out[2]);
}

#[test]
fn generated_samples_have_rank_at_most_three() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let g = small_generator(&mut rng, 9);
    let z = noise(&mut rng, 50, 6);
    for s in g.generate(&z).unwrap() {
        let check = is_edm(&s.d, 1e-9).unwrap();
        assert!(check.is_edm);
        assert!(embedding_dimension(&s.d, 1e-9).unwrap() <= 3);
        for i in 0..s.n() {
            assert!((s.t.row(i).sum() - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn generator_outputs_pass_gradient_check() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let g = small_generator(&mut rng, 5);
    let w: Vec<f64> = (0..25).map(|_| rng.random_range(-1.0..1.0)).collect();
    let wt: Vec<f64> = (0..15).map(|_| rng.random_range(-1.0..1.0)).collect();
    let z = noise(&mut rng, 1, 6);
    let err = grad_check(
        |tape: &mut Tape, zv| {
            let p = g.params.bind(tape, false);
            let v = g.pipeline(tape, &p, zv)?;
            let dw = tape.constant(Tensor::new(vec![1, 5, 5], w.clone())?);
            let tw = tape.constant(Tensor::new(vec![1, 5, 3], wt.clone())?);
            let a = tape.mul(v.d, dw)?;
            let b = tape.mul(v.t, tw)?;
            let (a, b) = (tape.sum(a), tape.sum(b));
            tape.add(a, b)
        },
        &z,
        1e-6,
    )
    .unwrap();
    assert!(err < 1e-4, "{err}");
}

#[test]
fn critic_gradient_is_permutation_equivariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let critic = small_critic(&mut rng);
    let n = 6;
    let d = sdm(&random_coords(&mut rng, n, 1.2));
    let t = random_soft_types(&mut rng, n, 3);
    let order = random_permutation(&mut rng, n);
    let grad = |s: &TypedSample| {
        let batch = SampleBatch::from_samples(&[s]).unwrap();
        let mut tape = Tape::new();
        let p = critic.params.bind(&mut tape, false);
        let dv = tape.leaf(batch.d.clone());
        let tv = tape.leaf(batch.t.clone());
        let out = critic.score(&mut tape, &p, dv, tv).unwrap();
        let out = tape.sum(out);
        let g = tape.backward(out).unwrap();
        DMatrix::from_row_slice(n, n, g.tensor(dv).data())
    };
    let s = TypedSample::new(d.clone(), t.clone()).unwrap();
    let g0 = grad(&s);
    let g1 = grad(&s.permuted(&order));
    let expected = DMatrix::from_fn(n, n, |i, j| g0[(order[i], order[j])]);
    assert!((g1 - expected).amax() < 1e-10);
}

#[test]
fn duplicated_structures_score_identically() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let critic = small_critic(&mut rng);
    let a = TypedSample::new(sdm(&random_coords(&mut rng, 4, 1.0)), random_soft_types(&mut rng, 4, 3)).unwrap();
    let b = TypedSample::new(sdm(&random_coords(&mut rng, 4, 1.0)), random_soft_types(&mut rng, 4, 3)).unwrap();
    let scores = critic.evaluate(&SampleBatch::from_samples(&[&a, &b, &a]).unwrap()).unwrap();
    assert_eq!(scores[0], scores[2]);
    assert_eq!(scores[0], critic.forward_one(&a).unwrap());
    assert_eq!(scores[1], critic.forward_one(&b).unwrap());
}

#[test]
fn rbf_expansion_commutes_with_permutation() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let cfg = RbfConfig::default();
    let dist = squared_distances(&random_coords(&mut rng, 5, 2.0)).map(f64::sqrt);
    let order = random_permutation(&mut rng, 5);
    let moved = DMatrix::from_fn(5, 5, |i, j| dist[(order[i], order[j])]);
    let (e, ep) = (rbf_expand(&dist, &cfg), rbf_expand(&moved, &cfg));
    let b = cfg.n_basis;
    for i in 0..5 {
        for j in 0..5 {
            let (oi, oj) = (order[i], order[j]);
            assert_eq!(
                &ep.data()[(i * 5 + j) * b..(i * 5 + j + 1) * b],
                &e.data()[(oi * 5 + oj) * b..(oi * 5 + oj + 1) * b]
            );
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn critic_is_permutation_invariant(seed in any::<u64>(), n in 1usize..=10) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let critic = small_critic(&mut rng);
        let s = TypedSample::new(sdm(&random_coords(&mut rng, n, 1.5)), random_soft_types(&mut rng, n, 3)).unwrap();
        let order = random_permutation(&mut rng, n);
        let a = critic.forward_one(&s).unwrap();
        let b = critic.forward_one(&s.permuted(&order)).unwrap();
        prop_assert!((a - b).abs() < 1e-6 * a.abs().max(1.0));
    }

    #[test]
    fn critic_ignores_rigid_motions(seed in any::<u64>(), n in 2usize..=10) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let critic = small_critic(&mut rng);
        let c = random_coords(&mut rng, n, 1.5);
        let t = random_soft_types(&mut rng, n, 3);
        let moved = rigid_transform(&mut rng, &c);
        let a = critic.forward_one(&TypedSample::new(sdm(&c), t.clone()).unwrap()).unwrap();
        let b = critic.forward_one(&TypedSample::new(sdm(&moved), t).unwrap()).unwrap();
        prop_assert!((a - b).abs() < 1e-8);
    }
}
