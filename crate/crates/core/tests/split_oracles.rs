mod common;

use cloudsplit::entropy_split::{
    plan_split, recovery_probability, relative_entropy, ByteDistribution, Probability,
};
use common::{all_cut_sets, factorial, kl_direct};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

fn kl(file: &[u8], chunk: &[u8]) -> f64 {
    relative_entropy(&ByteDistribution::from_bytes(file), &ByteDistribution::from_bytes(chunk)).unwrap()
}

#[test]
fn divergence_matches_direct_summation() {
    let file = vec![b'a'; 512];
    let chunk = vec![b'a'; 256];
    assert!((kl(&file, &chunk) - kl_direct(&file, &chunk)).abs() < 1e-12);

    let mut rng = ChaCha20Rng::seed_from_u64(5);
    for _ in 0..200 {
        let len = rng.gen_range(1..3000);
        let alphabet = rng.gen_range(1..=256u32);
        let file: Vec<u8> = (0..len).map(|_| (rng.gen::<u32>() % alphabet) as u8).collect();
        let a = rng.gen_range(0..len);
        let b = rng.gen_range(a + 1..=len);
        let want = kl_direct(&file, &file[a..b]);
        assert!((kl(&file, &file[a..b]) - want.max(0.0)).abs() < 1e-12);
    }
}

/// Best objective over every block-aligned split, scoring chunks from scratch.
fn enumerate(file: &[u8], chunks: usize, block: usize) -> f64 {
    let nb = file.len().div_ceil(block);
    let end = |b: usize| (b * block).min(file.len());
    let mut score = vec![vec![f64::NAN; nb + 1]; nb + 1];
    for (i, row) in score.iter_mut().enumerate() {
        for j in i + 1..=nb {
            row[j] = kl(file, &file[i * block..end(j)]);
        }
    }
    all_cut_sets(nb, chunks)
        .into_iter()
        .map(|cuts| {
            let mut bounds = vec![0];
            bounds.extend(cuts);
            bounds.push(nb);
            bounds
                .windows(2)
                .map(|w| score[w[0]][w[1]])
                .fold(f64::INFINITY, f64::min)
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

#[test]
fn dp_objective_equals_enumeration() {
    let mut rng = ChaCha20Rng::seed_from_u64(17);
    for _ in 0..60 {
        let block = rng.gen_range(1..=16);
        let blocks = rng.gen_range(4..=40);
        let len = blocks * block - rng.gen_range(0..block);
        let alphabet = rng.gen_range(2..=20u32);
        let file: Vec<u8> = (0..len).map(|_| (rng.gen::<u32>() % alphabet) as u8).collect();
        for c in 2..=4 {
            let plan = plan_split(&file, c, block).unwrap();
            assert_eq!(plan.objective, enumerate(&file, c, block));
            // the returned cuts achieve the objective
            let achieved = plan
                .chunks(&file)
                .iter()
                .map(|ch| kl(&file, ch))
                .fold(f64::INFINITY, f64::min);
            assert_eq!(achieved, plan.objective);
            assert!(plan.cut_points.iter().all(|&p| p % block == 0 && p > 0 && p < len));
        }
    }
}

#[test]
fn uniform_bytes_give_a_valid_plan() {
    let mut rng = ChaCha20Rng::seed_from_u64(1);
    let file: Vec<u8> = (0..32 * 64).map(|_| rng.gen()).collect();
    let plan = plan_split(&file, 3, 64).unwrap();
    assert_eq!(plan.chunks(&file).concat(), file);
    assert!(plan.objective <= enumerate(&file, 3, 64));
}

#[test]
fn order_guessing_matches_factorial() {
    for c in 1..=30u128 {
        match recovery_probability(c as usize, true) {
            Probability::Ratio { num, den } => {
                assert_eq!((num, den), (1, factorial(c)));
            }
            Probability::Real { .. } => panic!("{c}! fits in u128"),
        }
    }
    assert_eq!(
        recovery_probability(10, false),
        Probability::Ratio { num: 1, den: 3_628_800 }
    );
    let p = recovery_probability(40, true);
    let ln: f64 = -(2..=40).map(|c| (c as f64).ln()).sum::<f64>();
    assert!((p.ln() - ln).abs() < 1e-9);
}
