use latemine::learn::loss_rej;
use latemine::rng::rng_from_seed;
use latemine::score::ScoreVector;
use rand::Rng;

/// Squared hinge written out from its definition: the target against the
/// best of the others, zero when there are no others.
fn hinge_oracle(target: f64, others: &[f64]) -> f64 {
    let mut best: Option<f64> = None;
    for &o in others {
        best = Some(match best {
            Some(b) if b >= o => b,
            _ => o,
        });
    }
    match best {
        None => 0.0,
        Some(b) => {
            let m = 1.0 - target + b;
            if m > 0.0 {
                m * m
            } else {
                0.0
            }
        }
    }
}

fn oracle(types: &[f64], gold: usize, rejects: &[f64]) -> f64 {
    let non_gold: Vec<f64> = types.iter().enumerate().filter(|&(i, _)| i != gold).map(|(_, &w)| w).collect();
    let term1 = hinge_oracle(types[gold], &non_gold);
    let term2 = hinge_oracle(types[gold], rejects);
    let mut term3 = 0.0;
    if !rejects.is_empty() {
        let mut candidates = Vec::new();
        for (r, &wr) in rejects.iter().enumerate() {
            let mut others = non_gold.clone();
            others.extend(rejects.iter().enumerate().filter(|&(k, _)| k != r).map(|(_, &w)| w));
            candidates.push(hinge_oracle(wr, &others));
        }
        term3 = candidates[0];
        for &c in &candidates[1..] {
            if c < term3 {
                term3 = c;
            }
        }
    }
    term1 + term2 + term3
}

#[test]
fn matches_brute_force_on_random_score_vectors() {
    let mut rng = rng_from_seed(99);
    let mut worst = 0.0f64;
    for case in 0..1000 {
        let n_types = rng.random_range(1..=6);
        let n_rejects = rng.random_range(0..=5);
        let types: Vec<f64> = (0..n_types).map(|_| rng.random_range(-1.0..1.5)).collect();
        let rejects: Vec<f64> = (0..n_rejects).map(|_| rng.random_range(-1.0..1.5)).collect();
        let gold = rng.random_range(0..n_types);
        let named: Vec<(String, f64)> = types.iter().enumerate().map(|(i, &w)| (format!("t{i}"), w)).collect();
        let w = ScoreVector::new(named, rejects.clone()).unwrap();
        let got = loss_rej(&w, &format!("t{gold}")).unwrap().total();
        let want = oracle(&types, gold, &rejects);
        worst = worst.max((got - want).abs());
        assert!((got - want).abs() <= 1e-12, "case {case}: {got} vs {want}");
    }
    eprintln!("worst absolute deviation {worst:e}");
}

#[test]
fn gold_outside_targets_is_an_error() {
    let w = ScoreVector::new(vec![("a".into(), 0.1)], vec![0.2]).unwrap();
    assert!(loss_rej(&w, "zz").is_err());
}
