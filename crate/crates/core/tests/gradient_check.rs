use std::time::Instant;

use latemine::learn::{batch_loss_grad, Example, PrototypeBank};
use latemine::repr::{CandidateFeatures, MentionTokens, ParamSet, PrototypeRep};
use latemine::rng::{gaussian_vec, rng_from_seed, EngineRng};
use latemine::{EngineConfig, MentionStrategy, ModelFamily, Rejection};
use nalgebra::DVector;
use rand::Rng;

const D: usize = 8;
const STEP: f64 = 1e-5;
const PER_COMBINATION: usize = 6;

fn vecd(rng: &mut EngineRng) -> DVector<f64> {
    DVector::from_vec(gaussian_vec(rng, D))
}

fn features(rng: &mut EngineRng) -> CandidateFeatures {
    CandidateFeatures {
        sent: vecd(rng),
        head: MentionTokens { first: vecd(rng), last: vecd(rng) },
        tail: MentionTokens { first: vecd(rng), last: vecd(rng) },
    }
}

fn prototype(rng: &mut EngineRng, family: ModelFamily) -> PrototypeRep {
    match family {
        ModelFamily::RematchTriple if rng.random_bool(0.8) => {
            PrototypeRep::Triple { desc: vecd(rng), head_type: vecd(rng), tail_type: vecd(rng) }
        }
        _ => PrototypeRep::Fused(vecd(rng)),
    }
}

/// Three gold types over five examples, random parameters around the
/// initialization.
fn instance(config: &EngineConfig, rng: &mut EngineRng) -> (Vec<Example>, PrototypeBank, ParamSet) {
    let golds = ["A", "B", "C", "A", "B"];
    let examples = golds.iter().map(|g| Example { features: features(rng), gold: g.to_string() }).collect();
    let bank = PrototypeBank {
        types: ["A", "B", "C"].iter().map(|t| (t.to_string(), prototype(rng, config.model_family))).collect(),
        reject_desc: Some(PrototypeRep::Fused(vecd(rng))),
    };
    let mut params = ParamSet::init(config);
    for (_, t) in params.tensors_mut() {
        for x in t.iter_mut() {
            *x += 0.3 * rng.sample::<f64, _>(rand_distr::StandardNormal);
        }
    }
    (examples, bank, params)
}

fn loss_at(examples: &[Example], bank: &PrototypeBank, config: &EngineConfig, params: &ParamSet) -> f64 {
    let batch: Vec<&Example> = examples.iter().collect();
    batch_loss_grad(&batch, bank, config, params, false).unwrap().0
}

fn flat(p: &ParamSet) -> Vec<f64> {
    p.tensors().iter().flat_map(|t| t.2.to_vec()).collect()
}

fn set_flat(p: &mut ParamSet, i: usize, v: f64) {
    let mut k = i;
    for (_, t) in p.tensors_mut() {
        if k < t.len() {
            t[k] = v;
            return;
        }
        k -= t.len();
    }
    panic!("index out of range");
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[test]
fn analytic_gradients_match_central_differences() {
    let start = Instant::now();
    let mut rng = rng_from_seed(20240611);
    let (mut instances, mut with_params, mut worst) = (0, 0, 0.0f64);
    for family in ModelFamily::ALL {
        for strategy in MentionStrategy::ALL {
            for rejection in Rejection::ALL {
                let config = EngineConfig::new(family, strategy, rejection, 2, D, rng.random()).unwrap();
                for _ in 0..PER_COMBINATION {
                    let (examples, bank, params) = instance(&config, &mut rng);
                    let batch: Vec<&Example> = examples.iter().collect();
                    let (_, grad) = batch_loss_grad(&batch, &bank, &config, &params, true).unwrap();
                    let analytic = flat(&grad.unwrap());
                    let base = flat(&params);
                    let numeric: Vec<f64> = (0..base.len())
                        .map(|i| {
                            let mut p = params.clone();
                            set_flat(&mut p, i, base[i] + STEP);
                            let up = loss_at(&examples, &bank, &config, &p);
                            set_flat(&mut p, i, base[i] - STEP);
                            let down = loss_at(&examples, &bank, &config, &p);
                            (up - down) / (2.0 * STEP)
                        })
                        .collect();
                    assert_eq!(analytic.len(), numeric.len());
                    instances += 1;
                    if analytic.is_empty() {
                        continue;
                    }
                    with_params += 1;
                    let diff: Vec<f64> = analytic.iter().zip(&numeric).map(|(a, n)| a - n).collect();
                    let scale = norm(&analytic).max(norm(&numeric));
                    let rel = if scale == 0.0 { 0.0 } else { norm(&diff) / scale };
                    worst = worst.max(rel);
                    assert!(rel < 1e-6, "{}: relative error {rel:e}", config.label());
                }
            }
        }
    }
    eprintln!("{instances} instances, {with_params} with active parameters, worst relative error {worst:e}");
    assert!(instances >= 200 && with_params >= 200);
    assert!(start.elapsed().as_secs() < 60);
}
