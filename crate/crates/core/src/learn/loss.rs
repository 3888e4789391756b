//! Squared hinge and the aggregate rejection-aware ranking loss.

use crate::error::{Error, Result};
use crate::score::{EntryId, ScoreVector};

/// `max(0, 1 - w[target] + max_{i != target} w[i])^2` over the entries of
/// `subset`. Returns the loss together with `(rival, slack)` when the
/// margin is violated. An empty rival set yields 0.
fn hinge_over(w: &[f64], subset: &[usize], target: usize) -> (f64, Option<(usize, f64)>) {
    let mut rival: Option<usize> = None;
    for &i in subset {
        if i != target && rival.is_none_or(|r| w[i] > w[r]) {
            rival = Some(i);
        }
    }
    match rival {
        Some(r) => {
            let slack = 1.0 - w[target] + w[r];
            if slack > 0.0 {
                (slack * slack, Some((r, slack)))
            } else {
                (0.0, None)
            }
        }
        None => (0.0, None),
    }
}

/// Squared hinge over a whole score vector with `gold` as target.
pub fn hinge2(w: &ScoreVector, gold: &EntryId) -> Result<f64> {
    let entries = w.entries();
    let target = entries
        .iter()
        .position(|e| &e.0 == gold)
        .ok_or_else(|| Error::Query(format!("gold entry `{gold}` is not in the score vector")))?;
    let values: Vec<f64> = entries.iter().map(|e| e.1).collect();
    let all: Vec<usize> = (0..values.len()).collect();
    Ok(hinge_over(&values, &all, target).0)
}

/// The three loss terms for one input.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossTerms {
    pub pos_vs_neg: f64,
    pub pos_vs_rej: f64,
    pub rej_vs_neg: f64,
}

impl LossTerms {
    pub fn total(&self) -> f64 {
        self.pos_vs_neg + self.pos_vs_rej + self.rej_vs_neg
    }
}

type Hit = Option<(usize, f64)>;

/// Loss and its gradient with respect to `w`, where `w[..n_types]` are the
/// targeted relation types and `w[n_types..]` the reject entries, both in
/// canonical order.
pub(crate) fn loss_rej_indexed(w: &[f64], n_types: usize, gold: usize) -> (LossTerms, Vec<f64>) {
    let mut grad = vec![0.0; w.len()];
    let mut apply = |target: usize, hit: Option<(usize, f64)>| {
        if let Some((rival, slack)) = hit {
            grad[target] -= 2.0 * slack;
            grad[rival] += 2.0 * slack;
        }
    };
    let types: Vec<usize> = (0..n_types).collect();
    let rejects: Vec<usize> = (n_types..w.len()).collect();

    let (pos_vs_neg, hit) = hinge_over(w, &types, gold);
    apply(gold, hit);

    if rejects.is_empty() {
        return (LossTerms { pos_vs_neg, ..Default::default() }, grad);
    }

    let mut gold_and_rejects = vec![gold];
    gold_and_rejects.extend(&rejects);
    let (pos_vs_rej, hit) = hinge_over(w, &gold_and_rejects, gold);
    apply(gold, hit);

    let mut rejects_and_negs: Vec<usize> = types.iter().copied().filter(|&i| i != gold).collect();
    rejects_and_negs.extend(&rejects);
    let mut best: Option<(usize, f64, Hit)> = None;
    for &r in &rejects {
        let (l, hit) = hinge_over(w, &rejects_and_negs, r);
        if best.is_none_or(|b| l < b.1) {
            best = Some((r, l, hit));
        }
    }
    let (r, rej_vs_neg, hit) = best.expect("reject set is non-empty");
    apply(r, hit);

    (LossTerms { pos_vs_neg, pos_vs_rej, rej_vs_neg }, grad)
}

/// Aggregate loss for one input whose gold relation type is `gold`. The
/// targeted set and the reject set are the two halves of `w`; without
/// reject entries only the first term remains.
pub fn loss_rej(w: &ScoreVector, gold: &str) -> Result<LossTerms> {
    let entries = w.entries();
    let n_types = w.type_count();
    let gold_idx = entries[..n_types]
        .iter()
        .position(|e| e.0.type_id() == Some(gold))
        .ok_or_else(|| Error::Query(format!("gold type `{gold}` is not in the targeted set")))?;
    let values: Vec<f64> = entries.iter().map(|e| e.1).collect();
    Ok(loss_rej_indexed(&values, n_types, gold_idx).0)
}
