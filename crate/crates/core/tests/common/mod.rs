#![allow(dead_code)]

use latemine::rng::rng_from_seed;
use latemine::{Corpus, RelationInstance, RelationType, TokenSpan, TypeCatalog, Utterance};
use rand::Rng;

const WORDS: &[&str] = &[
    "Cliqz", "supports", "the", "macOS", "operating", "system", "Linux", "runs", "on", "servers", "Berlin", "is",
    "capital", "of", "Germany", "Paris", "France", "born", "in", "works", "for", "company", "founded", "by", ".",
];

/// A small random corpus whose instances are spread over `n_types` types,
/// each utterance carrying one or two instances.
pub fn corpus(n_utterances: usize, n_types: usize, seed: u64) -> (Corpus, TypeCatalog) {
    let mut rng = rng_from_seed(seed);
    let mut utterances = Vec::new();
    let mut instances = Vec::new();
    for u in 0..n_utterances {
        let n = rng.random_range(4..12);
        let tokens: Vec<String> = (0..n).map(|_| WORDS[rng.random_range(0..WORDS.len())].to_string()).collect();
        let id = format!("u{u:04}");
        for _ in 0..rng.random_range(1..=2) {
            let span = |rng: &mut latemine::rng::EngineRng| {
                let s = rng.random_range(0..n);
                TokenSpan::new(s, (s + rng.random_range(0..3)).min(n - 1))
            };
            let head = span(&mut rng);
            let tail = span(&mut rng);
            let gold = format!("P{:02}", (u + instances.len()) % n_types);
            instances.push(RelationInstance { utterance_id: id.clone(), head, tail, gold_type: Some(gold) });
        }
        utterances.push(Utterance::new(id, tokens));
    }
    (Corpus::new(utterances, instances).unwrap(), catalog(n_types))
}

pub fn catalog(n_types: usize) -> TypeCatalog {
    TypeCatalog::from_types((0..n_types).map(|k| {
        let mut t = RelationType::new(
            format!("P{k:02}"),
            format!("relation {k}"),
            format!("the head entity relates to the tail entity in way {k}"),
        );
        if k % 2 == 0 {
            t.aliases = vec![format!("alias {k}"), format!("other alias {k}")];
        }
        if k % 3 != 0 {
            t.head_type_name = Some(format!("head kind {k}"));
            t.tail_type_name = Some(format!("tail kind {k}"));
        }
        t
    }))
    .unwrap()
}

pub fn sha256(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}
