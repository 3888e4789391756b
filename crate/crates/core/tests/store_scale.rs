use std::io::BufWriter;

use latemine::rng::rng_from_seed;
use latemine::store::{Store, StoreWriter, UtteranceRecord};
use rand::Rng;

const RECORDS: usize = 94_383;
const DIM: usize = 4;

fn lengths() -> Vec<usize> {
    // mean 24.85 tokens: draw around 25 and shift a fixed number down
    let mut rng = rng_from_seed(1);
    let mut n: Vec<usize> = (0..RECORDS).map(|_| rng.random_range(15..=35)).collect();
    let target = (24.85 * RECORDS as f64).round() as usize;
    let mut total: usize = n.iter().sum();
    let mut i = 0;
    while total != target {
        if total > target && n[i] > 1 {
            n[i] -= 1;
            total -= 1;
        } else if total < target {
            n[i] += 1;
            total += 1;
        }
        i = (i + 1) % RECORDS;
    }
    n
}

fn id(i: usize) -> String {
    format!("fewrel-{i}")
}

#[test]
fn table_scale_store_has_the_exact_expected_size() {
    let n = lengths();
    let mean = n.iter().sum::<usize>() as f64 / RECORDS as f64;
    assert!((mean - 24.85).abs() < 1e-3);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("big.lmstore");
    let mut w = StoreWriter::new(BufWriter::new(std::fs::File::create(&path).unwrap()), DIM).unwrap();
    for (i, &len) in n.iter().enumerate() {
        let sent = vec![i as f32; DIM];
        let toks: Vec<f32> = (0..len * DIM).map(|k| (i + k) as f32 * 0.5).collect();
        w.push(&UtteranceRecord::new(id(i), sent, toks).unwrap()).unwrap();
    }
    w.finish().unwrap();

    // header + per record (u16 id length, id bytes, u32 token count,
    // (tokens + 1) * d f32 values) + per index entry (u16, id, u64 offset)
    let mut expected: u64 = 8 + 4 + 8 + 8;
    for (i, &len) in n.iter().enumerate() {
        let idl = id(i).len() as u64;
        expected += 2 + idl + 4 + (len as u64 + 1) * DIM as u64 * 4;
        expected += 2 + idl + 8;
    }
    assert_eq!(std::fs::metadata(&path).unwrap().len(), expected);

    let store = Store::open(&path).unwrap();
    assert_eq!(store.len(), RECORDS);
    let mut rng = rng_from_seed(2);
    for _ in 0..200 {
        let i = rng.random_range(0..RECORDS);
        let r = store.get(&id(i)).unwrap();
        assert_eq!(r.n_tokens as usize, n[i]);
        assert_eq!(r.sentence_vec, vec![i as f32; DIM]);
        assert_eq!(r.token(n[i] - 1)[DIM - 1], (i + n[i] * DIM - 1) as f32 * 0.5);
    }
}

#[test]
fn full_width_size_follows_the_same_formula() {
    // 768-dimensional records of the average length, computed rather than written
    let d = 768u64;
    let per_record_payload = (25 + 1) * d * 4;
    assert_eq!(latemine::store::record_len(10, 25, 768) as u64, 2 + 10 + 4 + per_record_payload);
    let approx = RECORDS as u64 * per_record_payload;
    assert_eq!(approx, 7_538_558_976);
}
