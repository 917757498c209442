use std::collections::BTreeSet;
use std::sync::Arc;

use find_core::corpus::{EmbeddingTable, Vocabulary};
use find_core::lrp::{feature_relevance, LrpConfig};
use find_core::model::{init_model, ArchConfig, BilstmConfig, CnnConfig, ModelConfig, ModelSnapshot};
use find_core::snapshot::{from_bytes, snapshot_id, to_bytes};
use proptest::prelude::*;

const WORDS: usize = 12;
const DIM: usize = 4;
const MAX_LEN: usize = 10;

fn model(arch: ArchConfig, seed: u64) -> ModelSnapshot {
    let vocab = Vocabulary::from_words((0..WORDS).map(|i| format!("w{i}")));
    let data: Vec<f64> = (0..(WORDS + 2) * DIM)
        .map(|i| if i < 2 * DIM { 0.0 } else { ((i as f64 + seed as f64) * 0.7).sin() })
        .collect();
    let table = EmbeddingTable::from_rows(DIM, data, 1.0).unwrap();
    let config = ModelConfig {
        arch,
        max_len: MAX_LEN,
        embed_dim: DIM,
        classes: vec!["a".into(), "b".into(), "c".into()],
        seed,
    };
    init_model(config, Arc::new(vocab), Arc::new(table)).unwrap()
}

fn cnn(seed: u64) -> ModelSnapshot {
    model(
        ArchConfig::Cnn(CnnConfig {
            filter_sizes: vec![2, 3],
            filters_per_size: 3,
        }),
        seed,
    )
}

fn doc() -> impl Strategy<Value = Vec<u32>> {
    prop::collection::vec(2..(WORDS as u32 + 2), 1..=MAX_LEN).prop_map(|mut d| {
        d.resize(MAX_LEN, 0);
        d
    })
}

proptest! {
    #[test]
    fn cnn_relevance_sums_to_the_feature(seed in 0u64..50, d in doc(), feature in 0usize..6) {
        let m = cnn(seed);
        let f = m.forward(&d).features[feature];
        let r = feature_relevance(&m, &d, "d", feature, &LrpConfig::with_epsilon(1e-9));
        prop_assert!((r.total() - f).abs() <= 1e-6 * f.abs().max(1.0));
        prop_assert!(r.scores[d.iter().position(|&t| t == 0).unwrap_or(MAX_LEN)..].iter().all(|&s| s == 0.0));
    }

    #[test]
    fn disabling_zeroes_exactly_the_chosen_columns(seed in 0u64..50, d in doc(), off in prop::collection::btree_set(0usize..6, 0..=6)) {
        let m = cnn(seed);
        let masked = m.disable_features(&off).unwrap();
        prop_assert_eq!(masked.disabled_features(), off.clone());
        let features = m.forward(&d).features;
        let kept: Vec<f64> = features
            .iter()
            .enumerate()
            .map(|(j, &v)| if off.contains(&j) { 0.0 } else { v })
            .collect();
        prop_assert_eq!(masked.head.logits(&features), m.head.logits_unmasked(&kept));
    }

    #[test]
    fn snapshots_round_trip_bytes(seed in 0u64..20, off in prop::collection::btree_set(0usize..6, 0..=3)) {
        let m = cnn(seed).disable_features(&off).unwrap();
        let bytes = to_bytes(&m);
        let back = from_bytes(&bytes).unwrap();
        prop_assert_eq!(to_bytes(&back), bytes.clone());
        prop_assert_eq!(snapshot_id(&bytes).len(), 32);
        prop_assert_eq!(back.disabled_features(), off);
    }
}

#[test]
fn bilstm_snapshot_round_trips() {
    let m = model(ArchConfig::Bilstm(BilstmConfig { hidden_units: 3 }), 4)
        .disable_features(&BTreeSet::from([1, 4]))
        .unwrap();
    let back = from_bytes(&to_bytes(&m)).unwrap();
    assert_eq!(back, m);
    let d: Vec<u32> = (0..MAX_LEN as u32).map(|i| 2 + i % WORDS as u32).collect();
    assert_eq!(back.forward(&d).probabilities, m.forward(&d).probabilities);
}
