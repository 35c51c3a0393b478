mod common;

use std::collections::BTreeMap;

use common::{positive_score_model, random_prompt};
use mata_core::{
    aggregate, decode_greedy, gen_synthetic_weights, make_noop, AttentionLog, AttentionRecord, InterventionSpec,
    ModelConfig, Region, TokenSequence,
};

/// Brute-force per-layer average: position-by-position region lookup.
fn brute_force(records: &[AttentionRecord], seq: &TokenSequence) -> BTreeMap<usize, [f64; 4]> {
    let mut acc: BTreeMap<usize, ([f64; 4], usize)> = BTreeMap::new();
    for rec in records {
        let entry = acc.entry(rec.layer).or_insert(([0.0; 4], 0));
        for (pos, w) in rec.row.iter().enumerate() {
            let region = seq.region_of(pos).unwrap();
            entry.0[region.index()] += w;
        }
        entry.1 += 1;
    }
    acc.into_iter().map(|(l, (sums, n))| (l, sums.map(|s| s / n as f64))).collect()
}

#[test]
fn aggregate_matches_brute_force() {
    let cfg = ModelConfig::tiny(4);
    for seed in 0..10 {
        let w = gen_synthetic_weights(&cfg, seed).unwrap();
        let prompt = random_prompt(seed, cfg.vocab_size);
        let spec = if seed % 2 == 0 { make_noop() } else { InterventionSpec::new(0.1, 1, 3) };
        let mut log = AttentionLog::new();
        let res = decode_greedy(&w, &prompt, &spec, &mut log, 7, None).unwrap();
        assert_eq!(log.records.len(), res.generated.len() * cfg.n_layers * cfg.n_heads);

        let summaries = aggregate(&log.records, res.sequence.segments()).unwrap();
        let oracle = brute_force(&log.records, &res.sequence);
        assert_eq!(summaries.len(), cfg.n_layers);
        for s in &summaries {
            let o = oracle[&s.layer];
            for r in Region::ALL {
                assert!((s.masses.get(r) - o[r.index()]).abs() <= 1e-12);
            }
            assert!((s.masses.total() - 1.0).abs() <= 1e-6);
            assert_eq!(s.n_steps, res.generated.len());
        }
        for rec in &log.records {
            let m = mata_core::region_mass(&rec.row, res.sequence.segments(), rec.row.len()).unwrap();
            assert!((m.total() - 1.0).abs() <= 1e-9);
        }
    }
}

#[test]
fn intervention_raises_audio_mass_only_in_active_layers() {
    let cfg = ModelConfig::tiny(6);
    let w = positive_score_model(&cfg, 1);
    let prompt = TokenSequence::from_regions(&[1, 2, 3], &[4, 5, 6, 7], &[8, 9]);
    let spec = InterventionSpec::new(0.1, 2, 4);

    let mut base_log = AttentionLog::new();
    let base = decode_greedy(&w, &prompt, &make_noop(), &mut base_log, 5, None).unwrap();
    let mut log = AttentionLog::new();
    let hooked = decode_greedy(&w, &prompt, &spec, &mut log, 5, None).unwrap();
    assert_eq!(base.generated, hooked.generated);

    let b = aggregate(&base_log.records, base.sequence.segments()).unwrap();
    let h = aggregate(&log.records, hooked.sequence.segments()).unwrap();
    for (bs, hs) in b.iter().zip(&h) {
        let (ba, ha) = (bs.masses.get(Region::Audio), hs.masses.get(Region::Audio));
        if spec.is_active(bs.layer) {
            assert!(ha > ba, "layer {}: {ha} <= {ba}", bs.layer);
        } else {
            assert_eq!(ha.to_bits(), ba.to_bits(), "layer {}", bs.layer);
        }
    }
}

#[test]
fn layers_upstream_of_the_band_are_untouched() {
    let cfg = ModelConfig::tiny(6);
    for seed in 0..6 {
        let w = gen_synthetic_weights(&cfg, 50 + seed).unwrap();
        let prompt = random_prompt(seed, cfg.vocab_size);
        let spec = InterventionSpec::new(0.15, 3, 6);
        let mut base_log = AttentionLog::new();
        let base = decode_greedy(&w, &prompt, &make_noop(), &mut base_log, 6, None).unwrap();
        let mut log = AttentionLog::new();
        let hooked = decode_greedy(&w, &prompt, &spec, &mut log, 6, None).unwrap();
        // identical tokens up to the first divergence, so steps before it match upstream
        let same_steps = base.generated.iter().zip(&hooked.generated).take_while(|(a, b)| a == b).count() + 1;
        for (a, b) in base_log.records.iter().zip(&log.records) {
            assert_eq!((a.step, a.layer, a.head), (b.step, b.layer, b.head));
            if a.layer < spec.layer_start && a.step < same_steps {
                assert_eq!(a.row, b.row);
            }
        }
    }
}
