use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use reid_core::ingest::{ImageRecord, Manifest, Side};
use reid_core::sampler::{epoch_plan, next_batch, SamplerConfig};

fn manifest(counts: &[usize]) -> Manifest {
    let mut records = Vec::new();
    for (f, &n) in counts.iter().enumerate() {
        let side = if f % 2 == 0 { Side::Left } else { Side::Right };
        for v in 0..n {
            records.push(ImageRecord::new(format!("f{f}_{v}"), format!("ind{}", f / 2), side, format!("f{f}_{v}.png")));
        }
    }
    Manifest::new(records).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn batches_have_uniform_multiplicity(
        counts in prop::collection::vec(1usize..9, 4..30),
        n in 2usize..5,
        flanks in 1usize..4,
        singletons in any::<bool>(),
        seed in any::<u64>(),
    ) {
        let m = manifest(&counts);
        let cfg = SamplerConfig { exemplars_per_id: n, batch_size: n * flanks, include_singletons: singletons, seed };
        let sizes = m.flank_counts();
        let eligible = sizes.values().filter(|&&c| c >= 2 || (singletons && c == 1)).count();
        let plan = epoch_plan(&m, &cfg, &mut cfg.rng());
        if eligible < flanks {
            prop_assert!(plan.is_err());
            return Ok(());
        }
        let plan = plan.unwrap();
        prop_assert_eq!(plan.len(), eligible.div_ceil(flanks));
        let mut covered = BTreeSet::new();
        let labels: Vec<String> = m.flank_ids();
        for batch in &plan {
            let mut per: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
            for item in &batch.items {
                per.entry(item.label).or_default().push(item.record);
                prop_assert_eq!(&m.records()[item.record].image_id, &item.image_id);
            }
            prop_assert_eq!(per.len(), flanks);
            for (label, recs) in &per {
                let size = sizes[&labels[recs[0]]];
                covered.insert(*label);
                if size == 1 {
                    prop_assert!(singletons);
                    prop_assert_eq!(recs.len(), 1);
                } else {
                    prop_assert_eq!(recs.len(), n);
                    let distinct: BTreeSet<_> = recs.iter().collect();
                    prop_assert_eq!(distinct.len(), n.min(size));
                }
            }
        }
        prop_assert_eq!(covered.len(), eligible);
        prop_assert_eq!(plan, epoch_plan(&m, &cfg, &mut cfg.rng()).unwrap());
    }
}

#[test]
fn next_batch_is_seeded() {
    let m = manifest(&[4, 5, 6, 2, 3, 7]);
    let cfg = SamplerConfig { exemplars_per_id: 2, batch_size: 6, include_singletons: false, seed: 9 };
    let a = next_batch(&m, &cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let b = next_batch(&m, &cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.len(), 6);
}
