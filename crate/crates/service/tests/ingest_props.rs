mod common;

use common::*;
use proptest::prelude::*;
use pyramem_service::cli::engine_defaults;
use pyramem_service::error::ServiceError;
use pyramem_service::registry::{CreateRequest, IngestSummary, Registry, StoreHandle};
use std::sync::Arc;

fn window(line: &str) -> u64 {
    (serde_json::from_str::<serde_json::Value>(line).unwrap()["t"].as_f64().unwrap() / CLIP_LEN).floor() as u64
}

fn upload(h: &Arc<StoreHandle>, part: &[&str]) -> IngestSummary {
    let lines = part.iter().map(|l| Ok::<_, ServiceError>(l.to_string()));
    let outcome = h.begin_ingest().unwrap().run(lines);
    assert!(outcome.error.is_none(), "{:?}", outcome.error);
    outcome.summary
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// Uploads split at window boundaries reproduce the generator's totals;
    /// a split inside a window skips exactly the events resent into it.
    #[test]
    fn totals_match_ground_truth(seed in 0u64..10_000, clips in 1usize..10, max_events in 1usize..6, split in 0.0f64..1.0) {
        let dir = tempfile::tempdir().unwrap();
        let registry = Registry::new(dir.path(), engine_defaults(None).unwrap()).unwrap();
        let f = fixture(seed, clips, max_events, 5);
        let all: Vec<&str> = f.ndjson.lines().collect();
        let cut = (all.len() as f64 * split) as usize;
        let create = |id: &str| registry.create(CreateRequest { id: Some(id.into()), config: Some(fixture_config()) }).unwrap();

        let boundary = (cut..all.len()).find(|&i| i == 0 || window(all[i]) != window(all[i - 1])).unwrap_or(all.len());
        let p = create("p");
        upload(&p, &all[..boundary]);
        let second = upload(&p, &all[boundary..]);
        prop_assert_eq!(second.skipped, 0);
        let stats = serde_json::to_value(p.stats()).unwrap();
        prop_assert_eq!(&stats["facts"], &serde_json::json!(f.facts));
        prop_assert_eq!(&stats["clips"], &serde_json::json!(f.clips));
        prop_assert_eq!(links_of(&stats), expected_links(&f));

        let q = create("q");
        upload(&q, &all[..cut]);
        let resent = upload(&q, &all[cut..]);
        let expected_skip = match cut {
            0 => 0,
            _ => all[cut..].iter().filter(|l| window(l) <= window(all[cut - 1])).count(),
        };
        prop_assert_eq!(resent.skipped, expected_skip);
        prop_assert_eq!(resent.warnings.iter().any(|w| w.contains("already committed")), expected_skip > 0);
        prop_assert_eq!(q.stats().facts, f.facts - expected_skip);

        // a fresh registry recovers the same graph from disk
        let reopened = Registry::new(dir.path(), engine_defaults(None).unwrap()).unwrap();
        prop_assert_eq!(serde_json::to_value(reopened.open("p").unwrap().stats()).unwrap(), stats);
    }
}
