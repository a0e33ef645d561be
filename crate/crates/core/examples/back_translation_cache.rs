//! Back-translation with an on-disk cache. Without a reachable endpoint the
//! fallback augmenter is used and the reason recorded; cached entries are
//! served without any network call.

use std::time::Duration;

use mixtext::rng;
use mixtext::trainer::{AugmentCache, Augmenter, BackTranslator, RandomSwap};

fn main() -> mixtext::Result<()> {
    let dir = std::env::temp_dir().join("mixtext_bt_cache");
    let _ = std::fs::remove_dir_all(&dir);
    let cache = AugmentCache::new(&dir);
    let bt = BackTranslator {
        endpoint: std::env::args().nth(1),
        route: "en-de-en".into(),
        cache: cache.clone(),
        timeout: Duration::from_secs(5),
        fallback: Box::new(RandomSwap { swaps: 1 }),
    };
    let mut r = rng::stream(1, &["bt"]);
    let text = "the movie was surprisingly good";

    let first = bt.augment(text, &mut r)?;
    println!(
        "{} -> {:?} (fallback: {:?})",
        first.provenance, first.text, first.fallback
    );

    cache.put("en-de-en", text, "the film was unexpectedly good")?;
    let second = bt.augment(text, &mut r)?;
    println!(
        "{} -> {:?} (fallback: {:?})",
        second.provenance, second.text, second.fallback
    );
    println!("cache file {}", cache.path_for("en-de-en", text).display());
    Ok(())
}
