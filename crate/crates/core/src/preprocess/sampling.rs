use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::WellRecord;

/// Generator keyed by `(seed, source, batch, plate, well)`.
///
/// Each well gets its own stream, so the draw for a well does not depend on
/// which other wells exist, the order they are visited in, or the thread that
/// handles them.
pub fn well_rng(seed: u64, source: &str, batch: &str, plate: &str, well: &str) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(b"hcs-contrast/view-sampling");
    hasher.update(seed.to_le_bytes());
    for part in [source, batch, plate, well] {
        hasher.update((part.len() as u64).to_le_bytes());
        hasher.update(part.as_bytes());
    }
    ChaCha8Rng::from_seed(hasher.finalize().into())
}

/// Pick `treatment_views` (or `control_views` for control wells) distinct views
/// uniformly at random, or every view when fewer are available.
pub fn sample_views(mut record: WellRecord, seed: u64, treatment_views: usize, control_views: usize) -> WellRecord {
    let quota = if record.is_control {
        control_views
    } else {
        treatment_views
    };
    let available = &record.available_views;
    let mut selected: Vec<u32> = if available.len() <= quota {
        available.clone()
    } else {
        let mut rng = well_rng(seed, &record.source, &record.batch, &record.plate, &record.well);
        rand::seq::index::sample(&mut rng, available.len(), quota)
            .into_iter()
            .map(|i| available[i])
            .collect()
    };
    selected.sort_unstable();
    record.selected_views = selected;
    record
}

#[cfg(test)]
mod tests {
    use super::*;

    fn well(views: u32, control: bool) -> WellRecord {
        WellRecord::new("s1", "b1", "p1", "A01", "cpd", control, (1..=views).collect())
    }

    #[test]
    fn exact_population_is_fully_selected() {
        for seed in 0..20 {
            let r = sample_views(well(6, false), seed, 6, 3);
            assert_eq!(r.selected_views, vec![1, 2, 3, 4, 5, 6]);
        }
    }

    #[test]
    fn control_quota_and_determinism() {
        let a = sample_views(well(9, true), 42, 6, 3);
        let b = sample_views(well(9, true), 42, 6, 3);
        assert_eq!(a.selected_views.len(), 3);
        assert_eq!(a.selected_views, b.selected_views);
        let c = sample_views(well(9, true), 43, 6, 3);
        let d = sample_views(well(9, true), 44, 6, 3);
        assert!(a.selected_views != c.selected_views || a.selected_views != d.selected_views);
    }

    #[test]
    fn key_depends_on_every_identifier() {
        let base = well_rng(1, "s", "b", "p", "w").get_seed();
        assert_ne!(base, well_rng(1, "s", "b", "p", "x").get_seed());
        assert_ne!(base, well_rng(1, "s", "bp", "", "w").get_seed());
        assert_ne!(base, well_rng(2, "s", "b", "p", "w").get_seed());
    }

    #[test]
    fn views_are_chosen_uniformly() {
        let trials = 10_000;
        let mut hits = [0u32; 9];
        for seed in 0..trials {
            let r = sample_views(well(9, false), seed, 6, 3);
            assert_eq!(r.selected_views.len(), 6);
            let mut dedup = r.selected_views.clone();
            dedup.dedup();
            assert_eq!(dedup.len(), 6);
            for v in r.selected_views {
                hits[(v - 1) as usize] += 1;
            }
        }
        for h in hits {
            let freq = f64::from(h) / trials as f64;
            assert!((freq - 6.0 / 9.0).abs() < 0.02, "{freq}");
        }
    }
}
