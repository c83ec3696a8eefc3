use crate::hashing::{stream, uniform};

/// Whether a skip survives down-sampling at rate `1/r`.
///
/// The decision is a pure function of `(seed, event_id)`, so every trainer
/// sharing a seed keeps exactly the same skips.
#[inline]
pub fn keep_skip(seed: u64, event_id: u64, r: f64) -> bool {
    r <= 1.0 || uniform(seed, stream::DOWNSAMPLE, event_id) < 1.0 / r
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rate_one_keeps_everything() {
        assert!((0..1000).all(|i| keep_skip(1, i, 1.0)));
    }

    #[test]
    fn keeps_one_in_r() {
        let n = 100_000;
        let kept = (0..n).filter(|&i| keep_skip(3, i, 10.0)).count();
        assert!((9_700..10_300).contains(&kept), "{kept}");
    }

    #[test]
    fn decisions_depend_only_on_seed_and_id() {
        let a: Vec<bool> = (0..500).map(|i| keep_skip(5, i, 4.0)).collect();
        let b: Vec<bool> = (0..500).rev().map(|i| keep_skip(5, i, 4.0)).collect();
        assert_eq!(a, b.into_iter().rev().collect::<Vec<_>>());
        let c: Vec<bool> = (0..500).map(|i| keep_skip(6, i, 4.0)).collect();
        assert_ne!(a, c);
    }
}
