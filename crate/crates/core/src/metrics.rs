//! Detection metrics: equal error rate over bona-fide/spoof score sets.

/// False-acceptance and false-rejection rates at threshold `t`, under the
/// convention that scores ≥ `t` are accepted as bona-fide.
pub fn far_frr(bona: &[f64], spoof: &[f64], t: f64) -> (f64, f64) {
    let fa = spoof.iter().filter(|&&s| s >= t).count() as f64 / spoof.len() as f64;
    let fr = bona.iter().filter(|&&s| s < t).count() as f64 / bona.len() as f64;
    (fa, fr)
}

/// Equal error rate and the threshold where it occurs.
///
/// Candidate thresholds are the observed scores; FAR falls and FRR rises as
/// the threshold sweeps upward, and the rate at their crossing is the EER,
/// linearly interpolated between the adjacent operating points when the
/// crossing falls between candidates.
pub fn compute_eer(bona: &[f64], spoof: &[f64]) -> (f64, f64) {
    assert!(
        !bona.is_empty() && !spoof.is_empty(),
        "EER needs at least one score per class"
    );
    assert!(
        bona.iter().chain(spoof).all(|s| s.is_finite()),
        "scores must be finite"
    );
    let mut candidates: Vec<f64> = bona.iter().chain(spoof).copied().collect();
    candidates.sort_by(|a, b| a.partial_cmp(b).unwrap());
    candidates.dedup();
    // Sentinel above every score: FAR 0, FRR 1, so a crossing always exists.
    candidates.push(candidates[candidates.len() - 1] + 1.0);

    let (mut prev_t, mut prev_far, mut prev_frr) = (f64::NEG_INFINITY, 1.0, 0.0);
    for &t in &candidates {
        let (far, frr) = far_frr(bona, spoof, t);
        if far <= frr {
            if far == frr {
                return (far, t);
            }
            // interpolate within [prev_t, t] where the gap far-frr crosses 0
            let d0 = prev_far - prev_frr;
            let d1 = far - frr;
            let lambda = d0 / (d0 - d1);
            let eer = prev_far + lambda * (far - prev_far);
            let threshold = if prev_t.is_finite() { prev_t + lambda * (t - prev_t) } else { t };
            return (eer, threshold);
        }
        (prev_t, prev_far, prev_frr) = (t, far, frr);
    }
    unreachable!("sentinel guarantees a crossing");
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_separation_gives_zero() {
        let (eer, t) = compute_eer(&[0.8, 0.9, 1.2], &[-0.5, 0.1, 0.3]);
        assert_eq!(eer, 0.0);
        assert!(t > 0.3 && t <= 0.8, "threshold {t} should split the classes");
    }

    #[test]
    fn interleaved_example_gives_half() {
        let (eer, t) = compute_eer(&[0.2, 0.4], &[0.3, 0.5]);
        assert!((eer - 0.5).abs() < 1e-12, "eer {eer}");
        assert!((0.3..=0.4).contains(&t), "threshold {t}");
    }

    #[test]
    fn total_inversion_gives_one() {
        let (eer, _) = compute_eer(&[0.0, 0.1], &[0.5, 0.6]);
        assert!((eer - 1.0).abs() < 1e-12, "eer {eer}");
    }

    #[test]
    fn tied_scores_give_half() {
        let (eer, _) = compute_eer(&[0.5], &[0.5]);
        assert!((eer - 0.5).abs() < 1e-12, "eer {eer}");
    }

    #[test]
    fn rates_count_boundaries_inclusively_for_acceptance() {
        let (far, frr) = far_frr(&[0.2, 0.4], &[0.3, 0.5], 0.3);
        assert_eq!(far, 1.0); // both spoof scores >= 0.3
        assert_eq!(frr, 0.5); // one bona score < 0.3
    }

    #[test]
    fn monotone_transform_preserves_eer() {
        let bona = [0.1, 0.35, 0.2, 0.9, 0.41];
        let spoof = [0.05, 0.3, 0.33, 0.6];
        let (base, _) = compute_eer(&bona, &spoof);
        let warp = |s: f64| (3.0 * s).exp() - 2.0;
        let wb: Vec<f64> = bona.iter().map(|&s| warp(s)).collect();
        let ws: Vec<f64> = spoof.iter().map(|&s| warp(s)).collect();
        let (warped, _) = compute_eer(&wb, &ws);
        assert!((base - warped).abs() < 1e-12);
    }

    #[test]
    #[should_panic(expected = "at least one score")]
    fn empty_class_is_rejected() {
        compute_eer(&[], &[0.1]);
    }
}
