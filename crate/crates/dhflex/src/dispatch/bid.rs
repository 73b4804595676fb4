//! Bid functions and market clearing.
//!
//! A device bids a step function of the priority signal: its full flow level
//! below the corner priority, nothing above it. The corner encodes urgency
//! as one minus the state of charge, so empty devices stay in the market up
//! to the highest priorities.

/// Step bid of one device: `level_kw` for priorities below `corner`, zero at
/// or above it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BidFunction {
    pub level_kw: f64,
    pub corner: f64,
}

impl BidFunction {
    pub fn value(&self, p_r: f64) -> f64 {
        if p_r < self.corner {
            self.level_kw
        } else {
            0.0
        }
    }
}

/// Build a device bid from its state of charge and flow/power level.
pub fn build_bid(soc: f64, level_kw: f64) -> BidFunction {
    debug_assert!((0.0..=1.0).contains(&soc) && level_kw >= 0.0);
    BidFunction {
        level_kw,
        corner: (1.0 - soc).clamp(0.0, 1.0),
    }
}

/// Pointwise sum of device bids: piecewise constant and non-increasing with
/// at most one breakpoint per distinct corner.
#[derive(Debug, Clone)]
pub struct AggregateBid {
    /// Distinct corners in ascending order.
    corners: Vec<f64>,
    /// Aggregate value on the interval left of each corner; `values[i]`
    /// applies on `[corners[i-1], corners[i])`. One trailing zero for the
    /// interval right of the last corner.
    values: Vec<f64>,
}

pub fn aggregate(bids: &[BidFunction]) -> AggregateBid {
    let mut sorted: Vec<&BidFunction> = bids.iter().filter(|b| b.level_kw > 0.0).collect();
    sorted.sort_by(|a, b| a.corner.total_cmp(&b.corner));
    let mut corners = Vec::new();
    let mut drops = Vec::new();
    for b in &sorted {
        match corners.last() {
            Some(&last) if (last - b.corner) == 0.0 => {
                *drops.last_mut().unwrap() += b.level_kw;
            }
            _ => {
                corners.push(b.corner);
                drops.push(b.level_kw);
            }
        }
    }
    // Value left of corner i = sum of drops from i onwards.
    let mut values = vec![0.0; corners.len() + 1];
    for i in (0..corners.len()).rev() {
        values[i] = values[i + 1] + drops[i];
    }
    AggregateBid { corners, values }
}

impl AggregateBid {
    /// Aggregate consumption at a priority.
    pub fn value(&self, p_r: f64) -> f64 {
        let idx = self.corners.partition_point(|c| *c <= p_r);
        self.values[idx]
    }

    pub fn total_kw(&self) -> f64 {
        self.values.first().copied().unwrap_or(0.0)
    }

    pub fn max_corner(&self) -> f64 {
        self.corners.last().copied().unwrap_or(0.0)
    }

    /// Candidate priorities: the left endpoint of every constant interval.
    fn candidates(&self) -> impl Iterator<Item = f64> + '_ {
        std::iter::once(0.0).chain(self.corners.iter().copied())
    }
}

/// Clearing: the priority whose aggregate consumption is closest to the
/// target, ties broken towards smaller priorities (more consumption).
pub fn clear_market(agg: &AggregateBid, target_kw: f64) -> f64 {
    debug_assert!(target_kw >= 0.0);
    let mut best = (f64::INFINITY, 0.0);
    for p in agg.candidates() {
        let err = (agg.value(p) - target_kw).abs();
        if err < best.0 - 1e-12 {
            best = (err, p);
        }
    }
    best.1
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn bid_extremes() {
        let full = build_bid(1.0, 10.0);
        for p in [0.0, 0.3, 0.9, 1.0] {
            assert_eq!(full.value(p), 0.0);
        }
        let empty = build_bid(0.0, 10.0);
        for p in [0.0, 0.5, 0.999] {
            assert_eq!(empty.value(p), 10.0);
        }
        assert_eq!(empty.value(1.0), 0.0);
    }

    #[test]
    fn bid_step_at_half() {
        let b = build_bid(0.5, 10.0);
        assert_eq!(b.value(0.49), 10.0);
        assert_eq!(b.value(0.51), 0.0);
    }

    #[test]
    fn aggregate_identity_and_additivity() {
        let one = aggregate(&[build_bid(0.5, 5.0)]);
        assert_eq!(one.value(0.3), 5.0);
        assert_eq!(one.value(0.7), 0.0);

        let two = aggregate(&[build_bid(0.5, 5.0), build_bid(0.5, 5.0)]);
        assert_eq!(two.value(0.49), 10.0);
        assert_eq!(two.value(0.5), 0.0);
    }

    #[test]
    fn aggregate_endpoints_on_random_bids() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let bids: Vec<BidFunction> = (0..100)
            .map(|_| build_bid(rng.gen_range(0.0..0.99), rng.gen_range(1.0..20.0)))
            .collect();
        let agg = aggregate(&bids);
        // Brute-force pointwise summation oracle.
        let sum_at = |p: f64| bids.iter().map(|b| b.value(p)).sum::<f64>();
        assert_relative_eq!(agg.value(0.0), sum_at(0.0), max_relative = 1e-12);
        assert_eq!(agg.value(1.0), 0.0);
        for p in [0.1, 0.25, 0.5, 0.77, 0.93] {
            assert_relative_eq!(agg.value(p), sum_at(p), max_relative = 1e-12);
        }
        // Non-increasing.
        let mut prev = f64::INFINITY;
        for p in (0..=100).map(|i| i as f64 / 100.0) {
            let v = agg.value(p);
            assert!(v <= prev + 1e-12);
            prev = v;
        }
    }

    #[test]
    fn clearing_selects_exact_tier() {
        let bids = [
            build_bid(0.8, 10.0),
            build_bid(0.5, 20.0),
            build_bid(0.2, 30.0),
        ];
        let agg = aggregate(&bids);
        let p = clear_market(&agg, 30.0);
        assert!(p >= 0.5 && p < 0.8, "p_r* = {p}");
        assert_relative_eq!(agg.value(p), 30.0);
    }

    #[test]
    fn clearing_trivial_targets() {
        let bids = [build_bid(0.6, 10.0), build_bid(0.3, 5.0)];
        let agg = aggregate(&bids);
        // No target: everything off.
        let p = clear_market(&agg, 0.0);
        assert!(p >= agg.max_corner());
        assert_eq!(agg.value(p), 0.0);
        // Target above the total: everything on.
        let p = clear_market(&agg, 100.0);
        assert_eq!(p, 0.0);
        assert_relative_eq!(agg.value(p), 15.0);
    }

    proptest! {
        #[test]
        fn clearing_matches_exhaustive_scan(
            seed in 0u64..2000,
            n in 1usize..10,
            target in 0.0f64..80.0,
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let bids: Vec<BidFunction> = (0..n)
                .map(|_| build_bid(rng.gen_range(0.0..=1.0), rng.gen_range(0.0..15.0)))
                .collect();
            let agg = aggregate(&bids);
            let p_star = clear_market(&agg, target);

            // Exhaustive scan over a dense grid plus interval endpoints.
            let sum_at = |p: f64| bids.iter().map(|b| b.value(p)).sum::<f64>();
            let mut best = f64::INFINITY;
            for i in 0..=4000 {
                let p = i as f64 / 4000.0;
                best = best.min((sum_at(p) - target).abs());
            }
            prop_assert!((sum_at(p_star) - target).abs() <= best + 1e-9);
        }

        #[test]
        fn clearing_scale_consistent(
            seed in 0u64..500,
            scale in 0.01f64..100.0,
            target in 0.0f64..50.0,
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let bids: Vec<BidFunction> = (0..7)
                .map(|_| build_bid(rng.gen_range(0.0..=1.0), rng.gen_range(0.1..15.0)))
                .collect();
            let scaled: Vec<BidFunction> = bids
                .iter()
                .map(|b| BidFunction { level_kw: b.level_kw * scale, corner: b.corner })
                .collect();
            let p1 = clear_market(&aggregate(&bids), target);
            let p2 = clear_market(&aggregate(&scaled), target * scale);
            prop_assert!((p1 - p2).abs() < 1e-12);
        }
    }
}
