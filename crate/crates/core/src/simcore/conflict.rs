//! Receiver-side rx-rx conflict detection over reception intervals.

/// Closed reception interval `[start, end]` at a receiver.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Interval {
    pub start: f64,
    pub end: f64,
}

impl Interval {
    pub fn new(start: f64, end: f64) -> Self {
        debug_assert!(start <= end);
        Self { start, end }
    }

    /// Closed-interval overlap: touching endpoints conflict.
    pub fn overlaps(&self, other: &Interval) -> bool {
        self.start <= other.end && other.start <= self.end
    }

    pub fn contains(&self, t: f64) -> bool {
        self.start <= t && t <= self.end
    }

    pub fn len(&self) -> f64 {
        self.end - self.start
    }
}

/// Conflict flags plus the peak receiver occupancy.
#[derive(Clone, Debug, PartialEq)]
pub struct ConflictReport {
    pub conflicted: Vec<bool>,
    pub max_occupancy: usize,
}

impl ConflictReport {
    pub fn conflict_count(&self) -> usize {
        self.conflicted.iter().filter(|&&c| c).count()
    }
}

/// Flags every interval that overlaps at least one other.
///
/// Runs in `O(n log n)`: after sorting by start, an interval overlaps an
/// earlier one iff its start is at most the running maximum end, and a later
/// one iff the next start is at most its end.
pub fn detect_conflicts(intervals: &[Interval]) -> ConflictReport {
    let n = intervals.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| intervals[a].start.total_cmp(&intervals[b].start).then(a.cmp(&b)));
    let mut conflicted = vec![false; n];
    let mut running_end = f64::NEG_INFINITY;
    for (k, &i) in order.iter().enumerate() {
        let iv = intervals[i];
        if iv.start <= running_end {
            conflicted[i] = true;
        }
        if let Some(&next) = order.get(k + 1) {
            if intervals[next].start <= iv.end {
                conflicted[i] = true;
            }
        }
        running_end = running_end.max(iv.end);
    }
    ConflictReport { conflicted, max_occupancy: max_occupancy(intervals) }
}

/// Number of intervals covering `t` (the receiver's `m_recv^t`).
pub fn occupancy_at(intervals: &[Interval], t: f64) -> usize {
    intervals.iter().filter(|iv| iv.contains(t)).count()
}

/// Maximum of `occupancy_at` over all `t`.
pub fn max_occupancy(intervals: &[Interval]) -> usize {
    // Starts sort before ends at equal times so touching intervals count twice.
    let mut edges: Vec<(f64, i32)> = intervals.iter().flat_map(|iv| [(iv.start, 1), (iv.end, -1)]).collect();
    edges.sort_by(|a, b| a.0.total_cmp(&b.0).then(b.1.cmp(&a.1)));
    let mut cur = 0i32;
    let mut best = 0i32;
    for (_, d) in edges {
        cur += d;
        best = best.max(cur);
    }
    best as usize
}

/// Total length of the union of `intervals` clipped to `[lo, hi]`.
pub fn union_length(intervals: &[Interval], lo: f64, hi: f64) -> f64 {
    let mut clipped: Vec<Interval> = intervals
        .iter()
        .filter_map(|iv| {
            let s = iv.start.max(lo);
            let e = iv.end.min(hi);
            (s < e).then_some(Interval { start: s, end: e })
        })
        .collect();
    clipped.sort_by(|a, b| a.start.total_cmp(&b.start));
    let mut total = 0.0;
    let mut cur: Option<Interval> = None;
    for iv in clipped {
        match cur.as_mut() {
            Some(c) if iv.start <= c.end => c.end = c.end.max(iv.end),
            _ => {
                if let Some(c) = cur.take() {
                    total += c.len();
                }
                cur = Some(iv);
            }
        }
    }
    total + cur.map_or(0.0, |c| c.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn iv(s: f64, e: f64) -> Interval {
        Interval::new(s, e)
    }

    fn oracle(ivs: &[Interval]) -> Vec<bool> {
        (0..ivs.len()).map(|i| (0..ivs.len()).any(|j| i != j && ivs[i].overlaps(&ivs[j]))).collect()
    }

    #[test]
    fn named_cases() {
        let r = detect_conflicts(&[iv(10.0, 11.0), iv(11.5, 12.0)]);
        assert_eq!(r.conflicted, [false, false]);
        assert_eq!(r.max_occupancy, 1);
        let r = detect_conflicts(&[iv(10.0, 11.0), iv(10.5, 12.0)]);
        assert_eq!(r.conflicted, [true, true]);
        assert_eq!(r.conflict_count(), 2);
        assert_eq!(r.max_occupancy, 2);
        let r = detect_conflicts(&[iv(10.0, 11.0), iv(11.0, 12.0)]);
        assert_eq!(r.conflicted, [true, true]);
        assert_eq!(r.max_occupancy, 2);
        assert_eq!(detect_conflicts(&[]).max_occupancy, 0);
    }

    #[test]
    fn occupancy_counts() {
        let ivs = [iv(0.0, 2.0), iv(1.0, 3.0), iv(1.5, 1.7)];
        assert_eq!(occupancy_at(&ivs, 1.6), 3);
        assert_eq!(occupancy_at(&ivs, 2.5), 1);
        assert_eq!(occupancy_at(&ivs, 4.0), 0);
        assert_eq!(max_occupancy(&ivs), 3);
    }

    #[test]
    fn union_lengths() {
        let ivs = [iv(0.0, 2.0), iv(1.0, 3.0), iv(5.0, 6.0)];
        assert!((union_length(&ivs, 0.0, 10.0) - 4.0).abs() < 1e-12);
        assert!((union_length(&ivs, 2.5, 5.5) - 1.0).abs() < 1e-12);
        assert_eq!(union_length(&[], 0.0, 1.0), 0.0);
    }

    proptest! {
        #[test]
        fn matches_pairwise_oracle(raw in proptest::collection::vec((0.0f64..20.0, 0.1f64..3.0), 0..12)) {
            // quantize so that touching endpoints occur
            let ivs: Vec<Interval> = raw.iter().map(|&(s, l)| {
                let s = (s * 4.0).round() / 4.0;
                let l = (l * 4.0).round().max(1.0) / 4.0;
                iv(s, s + l)
            }).collect();
            let r = detect_conflicts(&ivs);
            prop_assert_eq!(&r.conflicted, &oracle(&ivs));
            prop_assert_eq!(r.max_occupancy <= 1, r.conflict_count() == 0);
        }
    }
}
