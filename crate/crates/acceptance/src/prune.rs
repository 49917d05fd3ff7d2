//! Integer pruning schedule and sort-based selection.

/// Masked totals after each of `steps` steps, each removing
/// `max(1, ⌈num/den · unmasked⌉)` of the weights still unmasked. Exact
/// integer arithmetic.
pub fn masked_after(total: usize, num: usize, den: usize, steps: usize) -> Vec<usize> {
    let mut unmasked = total;
    (0..steps)
        .map(|_| {
            let k = (num * unmasked).div_ceil(den).clamp(1, unmasked.max(1));
            unmasked -= k.min(unmasked);
            total - unmasked
        })
        .collect()
}

/// The `k` entries `(magnitude, layer, index)` that come first when the
/// whole list is sorted by magnitude, then layer, then index.
pub fn bottom_k(cands: &[(f64, usize, usize)], k: usize) -> Vec<(usize, usize)> {
    let mut all = cands.to_vec();
    all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    all.into_iter().take(k).map(|(_, l, i)| (l, i)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_percent_schedule() {
        // 100 → 98 → 96 (⌈1.96⌉ = 2) → 94 (⌈1.92⌉ = 2)
        assert_eq!(masked_after(100, 2, 100, 3), vec![2, 4, 6]);
        // A small pool still loses one weight per step.
        assert_eq!(masked_after(3, 2, 100, 4), vec![1, 2, 3, 3]);
    }

    #[test]
    fn selection() {
        let c = [(0.5, 0, 0), (0.1, 1, 3), (0.1, 0, 7), (0.2, 0, 1)];
        assert_eq!(bottom_k(&c, 2), vec![(0, 7), (1, 3)]);
    }
}
