use crate::bounds::{MomentOrder, TruncationBox};
use crate::univariate::Family;

/// Whether `E[X^k | a <= X <= b]` is finite.
///
/// Normal kernels always qualify. For the t kernel the total order carried by
/// coordinates with an infinite limit must stay strictly below `ν + p₁`, where `p₁`
/// counts coordinates with both limits finite.
pub fn existence_check(family: Family, bx: &TruncationBox, order: &MomentOrder) -> bool {
    match family {
        Family::Normal => true,
        Family::StudentT { nu } => {
            let p1 = bx.count_bounded() as f64;
            let k2: u32 = order
                .as_slice()
                .iter()
                .enumerate()
                .filter(|&(i, _)| !bx.is_bounded(i))
                .map(|(_, &k)| k)
                .sum();
            (k2 as f64) < nu + p1
        }
    }
}

/// Per-coordinate existence of the mean and per-entry existence of `E[X Xᵀ]`.
pub(crate) fn moment_flags(family: Family, bx: &TruncationBox) -> (Vec<bool>, Vec<Vec<bool>>) {
    let p = bx.dim();
    let mean = (0..p)
        .map(|i| existence_check(family, bx, &MomentOrder::unit(p, i)))
        .collect();
    let second = (0..p)
        .map(|i| {
            (0..p)
                .map(|j| existence_check(family, bx, &MomentOrder::pair(p, i, j)))
                .collect()
        })
        .collect();
    (mean, second)
}
