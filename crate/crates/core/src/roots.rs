/// Absolute tolerance promised for every root returned by [`bisect_decreasing`].
/// The loop actually runs until the bracket can no longer be split.
pub const ROOT_TOLERANCE: f64 = 1e-10;

const MAX_ITER: usize = 200;

/// Root of a strictly decreasing `f` on `(lo, hi)` with `f(lo) > 0 > f(hi)`.
///
/// Bisects until the midpoint coincides with an endpoint, so the result is
/// accurate to a couple of ulps of the bracket scale.
pub fn bisect_decreasing<F>(mut lo: f64, mut hi: f64, f: F) -> f64
where
    F: Fn(f64) -> f64,
{
    debug_assert!(lo < hi);
    for _ in 0..MAX_ITER {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let v = f(mid);
        if v > 0.0 {
            lo = mid;
        } else if v < 0.0 {
            hi = mid;
        } else {
            return mid;
        }
    }
    let root = 0.5 * (lo + hi);
    debug_assert!(hi - lo <= ROOT_TOLERANCE);
    root
}
