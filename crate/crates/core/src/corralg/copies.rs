//! Deadline copies: a few points of a non-increasing reward curve that
//! sandwich the whole curve within constant factors.

use crate::field::Field;

/// Deadlines `I` for the non-increasing curve `f` (indexed by distance).
///
/// Starting from the last point where `f` is positive, walk left and add
/// the largest `d` whose value exceeds twice the last added one. Every `d`
/// then has an `I` point at or after it with at least half its value, and
/// the values in `I` at or after `d` grow geometrically, so they sum to less
/// than `2 f(d)`.
pub fn copies<F: Field>(f: &[F]) -> Vec<usize> {
    let Some(last) = f.iter().rposition(|x| *x > F::zero()) else {
        return Vec::new();
    };
    let mut out = vec![last];
    let mut anchor = f[last].clone();
    for d in (0..last).rev() {
        if f[d] > anchor.clone() + anchor.clone() {
            out.push(d);
            anchor = f[d].clone();
        }
    }
    out.reverse();
    out
}

/// Check both sandwich inequalities at every `d` with `f(d) > 0`; returns
/// the failing distances.
pub fn sandwich_violations<F: Field>(f: &[F], set: &[usize]) -> Vec<usize> {
    let three = F::from_int(3);
    let two = F::from_int(2);
    (0..f.len())
        .filter(|&d| f[d] > F::zero())
        .filter(|&d| {
            let later = set.iter().filter(|&&y| y >= d);
            let sum = later.clone().fold(F::zero(), |a, &y| a + f[y].clone());
            let max = later.fold(F::zero(), |a, &y| if f[y] > a { f[y].clone() } else { a });
            sum > three.clone() * f[d].clone() || f[d] > two.clone() * max
        })
        .collect()
}
