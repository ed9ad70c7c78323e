//! Largest-remainder (Hamilton) apportionment.
//!
//! Each entry receives the floor of its quota `total * w_i / sum(w)`; the
//! leftover units go to the largest fractional parts, ties to the lowest index.
//! An all-zero weight vector is treated as uniform.

use std::cmp::Ordering;

/// Exact apportionment for integer weights.
pub fn largest_remainder(total: u64, weights: &[u64]) -> Vec<u64> {
    if weights.is_empty() {
        return Vec::new();
    }
    let sum: u128 = weights.iter().map(|&w| w as u128).sum();
    if sum == 0 {
        return largest_remainder(total, &vec![1; weights.len()]);
    }
    let total = total as u128;
    let mut out = Vec::with_capacity(weights.len());
    let mut rems = Vec::with_capacity(weights.len());
    for &w in weights {
        let num = total * w as u128;
        out.push((num / sum) as u64);
        rems.push(num % sum);
    }
    let given: u128 = out.iter().map(|&v| v as u128).sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| rems[b].cmp(&rems[a]).then(a.cmp(&b)));
    for &idx in order.iter().take((total - given) as usize) {
        out[idx] += 1;
    }
    out
}

/// Apportionment for real, non-negative weights. Fractional parts closer
/// than `1e-9` are considered tied.
pub fn largest_remainder_real(total: u64, weights: &[f64]) -> Vec<u64> {
    if weights.is_empty() {
        return Vec::new();
    }
    let clean: Vec<f64> = weights
        .iter()
        .map(|&w| if w.is_finite() && w > 0.0 { w } else { 0.0 })
        .collect();
    let sum: f64 = clean.iter().sum();
    if sum <= 0.0 {
        return largest_remainder(total, &vec![1; weights.len()]);
    }
    let mut out = Vec::with_capacity(clean.len());
    let mut fracs = Vec::with_capacity(clean.len());
    for &w in &clean {
        let quota = total as f64 * w / sum;
        let mut fl = quota.floor();
        let mut frac = quota - fl;
        // absorb representation error such as 2.9999999999999996
        if 1.0 - frac < 1e-9 {
            fl += 1.0;
            frac = 0.0;
        }
        out.push(fl as u64);
        fracs.push(frac);
    }
    let given: u64 = out.iter().sum();
    if given >= total {
        // rounding pushed us over; trim from the smallest fractional parts
        let mut excess = given - total;
        let mut order: Vec<usize> = (0..out.len()).collect();
        order.sort_by(|&a, &b| cmp_frac(fracs[a], fracs[b]).then(b.cmp(&a)));
        for idx in order {
            if excess == 0 {
                break;
            }
            if out[idx] > 0 {
                out[idx] -= 1;
                excess -= 1;
            }
        }
        return out;
    }
    let mut order: Vec<usize> = (0..out.len()).collect();
    order.sort_by(|&a, &b| cmp_frac(fracs[b], fracs[a]).then(a.cmp(&b)));
    for &idx in order.iter().take((total - given) as usize) {
        out[idx] += 1;
    }
    out
}

fn cmp_frac(a: f64, b: f64) -> Ordering {
    if (a - b).abs() < 1e-9 {
        Ordering::Equal
    } else {
        a.partial_cmp(&b).unwrap_or(Ordering::Equal)
    }
}
