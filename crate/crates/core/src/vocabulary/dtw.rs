//! Dynamic time warping over 1-D sequences.
//!
//! Classic DP over the |a| x |b| grid with local cost `|a_i - b_j|`, moves
//! right/down/diagonal, and boundary-to-boundary alignment. DTW is symmetric
//! and zero on identical inputs but is not a metric (no triangle inequality).

/// DTW distance. Panics on empty input; callers validate first.
pub fn dtw_distance(a: &[f64], b: &[f64], band: Option<usize>) -> f64 {
    assert!(
        !a.is_empty() && !b.is_empty(),
        "DTW is undefined for empty sequences"
    );
    let n = a.len();
    let m = b.len();
    // A Sakoe-Chiba band narrower than the length difference would make the
    // end cell unreachable.
    let band = band.map(|w| w.max(n.abs_diff(m))).unwrap_or(m + n);

    let mut prev = vec![f64::INFINITY; m];
    let mut cur = vec![f64::INFINITY; m];
    for i in 0..n {
        let lo = i.saturating_sub(band);
        let hi = (i + band + 1).min(m);
        cur[..].fill(f64::INFINITY);
        for j in lo..hi {
            let cost = (a[i] - b[j]).abs();
            let best = if i == 0 && j == 0 {
                0.0
            } else {
                let up = if i > 0 { prev[j] } else { f64::INFINITY };
                let left = if j > 0 { cur[j - 1] } else { f64::INFINITY };
                let diag = if i > 0 && j > 0 { prev[j - 1] } else { f64::INFINITY };
                up.min(left).min(diag)
            };
            cur[j] = cost + best;
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[m - 1]
}

/// DTW distance plus one optimal alignment path (pairs `(i, j)` from `(0,0)`
/// to `(n-1, m-1)`). Ties prefer the diagonal, then the vertical move.
pub fn dtw_path(a: &[f64], b: &[f64], band: Option<usize>) -> (f64, Vec<(usize, usize)>) {
    assert!(!a.is_empty() && !b.is_empty());
    let n = a.len();
    let m = b.len();
    let band = band.map(|w| w.max(n.abs_diff(m))).unwrap_or(m + n);

    let mut d = vec![f64::INFINITY; n * m];
    for i in 0..n {
        let lo = i.saturating_sub(band);
        let hi = (i + band + 1).min(m);
        for j in lo..hi {
            let cost = (a[i] - b[j]).abs();
            let best = if i == 0 && j == 0 {
                0.0
            } else {
                let up = if i > 0 { d[(i - 1) * m + j] } else { f64::INFINITY };
                let left = if j > 0 { d[i * m + j - 1] } else { f64::INFINITY };
                let diag = if i > 0 && j > 0 {
                    d[(i - 1) * m + j - 1]
                } else {
                    f64::INFINITY
                };
                diag.min(up).min(left)
            };
            d[i * m + j] = cost + best;
        }
    }

    let mut path = Vec::with_capacity(n + m);
    let (mut i, mut j) = (n - 1, m - 1);
    loop {
        path.push((i, j));
        if i == 0 && j == 0 {
            break;
        }
        let diag = if i > 0 && j > 0 {
            d[(i - 1) * m + j - 1]
        } else {
            f64::INFINITY
        };
        let up = if i > 0 { d[(i - 1) * m + j] } else { f64::INFINITY };
        let left = if j > 0 { d[i * m + j - 1] } else { f64::INFINITY };
        if diag <= up && diag <= left {
            i -= 1;
            j -= 1;
        } else if up <= left {
            i -= 1;
        } else {
            j -= 1;
        }
    }
    path.reverse();
    (d[n * m - 1], path)
}
