//! Slow, obviously-correct reference implementations shared by the
//! integration tests.
#![allow(dead_code)]

use hetcd::raster::Raster;

/// Change prior by direct enumeration: every window, every pixel pair,
/// neighbour ranks by full sort. Returns per-pixel means and window counts.
pub fn naive_prior(x: &Raster, y: &Raster, k: usize, stride: usize, knn: usize) -> (Vec<f64>, Vec<u32>) {
    let (h, w) = (x.height(), x.width());
    let mut sum = vec![0.0; h * w];
    let mut count = vec![0u32; h * w];
    let mut rows: Vec<usize> = (0..=h - k).step_by(stride).collect();
    if *rows.last().unwrap() != h - k {
        rows.push(h - k);
    }
    let mut cols: Vec<usize> = (0..=w - k).step_by(stride).collect();
    if *cols.last().unwrap() != w - k {
        cols.push(w - k);
    }
    let n = k * k;
    let pos = |r0: usize, c0: usize, i: usize| (r0 + i / k, c0 + i % k);
    let dist = |img: &Raster, a: (usize, usize), b: (usize, usize)| -> f64 {
        (0..img.channels())
            .map(|c| {
                let d = img.get(c, a.0, a.1) as f64 - img.get(c, b.0, b.1) as f64;
                d * d
            })
            .sum::<f64>()
            .sqrt()
    };
    for &r0 in &rows {
        for &c0 in &cols {
            let affinity = |img: &Raster| -> Vec<Vec<f64>> {
                let d: Vec<Vec<f64>> = (0..n)
                    .map(|i| (0..n).map(|j| dist(img, pos(r0, c0, i), pos(r0, c0, j))).collect())
                    .collect();
                let mut width = 0.0;
                for (i, row) in d.iter().enumerate() {
                    let mut others: Vec<f64> =
                        row.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, &v)| v).collect();
                    others.sort_by(f64::total_cmp);
                    width += others[knn - 1];
                }
                width /= n as f64;
                if width <= 0.0 {
                    width = 1e-6;
                }
                d.iter()
                    .map(|row| row.iter().map(|v| (-(v * v) / (width * width)).exp()).collect())
                    .collect()
            };
            let (ax, ay) = (affinity(x), affinity(y));
            for i in 0..n {
                let deg: f64 = (0..n).map(|j| (ax[i][j] - ay[i][j]).abs()).sum();
                let (r, c) = pos(r0, c0, i);
                sum[r * w + c] += deg / n as f64;
                count[r * w + c] += 1;
            }
        }
    }
    let alpha = sum.iter().zip(&count).map(|(s, &c)| s / c as f64).collect();
    (alpha, count)
}

/// Exhaustive Otsu: tries all 256 split points of a 256-bin histogram of
/// `values` and returns the first bin of the upper class.
pub fn brute_otsu_bin(values: &[f64]) -> Option<usize> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi <= lo {
        return None;
    }
    let mut hist = [0u64; 256];
    for &v in values {
        let b = ((v - lo) / (hi - lo) * 256.0).floor().clamp(0.0, 255.0) as usize;
        hist[b] += 1;
    }
    brute_otsu_counts(&hist)
}

/// Between-class variance `w0 w1 (mu0 - mu1)^2` evaluated from scratch for
/// every split, with exact rational comparison to dodge rounding ties.
pub fn brute_otsu_counts(hist: &[u64]) -> Option<usize> {
    let mut best: Option<(usize, u128, u128)> = None;
    for t in 1..hist.len() {
        let (mut n0, mut s0, mut n1, mut s1) = (0u128, 0u128, 0u128, 0u128);
        for (b, &c) in hist.iter().enumerate() {
            if b < t {
                n0 += c as u128;
                s0 += b as u128 * c as u128;
            } else {
                n1 += c as u128;
                s1 += b as u128 * c as u128;
            }
        }
        if n0 == 0 || n1 == 0 {
            continue;
        }
        // (mu1 - mu0)^2 n0 n1 / N^2 compared as fractions num/den with
        // num = (s1 n0 - s0 n1)^2 and den = n0 n1.
        let diff = (s1 * n0).abs_diff(s0 * n1);
        let (num, den) = (diff * diff, n0 * n1);
        match best {
            Some((_, bn, bd)) if num * bd <= bn * den => {}
            _ => best = Some((t, num, den)),
        }
    }
    best.map(|(t, _, _)| t)
}

/// Mann-Whitney U over all (changed, unchanged) pairs, ties counting one
/// half, divided by the number of pairs.
pub fn mann_whitney_auc(scores: &[f64], truth: &[bool]) -> f64 {
    let pos: Vec<f64> = scores.iter().zip(truth).filter(|(_, &t)| t).map(|(&s, _)| s).collect();
    let neg: Vec<f64> = scores.iter().zip(truth).filter(|(_, &t)| !t).map(|(&s, _)| s).collect();
    let mut twice = 0u64;
    for &p in &pos {
        for &q in &neg {
            twice += if p > q {
                2
            } else if p == q {
                1
            } else {
                0
            };
        }
    }
    twice as f64 / (2 * pos.len() * neg.len()) as f64
}

pub fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
