use super::Raster;

/// Halves both dimensions by 2x2 block averaging. Odd trailing rows and
/// columns average over the part of the block that exists, so the output is
/// `ceil(h / 2) x ceil(w / 2)`.
pub fn downsample2(raster: &Raster) -> Raster {
    let (h, w) = (raster.height(), raster.width());
    let (oh, ow) = (h.div_ceil(2), w.div_ceil(2));
    Raster::from_fn(oh, ow, raster.channels(), |c, r, col| {
        let (r0, c0) = (2 * r, 2 * col);
        let (r1, c1) = ((r0 + 2).min(h), (c0 + 2).min(w));
        let mut sum = 0.0f64;
        for i in r0..r1 {
            for j in c0..c1 {
                sum += raster.get(c, i, j) as f64;
            }
        }
        (sum / ((r1 - r0) * (c1 - c0)) as f64) as f32
    })
}

/// Source coordinate and blend weight for corner-aligned resampling.
fn taps(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    (0..dst)
        .map(|i| {
            if src == 1 || dst == 1 {
                return (0, 0, 0.0);
            }
            let x = i as f64 * (src - 1) as f64 / (dst - 1) as f64;
            let lo = (x.floor() as usize).min(src - 1);
            let hi = (lo + 1).min(src - 1);
            (lo, hi, x - lo as f64)
        })
        .collect()
}

/// Bilinear resampling with corners aligned: output pixel (0,0) and
/// (th-1, tw-1) land exactly on the source corners.
pub fn upsample_bilinear(raster: &Raster, target_h: usize, target_w: usize) -> Raster {
    let rows = taps(raster.height(), target_h);
    let cols = taps(raster.width(), target_w);
    Raster::from_fn(target_h, target_w, raster.channels(), |c, r, k| {
        let (r0, r1, fy) = rows[r];
        let (c0, c1, fx) = cols[k];
        let v00 = raster.get(c, r0, c0) as f64;
        let v01 = raster.get(c, r0, c1) as f64;
        let v10 = raster.get(c, r1, c0) as f64;
        let v11 = raster.get(c, r1, c1) as f64;
        let top = v00 + (v01 - v00) * fx;
        let bottom = v10 + (v11 - v10) * fx;
        (top + (bottom - top) * fy) as f32
    })
}
