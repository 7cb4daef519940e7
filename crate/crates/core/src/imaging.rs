//! 2D grid helpers shared by preprocessing, augmentation and Grad-CAM. All
//! grids are row-major with pixel centers at integer coordinates.

/// Bilinear resize using pixel-center alignment; samples outside the source
/// clamp to the border.
pub fn resize_bilinear(src: &[f32], h: usize, w: usize, out_h: usize, out_w: usize) -> Vec<f32> {
    assert_eq!(src.len(), h * w);
    if h == out_h && w == out_w {
        return src.to_vec();
    }
    let taps = |n_in: usize, n_out: usize| -> Vec<(usize, usize, f32)> {
        let scale = n_in as f64 / n_out as f64;
        (0..n_out)
            .map(|i| {
                let c = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (n_in - 1) as f64);
                let lo = c.floor() as usize;
                (lo, (lo + 1).min(n_in - 1), (c - lo as f64) as f32)
            })
            .collect()
    };
    let ty = taps(h, out_h);
    let tx = taps(w, out_w);
    let mut out = Vec::with_capacity(out_h * out_w);
    for &(y0, y1, wy) in &ty {
        let (r0, r1) = (&src[y0 * w..(y0 + 1) * w], &src[y1 * w..(y1 + 1) * w]);
        for &(x0, x1, wx) in &tx {
            let top = r0[x0] + wx * (r0[x1] - r0[x0]);
            let bottom = r1[x0] + wx * (r1[x1] - r1[x0]);
            out.push(top + wy * (bottom - top));
        }
    }
    out
}

/// Bilinear resampling of a coarse grid whose cell `j` sits at output pixel
/// `offset + stride * j` along each axis. Pixels beyond the outer cell
/// centers take the border value.
pub fn upsample_anchored(
    src: &[f32],
    h: usize,
    w: usize,
    out_h: usize,
    out_w: usize,
    offset: [f64; 2],
    stride: [f64; 2],
) -> Vec<f32> {
    assert_eq!(src.len(), h * w);
    let taps = |n_in: usize, n_out: usize, off: f64, st: f64| -> Vec<(usize, usize, f32)> {
        (0..n_out)
            .map(|u| {
                let c = ((u as f64 - off) / st).clamp(0.0, (n_in - 1) as f64);
                let lo = c.floor() as usize;
                (lo, (lo + 1).min(n_in - 1), (c - lo as f64) as f32)
            })
            .collect()
    };
    let ty = taps(h, out_h, offset[0], stride[0]);
    let tx = taps(w, out_w, offset[1], stride[1]);
    let mut out = Vec::with_capacity(out_h * out_w);
    for &(y0, y1, wy) in &ty {
        let (r0, r1) = (&src[y0 * w..(y0 + 1) * w], &src[y1 * w..(y1 + 1) * w]);
        for &(x0, x1, wx) in &tx {
            let top = r0[x0] + wx * (r0[x1] - r0[x0]);
            let bottom = r1[x0] + wx * (r1[x1] - r1[x0]);
            out.push(top + wy * (bottom - top));
        }
    }
    out
}

/// Bilinear sample at a continuous coordinate; neighbors outside the grid
/// contribute `fill`.
#[inline]
pub fn sample_bilinear(src: &[f32], h: usize, w: usize, x: f64, y: f64, fill: f32) -> f32 {
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = (x - x0) as f32;
    let fy = (y - y0) as f32;
    let px = |xi: f64, yi: f64| -> f32 {
        if xi < 0.0 || yi < 0.0 || xi >= w as f64 || yi >= h as f64 {
            fill
        } else {
            src[yi as usize * w + xi as usize]
        }
    };
    if fx == 0.0 && fy == 0.0 {
        return px(x0, y0);
    }
    let top = px(x0, y0) * (1.0 - fx) + px(x0 + 1.0, y0) * fx;
    let bottom = px(x0, y0 + 1.0) * (1.0 - fx) + px(x0 + 1.0, y0 + 1.0) * fx;
    top * (1.0 - fy) + bottom * fy
}
