use super::Image;
use crate::{Error, Result, FRAME_SIZE};

/// Bilinear resampling on a corner-aligned grid: output pixel `i` samples
/// source coordinate `i · (n_in − 1) / (n_out − 1)`, so the four corners map
/// onto the source corners exactly.
pub fn resize_bilinear(src: &Image, out_w: usize, out_h: usize) -> Result<Image> {
    if src.width == 0 || src.height == 0 || src.data.is_empty() {
        return Err(Error::Image("cannot resample an empty image".into()));
    }
    if out_w == 0 || out_h == 0 {
        return Err(Error::Image("output size must be positive".into()));
    }
    if out_w == src.width && out_h == src.height {
        return Ok(src.clone());
    }
    let xs = axis_samples(src.width, out_w);
    let ys = axis_samples(src.height, out_h);
    let mut data = Vec::with_capacity(out_w * out_h);
    for &(y0, y1, fy) in &ys {
        let row0 = &src.data[y0 * src.width..(y0 + 1) * src.width];
        let row1 = &src.data[y1 * src.width..(y1 + 1) * src.width];
        for &(x0, x1, fx) in &xs {
            let top = row0[x0] as f64 * (1.0 - fx) + row0[x1] as f64 * fx;
            let bottom = row1[x0] as f64 * (1.0 - fx) + row1[x1] as f64 * fx;
            data.push((top * (1.0 - fy) + bottom * fy) as f32);
        }
    }
    Image::new(out_w, out_h, data)
}

/// `(lower index, upper index, fractional weight of upper)` per output pixel.
fn axis_samples(n_in: usize, n_out: usize) -> Vec<(usize, usize, f64)> {
    (0..n_out)
        .map(|i| {
            if n_in == 1 || n_out == 1 {
                return (0, 0, 0.0);
            }
            let pos = i as f64 * (n_in - 1) as f64 / (n_out - 1) as f64;
            let lo = (pos.floor() as usize).min(n_in - 1);
            let hi = (lo + 1).min(n_in - 1);
            (lo, hi, pos - lo as f64)
        })
        .collect()
}

/// Resamples any non-empty grayscale image to 128×128 and clips to `[0, 1]`.
pub fn preprocess(raw: &Image) -> Result<Image> {
    let mut out = resize_bilinear(raw, FRAME_SIZE, FRAME_SIZE)?;
    for v in &mut out.data {
        *v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
    }
    Ok(out)
}
