//! Gradient-weighted class activation maps at the last convolution.

use crate::imaging::upsample_anchored;
use crate::nn::{LayerSpec, Mode, ModelSpec, Network, NnError, Tensor};

/// Blend weight of the colormap at full heat.
pub const OVERLAY_ALPHA: f64 = 0.4;

#[derive(Debug, thiserror::Error)]
pub enum GradCamError {
    #[error("model has no convolutional layer")]
    NoConvLayer,
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("image encoding failed: {0}")]
    Encode(String),
    #[error("slice has {actual} pixels, expected {expected}")]
    SliceSize { expected: usize, actual: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeatMap {
    /// `ReLU(sum_k weight_k * A^k)` at the last conv layer, row-major.
    pub raw: Vec<f64>,
    pub raw_height: usize,
    pub raw_width: usize,
    /// Bilinear upsample of `raw` to the input size, scaled to max 1. Each raw
    /// cell is anchored at the center of its receptive field.
    pub upsampled: Vec<f32>,
    pub height: usize,
    pub width: usize,
    /// Spatial mean of the logit gradient for each channel.
    pub channel_weights: Vec<f64>,
}

impl HeatMap {
    /// Row-major index of the hottest upsampled pixel (first on ties).
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = 0;
        for (i, &v) in self.upsampled.iter().enumerate() {
            if v > self.upsampled[best] {
                best = i;
            }
        }
        (best / self.width, best % self.width)
    }

    /// The raw grid as CSV, one row per line.
    pub fn raw_csv(&self) -> String {
        let mut s = String::new();
        for row in self.raw.chunks(self.raw_width) {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:.9e}")).collect();
            s.push_str(&cells.join(","));
            s.push('\n');
        }
        s
    }
}

/// Input pixel coordinate of cell `j` at the output of layer `upto` is
/// `offset + stride * j`. Unpadded convolutions shift the grid by half a
/// kernel and pooling multiplies the stride, so the last-conv grid covers an
/// inner window of the input rather than all of it.
pub fn cell_geometry(spec: &ModelSpec, upto: usize) -> (f64, f64) {
    let (mut offset, mut stride) = (0.0, 1.0);
    for layer in &spec.layers[..=upto] {
        match *layer {
            LayerSpec::Conv2d { kernel, .. } => offset += stride * (kernel - 1) as f64 / 2.0,
            LayerSpec::MaxPool2d { pool } => {
                offset += stride * (pool - 1) as f64 / 2.0;
                stride *= pool as f64;
            }
            _ => {}
        }
    }
    (offset, stride)
}

/// Heat maps for every sample of an NHWC batch, in eval mode.
pub fn gradcam_batch(net: &Network<f32>, x: &Tensor<f32>) -> Result<Vec<HeatMap>, GradCamError> {
    let layer = net.spec().last_conv().ok_or(GradCamError::NoConvLayer)?;
    let (offset, stride) = cell_geometry(net.spec(), layer);
    let mut rng = crate::rng::rng_for(0, &[]);
    let (_, tape) = net.forward_with(x, Mode::Eval, &mut rng, true, Some(layer))?;
    let acts = tape.captured.as_ref().expect("capture requested");
    let n = x.batch();
    let grads = net.grad_wrt_output(&tape, &vec![1.0f32; n], layer)?;
    let [_, gh, gw, c] = <[usize; 4]>::try_from(acts.dims()).expect("conv output is NHWC");
    let (h, w) = (x.dims()[1], x.dims()[2]);
    let plane = gh * gw * c;
    let mut maps = Vec::with_capacity(n);
    for s in 0..n {
        let a = &acts.values[s * plane..(s + 1) * plane];
        let g = &grads.values[s * plane..(s + 1) * plane];
        let mut weights = vec![0.0f64; c];
        for px in g.chunks_exact(c) {
            weights.iter_mut().zip(px).for_each(|(w, &v)| *w += v as f64);
        }
        weights.iter_mut().for_each(|w| *w /= (gh * gw) as f64);
        let raw: Vec<f64> = a
            .chunks_exact(c)
            .map(|px| px.iter().zip(&weights).map(|(&v, &wk)| v as f64 * wk).sum::<f64>().max(0.0))
            .collect();
        let raw32: Vec<f32> = raw.iter().map(|&v| v as f32).collect();
        let mut up = upsample_anchored(&raw32, gh, gw, h, w, [offset; 2], [stride; 2]);
        let max = up.iter().copied().fold(0.0f32, f32::max);
        if max > 0.0 {
            up.iter_mut().for_each(|v| *v = (*v / max).clamp(0.0, 1.0));
        }
        maps.push(HeatMap {
            raw,
            raw_height: gh,
            raw_width: gw,
            upsampled: up,
            height: h,
            width: w,
            channel_weights: weights,
        });
    }
    Ok(maps)
}

/// Heat map for one normalized slice, replicated across the input channels.
pub fn gradcam(net: &Network<f32>, slice: &[f32]) -> Result<HeatMap, GradCamError> {
    let [h, w, c] = net.spec().input;
    if slice.len() != h * w {
        return Err(GradCamError::SliceSize { expected: h * w, actual: slice.len() });
    }
    let values = slice.iter().flat_map(|&v| std::iter::repeat_n(v, c)).collect();
    let x = Tensor::new(vec![1, h, w, c], values);
    Ok(gradcam_batch(net, &x)?.remove(0))
}

/// Blue (0) through cyan, green and yellow to red (1).
pub fn colormap(h: f64) -> [f64; 3] {
    let h = h.clamp(0.0, 1.0);
    let t = 4.0 * h;
    match t {
        t if t < 1.0 => [0.0, t, 1.0],
        t if t < 2.0 => [0.0, 1.0, 2.0 - t],
        t if t < 3.0 => [t - 2.0, 1.0, 0.0],
        t => [1.0, 4.0 - t, 0.0],
    }
}

/// RGB pixels: gray CT tinted by the heat map with weight `0.4 * heat`.
pub fn overlay_rgb(slice: &[f32], heat: &[f32]) -> Vec<u8> {
    assert_eq!(slice.len(), heat.len());
    let mut out = Vec::with_capacity(slice.len() * 3);
    for (&g, &hv) in slice.iter().zip(heat) {
        let gray = g.clamp(0.0, 1.0) as f64;
        let hv = hv.clamp(0.0, 1.0) as f64;
        let a = OVERLAY_ALPHA * hv;
        for ch in colormap(hv) {
            out.push((((1.0 - a) * gray + a * ch) * 255.0).round() as u8);
        }
    }
    out
}

/// 8-bit RGB PNG with optional UTF-8 text chunks.
pub fn encode_png(rgb: &[u8], width: usize, height: usize, text: &[(&str, &str)]) -> Result<Vec<u8>, GradCamError> {
    let mut buf = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut buf, width as u32, height as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        for (k, v) in text {
            enc.add_itxt_chunk(k.to_string(), v.to_string()).map_err(|e| GradCamError::Encode(e.to_string()))?;
        }
        let mut writer = enc.write_header().map_err(|e| GradCamError::Encode(e.to_string()))?;
        writer.write_image_data(rgb).map_err(|e| GradCamError::Encode(e.to_string()))?;
    }
    Ok(buf)
}

/// Decodes an 8-bit RGB PNG into `(pixels, width, height)`.
pub fn decode_png(bytes: &[u8]) -> Result<(Vec<u8>, usize, usize), GradCamError> {
    let dec = png::Decoder::new(std::io::Cursor::new(bytes));
    let mut reader = dec.read_info().map_err(|e| GradCamError::Encode(e.to_string()))?;
    let mut buf = vec![0; reader.output_buffer_size().unwrap_or(0)];
    let info = reader.next_frame(&mut buf).map_err(|e| GradCamError::Encode(e.to_string()))?;
    buf.truncate(info.buffer_size());
    Ok((buf, info.width as usize, info.height as usize))
}

/// UTF-8 text chunks of a PNG as `(keyword, text)`.
pub fn png_text(bytes: &[u8]) -> Result<Vec<(String, String)>, GradCamError> {
    let dec = png::Decoder::new(std::io::Cursor::new(bytes));
    let reader = dec.read_info().map_err(|e| GradCamError::Encode(e.to_string()))?;
    reader
        .info()
        .utf8_text
        .iter()
        .map(|c| Ok((c.keyword.clone(), c.get_text().map_err(|e| GradCamError::Encode(e.to_string()))?)))
        .collect()
}

/// PNG overlay of `map` on `slice`.
pub fn overlay_png(slice: &[f32], map: &HeatMap, text: &[(&str, &str)]) -> Result<Vec<u8>, GradCamError> {
    encode_png(&overlay_rgb(slice, &map.upsampled), map.width, map.height, text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_grid_geometry() {
        let spec = ModelSpec::simple_cnn(192);
        let (offset, stride) = cell_geometry(&spec, spec.last_conv().unwrap());
        assert_eq!((offset, stride), (18.5, 8.0));
        // Floor pooling of odd sizes drops trailing rows, so the far margin is wider.
        assert_eq!(offset + stride * 19.0, 170.5);
    }

    #[test]
    fn colormap_ends() {
        assert_eq!(colormap(0.0), [0.0, 0.0, 1.0]);
        assert_eq!(colormap(1.0), [1.0, 0.0, 0.0]);
        assert_eq!(colormap(0.5), [0.0, 1.0, 0.0]);
    }

    #[test]
    fn overlay_saturation_cases() {
        let slice = [0.0f32, 0.5, 1.0];
        let gray: Vec<u8> = slice.iter().flat_map(|&g| [(g * 255.0).round() as u8; 3]).collect();
        assert_eq!(overlay_rgb(&slice, &[0.0; 3]), gray);
        let hot = overlay_rgb(&slice, &[1.0; 3]);
        for (i, &g) in slice.iter().enumerate() {
            let base = 0.6 * g as f64 * 255.0;
            assert_eq!(hot[3 * i], (base + 0.4 * 255.0).round() as u8);
            assert_eq!(hot[3 * i + 1], base.round() as u8);
            assert_eq!(hot[3 * i + 2], base.round() as u8);
        }
    }

    #[test]
    fn png_round_trip() {
        let rgb: Vec<u8> = (0..4 * 3 * 3).map(|i| (i * 7) as u8).collect();
        let png = encode_png(&rgb, 4, 3, &[("provenance", "{\"seed\": 1}")]).unwrap();
        assert_eq!(decode_png(&png).unwrap(), (rgb, 4, 3));
        assert_eq!(png_text(&png).unwrap(), vec![("provenance".to_string(), "{\"seed\": 1}".to_string())]);
    }
}
