//! Overlays and prototype images.

use crate::assembly::PrototypeStack;
use crate::data::pnm::Pnm;
use crate::model::Detection;
use crate::tensor::Real;

/// Colour of instance `i`: hues spaced by the golden-ratio conjugate.
pub fn palette(i: usize) -> [u8; 3] {
    let h = (i as f64 * 0.618_033_988_749_895).fract() * 6.0;
    let (s, v) = (0.85, 0.95);
    let c = v * s;
    let x = c * (1.0 - (h % 2.0 - 1.0).abs());
    let (r, g, b) = match h as usize {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r, g, b].map(|ch| ((ch + m) * 255.0).round() as u8)
}

/// Blends each detection's mask into an interleaved RGB image and outlines
/// its box.
pub fn overlay(rgb: &[u8], size: usize, detections: &[Detection]) -> Pnm {
    let mut px = rgb.to_vec();
    for (i, d) in detections.iter().enumerate() {
        let col = palette(i);
        if let Some(m) = &d.mask {
            for y in 0..size.min(m.height()) {
                for x in 0..size.min(m.width()) {
                    if m.get(y, x) {
                        let p = (y * size + x) * 3;
                        for c in 0..3 {
                            px[p + c] = ((px[p + c] as u16 + col[c] as u16) / 2) as u8;
                        }
                    }
                }
            }
        }
        let to_px = |v: f64| ((v * size as f64) as usize).min(size - 1);
        let (x0, y0, x1, y1) = (to_px(d.bbox.x1), to_px(d.bbox.y1), to_px(d.bbox.x2), to_px(d.bbox.y2));
        let mut put = |x: usize, y: usize| px[(y * size + x) * 3..(y * size + x) * 3 + 3].copy_from_slice(&col);
        for x in x0..=x1 {
            put(x, y0);
            put(x, y1);
        }
        for y in y0..=y1 {
            put(x0, y);
            put(x1, y);
        }
    }
    Pnm::rgb(size, size, px)
}

/// One greyscale image per prototype, each scaled by its own maximum.
pub fn prototype_images<T: Real>(protos: &PrototypeStack<T>) -> Vec<Pnm> {
    let (h, w, k) = protos.dims();
    let data = protos.maps().data();
    (0..k)
        .map(|c| {
            let vals: Vec<f64> = (0..h * w).map(|p| data[p * k + c].as_f64()).collect();
            let max = vals.iter().copied().fold(0.0, f64::max);
            let scale = if max > 0.0 { 255.0 / max } else { 0.0 };
            Pnm::grey(w, h, vals.iter().map(|v| (v * scale).round() as u8).collect())
        })
        .collect()
}

/// Soft map in `[0, 1]` as greyscale.
pub fn soft_image(values: &[f64], h: usize, w: usize) -> Pnm {
    Pnm::grey(w, h, values.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn palette_is_deterministic_and_distinct() {
        let cols: Vec<_> = (0..8).map(palette).collect();
        assert_eq!(cols, (0..8).map(palette).collect::<Vec<_>>());
        for i in 0..8 {
            for j in i + 1..8 {
                assert_ne!(cols[i], cols[j]);
            }
        }
    }
}
