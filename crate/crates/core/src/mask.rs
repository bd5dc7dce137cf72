use crate::error::{Error, Result};
use crate::geometry::BBox;

/// Row-major binary mask with values in {0, 1}.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Mask {
    h: usize,
    w: usize,
    data: Vec<u8>,
}

impl Mask {
    pub fn zeros(h: usize, w: usize) -> Self {
        Self {
            h,
            w,
            data: vec![0; h * w],
        }
    }

    pub fn from_vec(h: usize, w: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != h * w {
            return Err(Error::dim("mask", format!("{h}x{w} needs {} values, got {}", h * w, data.len())));
        }
        if data.iter().any(|&v| v > 1) {
            return Err(Error::Validation("mask values must be 0 or 1".into()));
        }
        Ok(Self { h, w, data })
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.w + x] != 0
    }

    pub fn set(&mut self, y: usize, x: usize, on: bool) {
        self.data[y * self.w + x] = on as u8;
    }

    pub fn count(&self) -> usize {
        self.data.iter().map(|&v| v as usize).sum()
    }

    pub fn intersection(&self, o: &Mask) -> usize {
        self.data.iter().zip(&o.data).filter(|(a, b)| **a & **b != 0).count()
    }

    /// IoU of two same-sized masks; 0 when both are empty.
    pub fn iou(&self, o: &Mask) -> f64 {
        assert_eq!((self.h, self.w), (o.h, o.w), "mask iou size mismatch");
        let inter = self.intersection(o);
        let union = self.count() + o.count() - inter;
        if union == 0 {
            0.0
        } else {
            inter as f64 / union as f64
        }
    }

    /// Tight normalised bounding box of the foreground, `None` when empty.
    pub fn bounding_box(&self) -> Option<BBox> {
        let (mut y0, mut y1, mut x0, mut x1) = (usize::MAX, 0, usize::MAX, 0);
        for y in 0..self.h {
            for x in 0..self.w {
                if self.get(y, x) {
                    y0 = y0.min(y);
                    y1 = y1.max(y + 1);
                    x0 = x0.min(x);
                    x1 = x1.max(x + 1);
                }
            }
        }
        (y0 != usize::MAX).then(|| {
            BBox::new(
                x0 as f64 / self.w as f64,
                y0 as f64 / self.h as f64,
                x1 as f64 / self.w as f64,
                y1 as f64 / self.h as f64,
            )
        })
    }

    pub fn flipped_horizontally(&self) -> Mask {
        let mut out = Mask::zeros(self.h, self.w);
        for y in 0..self.h {
            for x in 0..self.w {
                out.data[y * self.w + (self.w - 1 - x)] = self.data[y * self.w + x];
            }
        }
        out
    }

    /// Foreground fraction of every cell of an `oh×ow` grid laid over the mask.
    pub fn area_fractions(&self, oh: usize, ow: usize) -> Vec<f64> {
        let mut on = vec![0usize; oh * ow];
        let mut total = vec![0usize; oh * ow];
        for y in 0..self.h {
            let cy = y * oh / self.h;
            for x in 0..self.w {
                let c = cy * ow + x * ow / self.w;
                total[c] += 1;
                on[c] += self.data[y * self.w + x] as usize;
            }
        }
        on.iter()
            .zip(&total)
            .map(|(&a, &t)| if t == 0 { 0.0 } else { a as f64 / t as f64 })
            .collect()
    }

    /// Nearest-neighbour resize.
    pub fn upscale(&self, out_h: usize, out_w: usize) -> Mask {
        let mut out = Mask::zeros(out_h, out_w);
        for y in 0..out_h {
            let sy = y * self.h / out_h;
            for x in 0..out_w {
                out.data[y * out_w + x] = self.data[sy * self.w + x * self.w / out_w];
            }
        }
        out
    }
}
