//! Geometric helpers on single `[C, H, W]` images.

use cjade_nn::Tensor;

fn chw(img: &Tensor) -> (usize, usize, usize) {
    match *img.shape() {
        [c, h, w] => (c, h, w),
        ref s => panic!("expected a [C, H, W] image, got {s:?}"),
    }
}

/// Bilinear resize with half-pixel centres (`align_corners = false`).
pub fn resize_bilinear(img: &Tensor, out_h: usize, out_w: usize) -> Tensor {
    let (c, h, w) = chw(img);
    if (h, w) == (out_h, out_w) {
        return img.clone();
    }
    let src = img.data();
    let sy = h as f64 / out_h as f64;
    let sx = w as f64 / out_w as f64;
    let axis = |o: usize, scale: f64, n: usize| -> (usize, usize, f64) {
        let p = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
        let i0 = (p.floor() as usize).min(n - 1);
        let i1 = (i0 + 1).min(n - 1);
        (i0, i1, p - i0 as f64)
    };
    let xs: Vec<_> = (0..out_w).map(|x| axis(x, sx, w)).collect();
    let mut out = Vec::with_capacity(c * out_h * out_w);
    for ch in 0..c {
        let plane = &src[ch * h * w..(ch + 1) * h * w];
        for y in 0..out_h {
            let (y0, y1, fy) = axis(y, sy, h);
            for &(x0, x1, fx) in &xs {
                let top = plane[y0 * w + x0] as f64 * (1.0 - fx) + plane[y0 * w + x1] as f64 * fx;
                let bot = plane[y1 * w + x0] as f64 * (1.0 - fx) + plane[y1 * w + x1] as f64 * fx;
                out.push((top * (1.0 - fy) + bot * fy) as f32);
            }
        }
    }
    Tensor::new(vec![c, out_h, out_w], out).expect("resize shape")
}

/// Centres `img` on a `size x size` canvas: larger inputs are cropped,
/// smaller ones padded by replicating their border pixels.
pub fn fit_center(img: &Tensor, size: usize) -> Tensor {
    let (c, h, w) = chw(img);
    if (h, w) == (size, size) {
        return img.clone();
    }
    let off_y = (size as isize - h as isize) / 2;
    let off_x = (size as isize - w as isize) / 2;
    let src = img.data();
    Tensor::from_fn(&[c, size, size], |i| {
        let ch = i / (size * size);
        let y = (i / size) % size;
        let x = i % size;
        let sy = (y as isize - off_y).clamp(0, h as isize - 1) as usize;
        let sx = (x as isize - off_x).clamp(0, w as isize - 1) as usize;
        src[(ch * h + sy) * w + sx]
    })
}

/// Rectangular crop; panics if the box leaves the image.
pub fn crop(img: &Tensor, x: usize, y: usize, width: usize, height: usize) -> Tensor {
    let (c, h, w) = chw(img);
    assert!(x + width <= w && y + height <= h && width > 0 && height > 0);
    let src = img.data();
    let mut out = Vec::with_capacity(c * width * height);
    for ch in 0..c {
        for row in y..y + height {
            let start = (ch * h + row) * w + x;
            out.extend_from_slice(&src[start..start + width]);
        }
    }
    Tensor::new(vec![c, height, width], out).expect("crop shape")
}

pub fn flip_horizontal(img: &Tensor) -> Tensor {
    let (c, h, w) = chw(img);
    let src = img.data();
    Tensor::from_fn(&[c, h, w], |i| {
        let x = i % w;
        src[i - x + (w - 1 - x)]
    })
}

/// Reflects an out-of-range coordinate back into `[0, n - 1]`.
fn reflect(mut p: f64, n: usize) -> f64 {
    let max = (n - 1) as f64;
    if max == 0.0 {
        return 0.0;
    }
    let period = 2.0 * max;
    p = p.rem_euclid(period);
    if p > max {
        period - p
    } else {
        p
    }
}

/// Rotation about the image centre with bilinear sampling; samples falling
/// outside are mirrored back in.
pub fn rotate_reflect(img: &Tensor, degrees: f64) -> Tensor {
    let (c, h, w) = chw(img);
    let (sin, cos) = degrees.to_radians().sin_cos();
    let cy = (h as f64 - 1.0) / 2.0;
    let cx = (w as f64 - 1.0) / 2.0;
    let src = img.data();
    let mut out = vec![0.0f32; c * h * w];
    for y in 0..h {
        for x in 0..w {
            let dy = y as f64 - cy;
            let dx = x as f64 - cx;
            // inverse map: output pixel -> source coordinate
            let sx = reflect(cos * dx + sin * dy + cx, w);
            let sy = reflect(-sin * dx + cos * dy + cy, h);
            let x0 = sx.floor() as usize;
            let y0 = sy.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let y1 = (y0 + 1).min(h - 1);
            let fx = sx - x0 as f64;
            let fy = sy - y0 as f64;
            for ch in 0..c {
                let p = &src[ch * h * w..(ch + 1) * h * w];
                let top = p[y0 * w + x0] as f64 * (1.0 - fx) + p[y0 * w + x1] as f64 * fx;
                let bot = p[y1 * w + x0] as f64 * (1.0 - fx) + p[y1 * w + x1] as f64 * fx;
                out[(ch * h + y) * w + x] = (top * (1.0 - fy) + bot * fy) as f32;
            }
        }
    }
    Tensor::new(vec![c, h, w], out).expect("rotate shape")
}
