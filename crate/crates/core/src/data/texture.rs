//! Procedural backgrounds: two octaves of value noise plus a linear gradient
//! field and optional stripes, tinted by a base colour.

use rand::Rng;

use crate::image::Image;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TextureStyle {
    pub base: [f64; 3],
    /// Per-channel noise amplitude.
    pub amplitude: [f64; 3],
    /// Value-noise lattice size of the coarse octave.
    pub grid: usize,
    /// Stripe period in pixels, or 0 for none.
    pub stripe_period: f64,
    pub stripe_angle: f64,
    pub stripe_strength: f64,
    pub gradient_strength: f64,
}

impl TextureStyle {
    pub fn earthy(rng: &mut impl Rng) -> Self {
        let base = [
            rng.gen_range(0.35..0.60),
            rng.gen_range(0.30..0.48),
            rng.gen_range(0.20..0.40),
        ];
        Self {
            base,
            amplitude: [0.22, 0.18, 0.16],
            grid: rng.gen_range(3..7),
            stripe_period: 0.0,
            stripe_angle: 0.0,
            stripe_strength: 0.0,
            gradient_strength: rng.gen_range(0.0..0.15),
        }
    }
}

fn value_noise(rng: &mut impl Rng, grid: usize, height: usize, width: usize) -> Vec<f64> {
    let g = grid.max(2);
    let lattice: Vec<f64> = (0..(g + 1) * (g + 1)).map(|_| rng.gen::<f64>()).collect();
    let mut out = vec![0.0; height * width];
    for y in 0..height {
        let fy = y as f64 / height as f64 * g as f64;
        let (iy, ty) = (fy.floor() as usize, fy.fract());
        for x in 0..width {
            let fx = x as f64 / width as f64 * g as f64;
            let (ix, tx) = (fx.floor() as usize, fx.fract());
            let at = |a: usize, b: usize| lattice[a * (g + 1) + b];
            let top = at(iy, ix) * (1.0 - tx) + at(iy, ix + 1) * tx;
            let bot = at(iy + 1, ix) * (1.0 - tx) + at(iy + 1, ix + 1) * tx;
            out[y * width + x] = top * (1.0 - ty) + bot * ty;
        }
    }
    out
}

/// Renders a texture; values are clamped to `[0, 1]` and rounded to `f32`
/// precision so that they survive the dataset file unchanged.
pub fn render(style: &TextureStyle, rng: &mut impl Rng, height: usize, width: usize) -> Image {
    let coarse = value_noise(rng, style.grid, height, width);
    let fine = value_noise(rng, style.grid * 3, height, width);
    let angle = rng.gen_range(0.0..std::f64::consts::TAU);
    let (ca, sa) = (angle.cos(), angle.sin());
    let phase = rng.gen_range(0.0..std::f64::consts::TAU);
    let (cs, ss) = (style.stripe_angle.cos(), style.stripe_angle.sin());
    let plane = height * width;
    let mut data = vec![0.0; 3 * plane];
    for y in 0..height {
        for x in 0..width {
            let i = y * width + x;
            let (u, v) = (x as f64 / width as f64 - 0.5, y as f64 / height as f64 - 0.5);
            let ramp = style.gradient_strength * (u * ca + v * sa);
            let stripe = if style.stripe_period > 0.0 {
                let s = (x as f64 * cs + y as f64 * ss) * std::f64::consts::TAU / style.stripe_period + phase;
                style.stripe_strength * s.sin()
            } else {
                0.0
            };
            let n = 0.7 * coarse[i] + 0.3 * fine[i] - 0.5;
            for c in 0..3 {
                let v = style.base[c] + style.amplitude[c] * n + ramp + stripe;
                data[c * plane + i] = v.clamp(0.0, 1.0) as f32 as f64;
            }
        }
    }
    Image::new(3, height, width, data).expect("3-channel texture")
}
