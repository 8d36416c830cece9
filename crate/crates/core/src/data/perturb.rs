use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::generate::mix;
use super::texture::{self, TextureStyle};
use super::Sample;
use crate::error::{ensure, Result};
use crate::image::{Image, Mask};

/// Sets exactly `round(fraction * H * W)` uniformly chosen pixel positions
/// to `fill` in every channel.
pub fn perturb_remove_pixels(image: &Image, fraction: f64, fill: &[f64], seed: u64) -> Result<Image> {
    ensure!(
        (0.0..=1.0).contains(&fraction),
        Contract,
        "fraction {fraction} outside [0, 1]"
    );
    ensure!(
        fill.len() == image.channels,
        Dimension,
        "fill has {} channels",
        fill.len()
    );
    let plane = image.plane();
    let count = (fraction * plane as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = image.clone();
    for pos in index::sample(&mut rng, plane, count) {
        out.set_pixel(pos, fill);
    }
    Ok(out)
}

fn replace_where(image: &Image, mask: &Mask, keep_inside: bool, other: &Image) -> Image {
    let plane = image.plane();
    let mut out = image.clone();
    for c in 0..image.channels {
        for (i, inside) in mask.bits.iter().enumerate() {
            if *inside != keep_inside {
                out.data[c * plane + i] = other.data[c * plane + i];
            }
        }
    }
    out
}

/// Pixels outside the foreground mask come from `background`; label and
/// masks are unchanged.
pub fn swap_background(sample: &Sample, background: &Image) -> Result<Sample> {
    ensure!(
        background.shape() == sample.image.shape(),
        Dimension,
        "background {:?} vs image {:?}",
        background.shape(),
        sample.image.shape()
    );
    let mut out = sample.clone();
    out.image = replace_where(&sample.image, &sample.fg_mask, true, background);
    Ok(out)
}

/// Foreground kept, everything else set to `fill`.
pub fn foreground_only(sample: &Sample, fill: &[f64]) -> Image {
    let [_, h, w] = sample.image.shape();
    replace_where(&sample.image, &sample.fg_mask, true, &Image::constant(h, w, fill))
}

/// Background kept, the foreground set to `fill`.
pub fn background_only(sample: &Sample, fill: &[f64]) -> Image {
    let [_, h, w] = sample.image.shape();
    replace_where(&sample.image, &sample.fg_mask, false, &Image::constant(h, w, fill))
}

/// A new earthy texture, deterministic in `seed`.
pub fn fresh_background(seed: u64, height: usize, width: usize) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, 0, 5));
    let style = TextureStyle::earthy(&mut rng);
    texture::render(&style, &mut rng, height, width)
}
