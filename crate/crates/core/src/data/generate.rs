use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::texture::{self, TextureStyle};
use super::{Dataset, Sample, Split};
use crate::error::{ensure, Result};
use crate::image::{Image, Mask};

pub const IMAGE_SIZE: usize = 32;

/// Colours a flower or stem may carry; the other part is [`GREEN`].
pub const FLOWER_COLORS: [(&str, [f64; 3]); 6] = [
    ("red", [0.90, 0.10, 0.10]),
    ("blue", [0.15, 0.25, 0.95]),
    ("yellow", [0.95, 0.90, 0.10]),
    ("magenta", [0.85, 0.10, 0.85]),
    ("cyan", [0.10, 0.85, 0.90]),
    ("orange", [1.00, 0.50, 0.00]),
];
pub const FLOWER_CLASSES: usize = 2 * FLOWER_COLORS.len();
const GREEN: [f64; 3] = [0.15, 0.65, 0.15];

const OBJECT_COLORS: [[f64; 3]; 12] = [
    [0.95, 0.05, 0.05],
    [0.10, 0.20, 1.00],
    [1.00, 0.95, 0.05],
    [0.95, 0.05, 0.95],
    [0.05, 0.95, 0.95],
    [1.00, 0.55, 0.00],
    [0.10, 0.95, 0.10],
    [1.00, 1.00, 1.00],
    [0.00, 0.00, 0.00],
    [0.50, 0.00, 0.90],
    [1.00, 0.55, 0.75],
    [0.00, 0.50, 0.45],
];

/// Stable per-item seed derivation (splitmix64 finaliser).
pub(crate) fn mix(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xD1B5_4A32_D192_ED69);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn f32_exact(rgb: [f64; 3]) -> [f64; 3] {
    rgb.map(|v| v as f32 as f64)
}

fn paint(img: &mut Image, mask: &Mask, rgb: [f64; 3]) {
    let rgb = f32_exact(rgb);
    for (i, _) in mask.bits.iter().enumerate().filter(|(_, b)| **b) {
        img.set_pixel(i, &rgb);
    }
}

fn raster(h: usize, w: usize, inside: impl Fn(f64, f64) -> bool) -> Mask {
    let mut bits = vec![false; h * w];
    for y in 0..h {
        for x in 0..w {
            bits[y * w + x] = inside(x as f64 + 0.5, y as f64 + 0.5);
        }
    }
    Mask::new(h, w, bits).expect("raster size")
}

/// Flowers: a disc on top of a stem over an earthy texture. Twelve classes,
/// one per (colour, coloured part); the other part is green. The
/// ground-truth mask is the coloured part only.
pub fn gen_flower(seed: u64, n_per_class: usize) -> Result<Dataset> {
    ensure!(n_per_class >= 1, Contract, "n_per_class must be >= 1");
    let (h, w) = (IMAGE_SIZE, IMAGE_SIZE);
    let mut samples = Vec::with_capacity(n_per_class * FLOWER_CLASSES);
    for i in 0..n_per_class * FLOWER_CLASSES {
        let label = i % FLOWER_CLASSES;
        let (color, stem_colored) = (FLOWER_COLORS[label / 2].1, label % 2 == 1);
        let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, i as u64, 1));
        let style = TextureStyle::earthy(&mut rng);
        let mut image = texture::render(&style, &mut rng, h, w);

        let r: f64 = rng.gen_range(3.0..5.0);
        let cx = rng.gen_range(r + 2.0..w as f64 - r - 2.0);
        let cy = rng.gen_range(r + 2.0..15.0);
        let stem_w = rng.gen_range(2..=3) as f64;
        let stem_len = rng.gen_range(8.0..13.0);
        let disc = raster(h, w, |x, y| (x - cx).powi(2) + (y - cy).powi(2) <= r * r);
        let stem_rect = raster(h, w, |x, y| {
            (x - cx).abs() <= stem_w / 2.0 && y >= cy && y <= cy + r + stem_len
        });
        let stem = Mask::new(
            h,
            w,
            stem_rect.bits.iter().zip(&disc.bits).map(|(s, d)| *s && !*d).collect(),
        )?;
        let (flower_rgb, stem_rgb) = if stem_colored { (GREEN, color) } else { (color, GREEN) };
        paint(&mut image, &disc, flower_rgb);
        paint(&mut image, &stem, stem_rgb);
        let fg_mask = Mask::new(h, w, disc.bits.iter().zip(&stem.bits).map(|(a, b)| *a || *b).collect())?;
        let gt_mask = if stem_colored { stem } else { disc };
        samples.push(Sample {
            image,
            label,
            split: Split::for_position(i / FLOWER_CLASSES, n_per_class),
            gt_mask,
            fg_mask,
            meta: format!("gen=flower;seed={seed};idx={i}"),
        });
    }
    Ok(Dataset::assemble("flower", FLOWER_CLASSES, samples, Vec::new()))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FgBgOptions {
    /// Probability that a sample's background is its class's associated
    /// texture rather than a uniformly drawn one.
    pub bg_correlation: f64,
    /// Size of the background texture pool (at least 8).
    pub pool: usize,
    /// Replace textures by i.i.d. per-pixel noise.
    pub noise_background: bool,
}

impl Default for FgBgOptions {
    fn default() -> Self {
        Self {
            bg_correlation: 0.6,
            pool: 8,
            noise_background: false,
        }
    }
}

const SHAPES: usize = 6;

fn shape_mask(kind: usize, cx: f64, cy: f64, s: f64, h: usize, w: usize) -> Mask {
    raster(h, w, |x, y| {
        let (dx, dy) = (x - cx, y - cy);
        match kind {
            0 => dx * dx + dy * dy <= s * s,
            1 => dx.abs() <= 0.85 * s && dy.abs() <= 0.85 * s,
            2 => dy >= -s && dy <= s && dx.abs() <= (dy + s) / 2.0 + 0.5,
            3 => dx.abs() + dy.abs() <= 1.2 * s,
            4 => (dx.abs() <= s / 2.5 && dy.abs() <= s) || (dy.abs() <= s / 2.5 && dx.abs() <= s),
            _ => dx.abs() <= s && dy.abs() <= s && dx.abs() + dy.abs() <= 1.4 * s,
        }
    })
}

/// Places a random shape of random size whose area lies in `[lo, hi]`.
fn place_shape(rng: &mut impl Rng, kind: usize, h: usize, w: usize, lo: usize, hi: usize, s_range: (f64, f64)) -> Mask {
    loop {
        let s = rng.gen_range(s_range.0..s_range.1);
        let cx = rng.gen_range(s + 1.0..w as f64 - s - 1.0);
        let cy = rng.gen_range(s + 1.0..h as f64 - s - 1.0);
        let m = shape_mask(kind, cx, cy, s, h, w);
        let area = m.count();
        if (lo..=hi).contains(&area) {
            return m;
        }
    }
}

fn pool_style(i: usize, pool: usize) -> TextureStyle {
    const BASES: [[f64; 3]; 8] = [
        [0.55, 0.45, 0.35],
        [0.35, 0.45, 0.55],
        [0.50, 0.50, 0.40],
        [0.40, 0.35, 0.45],
        [0.60, 0.55, 0.50],
        [0.30, 0.40, 0.35],
        [0.45, 0.40, 0.30],
        [0.50, 0.45, 0.55],
    ];
    TextureStyle {
        base: BASES[i % 8],
        amplitude: [0.25, 0.25, 0.25],
        grid: 3 + (i % 3) * 2,
        stripe_period: 4.0 + (i % 4) as f64 * 2.0,
        stripe_angle: i as f64 * std::f64::consts::PI / pool as f64,
        stripe_strength: 0.12,
        gradient_strength: 0.1,
    }
}

/// Objects on textured backgrounds. The class is the object's colour and
/// fixes its shape; the ground-truth and foreground masks are both the
/// object. Uses [`FgBgOptions::default`].
pub fn gen_fgbg(seed: u64, n: usize, classes: usize) -> Result<Dataset> {
    gen_fgbg_with(seed, n, classes, FgBgOptions::default())
}

pub fn gen_fgbg_with(seed: u64, n: usize, classes: usize, opts: FgBgOptions) -> Result<Dataset> {
    ensure!(classes >= 2, Contract, "fgbg needs K >= 2, got {classes}");
    ensure!(
        classes <= OBJECT_COLORS.len(),
        Contract,
        "fgbg supports at most {} classes",
        OBJECT_COLORS.len()
    );
    ensure!(n >= classes, Contract, "fgbg needs at least one sample per class");
    ensure!(
        (0.0..=1.0).contains(&opts.bg_correlation),
        Contract,
        "bg_correlation outside [0, 1]"
    );
    let (h, w) = (IMAGE_SIZE, IMAGE_SIZE);
    let pool = opts.pool.max(8).max(classes);
    let backgrounds: Vec<Image> = (0..pool)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, i as u64, 2));
            texture::render(&pool_style(i, pool), &mut rng, h, w)
        })
        .collect();
    let per_class = n.div_ceil(classes);
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let label = i % classes;
        let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, i as u64, 3));
        let bg = if rng.gen_bool(opts.bg_correlation) {
            label % pool
        } else {
            rng.gen_range(0..pool)
        };
        let mut image = if opts.noise_background {
            let data = (0..3 * h * w).map(|_| rng.gen::<f32>() as f64).collect();
            Image::new(3, h, w, data)?
        } else {
            backgrounds[bg].clone()
        };
        let kind = rng.gen_range(0..SHAPES);
        let lo = (0.08 * (h * w) as f64).ceil() as usize;
        let hi = (0.30 * (h * w) as f64).floor() as usize;
        let mask = place_shape(&mut rng, kind, h, w, lo, hi, (5.0, 10.0));
        paint(&mut image, &mask, OBJECT_COLORS[label]);
        samples.push(Sample {
            image,
            label,
            split: Split::for_position(i / classes, per_class),
            gt_mask: mask.clone(),
            fg_mask: mask,
            meta: format!("gen=fgbg;seed={seed};idx={i};bg={bg}"),
        });
    }
    Ok(Dataset::assemble("fgbg", classes, samples, backgrounds))
}

pub(crate) const DUAL_OBJECTS: usize = 4;
pub(crate) const DUAL_SCENES: usize = 4;

fn scene_style(scene: usize, rng: &mut impl Rng) -> TextureStyle {
    const SCENES: [[f64; 3]; DUAL_SCENES] = [
        [0.45, 0.65, 0.90],
        [0.30, 0.60, 0.25],
        [0.85, 0.75, 0.50],
        [0.45, 0.45, 0.48],
    ];
    TextureStyle {
        base: SCENES[scene],
        amplitude: [0.15, 0.15, 0.15],
        grid: rng.gen_range(3..6),
        stripe_period: 0.0,
        stripe_angle: 0.0,
        stripe_strength: 0.0,
        gradient_strength: rng.gen_range(0.0..0.12),
    }
}

/// Objects in scenes with independent uniform object and scene labels.
/// The primary label is the object; the scene label travels in the
/// sample metadata. The scene mask is the complement of the object mask.
pub fn gen_dual_label(seed: u64, n: usize) -> Result<Dataset> {
    const COLORS: [[f64; 3]; DUAL_OBJECTS] = [
        [0.95, 0.05, 0.05],
        [0.02, 0.02, 0.02],
        [0.95, 0.05, 0.95],
        [1.00, 1.00, 1.00],
    ];
    let combos = DUAL_OBJECTS * DUAL_SCENES;
    ensure!(n >= combos, Contract, "dual-label needs n >= {combos}");
    let (h, w) = (IMAGE_SIZE, IMAGE_SIZE);
    let periods = n.div_ceil(combos);
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let object = i % DUAL_OBJECTS;
        let scene = (i / DUAL_OBJECTS) % DUAL_SCENES;
        let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, i as u64, 4));
        let style = scene_style(scene, &mut rng);
        let mut image = texture::render(&style, &mut rng, h, w);
        let lo = (0.08 * (h * w) as f64).ceil() as usize;
        let hi = (0.20 * (h * w) as f64).floor() as usize;
        let mask = place_shape(&mut rng, object, h, w, lo, hi, (5.0, 9.0));
        paint(&mut image, &mask, COLORS[object]);
        samples.push(Sample {
            image,
            label: object,
            split: Split::for_position(i / combos, periods),
            gt_mask: mask.clone(),
            fg_mask: mask,
            meta: format!("gen=dual;seed={seed};idx={i};scene={scene}"),
        });
    }
    Ok(Dataset::assemble("dual", DUAL_OBJECTS, samples, Vec::new()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flower_colours_the_right_part() {
        let ds = gen_flower(3, 2).unwrap();
        for s in &ds.samples {
            let color = f32_exact(FLOWER_COLORS[s.label / 2].1);
            let green = f32_exact(GREEN);
            let plane = s.image.plane();
            let px = |i: usize| [s.image.data[i], s.image.data[plane + i], s.image.data[2 * plane + i]];
            assert!(s.gt_mask.count() > 0);
            assert!(s.gt_mask.is_subset_of(&s.fg_mask));
            for i in 0..plane {
                if s.gt_mask.bits[i] {
                    assert_eq!(px(i), color);
                } else if s.fg_mask.bits[i] {
                    assert_eq!(px(i), green);
                }
            }
        }
        // red flower: gt is exactly the disc (colored part sits on top)
        let red_flower = &ds.samples[0];
        assert_eq!(red_flower.label, 0);
        let top_row = red_flower.gt_mask.bits.iter().position(|b| *b).unwrap();
        let fg_top = red_flower.fg_mask.bits.iter().position(|b| *b).unwrap();
        assert_eq!(top_row, fg_top);
    }

    #[test]
    fn flower_class_counts() {
        let ds = gen_flower(0, 20).unwrap();
        let counts = ds.class_counts();
        assert!(counts[0].iter().all(|c| *c == 14));
        assert!(counts[1].iter().all(|c| *c == 3));
        assert!(counts[2].iter().all(|c| *c == 3));
        assert_eq!(ds.samples.len(), 240);
    }

    #[test]
    fn fgbg_mask_area_bounds() {
        let ds = gen_fgbg(5, 90, 9).unwrap();
        for s in &ds.samples {
            let f = s.gt_mask.fraction();
            assert!((0.08..=0.30).contains(&f), "area fraction {f}");
            assert_eq!(s.gt_mask, s.fg_mask);
        }
        assert!(ds.backgrounds.len() >= 8);
    }

    #[test]
    fn dual_label_marginals_and_partition() {
        let ds = gen_dual_label(1, 64).unwrap();
        let mut obj = [0; DUAL_OBJECTS];
        let mut scene = [0; DUAL_SCENES];
        for s in &ds.samples {
            obj[s.label] += 1;
            scene[s.scene_label().unwrap()] += 1;
            let sm = s.fg_mask.complement();
            assert!(s.fg_mask.bits.iter().zip(&sm.bits).all(|(a, b)| a ^ b));
        }
        assert_eq!(obj, [16; 4]);
        assert_eq!(scene, [16; 4]);
        assert_eq!(gen_dual_label(1, 64).unwrap(), ds);
    }

    #[test]
    fn generators_are_deterministic() {
        assert_eq!(gen_flower(9, 3).unwrap(), gen_flower(9, 3).unwrap());
        assert_eq!(gen_fgbg(9, 27, 9).unwrap(), gen_fgbg(9, 27, 9).unwrap());
        assert_ne!(gen_flower(9, 3).unwrap(), gen_flower(10, 3).unwrap());
    }
}
