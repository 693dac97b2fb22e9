//! Patch augmentations: horizontal/vertical flips, Gaussian blur, and
//! center crops, plus the random composition applied during training.
//!
//! All primitives are deterministic; randomness enters only through an
//! explicit RNG in [`augment`] and [`sample_crop_size`].

use rand::Rng;

use crate::raster::Patch;
use crate::rng::SeededRng;

/// Smallest crop size drawn when random cropping is enabled.
pub const CROP_MIN: usize = 3;
/// Blur strength is drawn uniformly from this range.
pub const BLUR_SIGMA_RANGE: (f64, f64) = (0.1, 2.0);
/// Probability of applying each flip.
pub const FLIP_PROB: f64 = 0.5;

/// Which augmentations the training loop applies.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentSpec {
    pub hflip: bool,
    pub vflip: bool,
    pub blur: bool,
    /// Draw a random odd crop size per batch instead of always using
    /// `crop_max`.
    pub crop_random: bool,
    /// Largest (and, when `crop_random` is false, the only) crop size.
    pub crop_max: usize,
}

impl AugmentSpec {
    /// Everything on; the standard training setting.
    pub fn full(crop_max: usize) -> Self {
        Self { hflip: true, vflip: true, blur: true, crop_random: true, crop_max }
    }

    /// Everything off except a fixed center crop.
    pub fn none(crop_max: usize) -> Self {
        Self { hflip: false, vflip: false, blur: false, crop_random: false, crop_max }
    }
}

fn rebuild(src: &Patch, values: Vec<f32>, size: usize) -> Patch {
    let mut out = Patch::from_parts_unchecked(src.channels(), size, values, src.nodata_fraction());
    out.center_class = src.center_class;
    out.source_point = src.source_point.clone();
    out
}

/// Mirror each channel left-right.
pub fn hflip(patch: &Patch) -> Patch {
    let s = patch.size();
    let mut out = vec![0.0f32; patch.values().len()];
    for c in 0..patch.channels() {
        for r in 0..s {
            for col in 0..s {
                out[(c * s + r) * s + col] = patch.value(c, r, s - 1 - col);
            }
        }
    }
    rebuild(patch, out, s)
}

/// Mirror each channel top-bottom.
pub fn vflip(patch: &Patch) -> Patch {
    let s = patch.size();
    let mut out = vec![0.0f32; patch.values().len()];
    for c in 0..patch.channels() {
        for r in 0..s {
            for col in 0..s {
                out[(c * s + r) * s + col] = patch.value(c, s - 1 - r, col);
            }
        }
    }
    rebuild(patch, out, s)
}

/// Discrete Gaussian kernel of radius ceil(3σ), normalized to sum 1.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    assert!(sigma > 0.0, "blur sigma must be positive");
    let radius = (3.0 * sigma).ceil() as i64;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i as f64).powi(2) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    for v in &mut k {
        *v /= sum;
    }
    k
}

fn reflect_idx(i: i64, n: usize) -> usize {
    super::layers::reflect(i, n)
}

/// Separable Gaussian blur with reflected borders, each channel
/// independently. Accumulates in f64.
pub fn gaussian_blur(patch: &Patch, sigma: f64) -> Patch {
    let kernel = gaussian_kernel(sigma);
    let radius = (kernel.len() / 2) as i64;
    let s = patch.size();
    let c_count = patch.channels();
    let plane = s * s;
    let mut horiz = vec![0.0f64; patch.values().len()];
    for c in 0..c_count {
        for r in 0..s {
            for col in 0..s {
                let mut acc = 0.0f64;
                for (ki, &kv) in kernel.iter().enumerate() {
                    let src = reflect_idx(col as i64 + ki as i64 - radius, s);
                    acc += kv * patch.value(c, r, src) as f64;
                }
                horiz[c * plane + r * s + col] = acc;
            }
        }
    }
    let mut out = vec![0.0f32; patch.values().len()];
    for c in 0..c_count {
        for r in 0..s {
            for col in 0..s {
                let mut acc = 0.0f64;
                for (ki, &kv) in kernel.iter().enumerate() {
                    let src = reflect_idx(r as i64 + ki as i64 - radius, s);
                    acc += kv * horiz[c * plane + src * s + col];
                }
                out[c * plane + r * s + col] = acc as f32;
            }
        }
    }
    rebuild(patch, out, s)
}

/// Concentric crop to `size` (odd, ≤ patch size); the center pixel stays
/// the center pixel.
pub fn center_crop(patch: &Patch, size: usize) -> Patch {
    assert!(size % 2 == 1, "crop size must be odd, got {size}");
    assert!(
        size <= patch.size(),
        "crop size {size} exceeds patch size {}",
        patch.size()
    );
    let off = (patch.size() - size) / 2;
    let mut out = vec![0.0f32; patch.channels() * size * size];
    for c in 0..patch.channels() {
        for r in 0..size {
            for col in 0..size {
                out[(c * size + r) * size + col] = patch.value(c, r + off, col + off);
            }
        }
    }
    rebuild(patch, out, size)
}

/// Draw the crop size for one batch: a uniform odd size in
/// [CROP_MIN, crop_max] when `crop_random`, otherwise `crop_max`.
pub fn sample_crop_size(spec: &AugmentSpec, rng: &mut SeededRng) -> usize {
    assert!(
        spec.crop_max % 2 == 1 && spec.crop_max >= CROP_MIN,
        "crop_max must be odd and at least {CROP_MIN}, got {}",
        spec.crop_max
    );
    if spec.crop_random {
        let n_options = (spec.crop_max - CROP_MIN) / 2 + 1;
        CROP_MIN + 2 * rng.gen_range(0..n_options)
    } else {
        spec.crop_max
    }
}

/// Randomly augment one patch: each enabled flip with probability ½, then
/// blur with σ ~ U[0.1, 2.0], then the center crop to `crop_size`.
pub fn augment(patch: &Patch, spec: &AugmentSpec, crop_size: usize, rng: &mut SeededRng) -> Patch {
    let mut out = None;
    if spec.hflip && rng.gen_bool(FLIP_PROB) {
        out = Some(hflip(patch));
    }
    if spec.vflip && rng.gen_bool(FLIP_PROB) {
        let src = out.as_ref().unwrap_or(patch);
        out = Some(vflip(src));
    }
    if spec.blur {
        let sigma = rng.gen_range(BLUR_SIGMA_RANGE.0..BLUR_SIGMA_RANGE.1);
        let src = out.as_ref().unwrap_or(patch);
        out = Some(gaussian_blur(src, sigma));
    }
    let src = out.as_ref().unwrap_or(patch);
    center_crop(src, crop_size)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    fn patch_1ch(size: usize, values: Vec<f32>) -> Patch {
        Patch::from_parts_unchecked(1, size, values, 0.0)
    }

    #[test]
    fn flips_are_involutions_and_move_corners() {
        let p = patch_1ch(3, (0..9).map(|v| v as f32).collect());
        let h = hflip(&p);
        assert_eq!(h.value(0, 0, 0), 2.0);
        assert_eq!(h.value(0, 0, 2), 0.0);
        assert_eq!(h.value(0, 1, 1), 4.0);
        assert_eq!(hflip(&h).values(), p.values());

        let v = vflip(&p);
        assert_eq!(v.value(0, 0, 0), 6.0);
        assert_eq!(v.value(0, 2, 0), 0.0);
        assert_eq!(vflip(&v).values(), p.values());
    }

    #[test]
    fn flips_commute_on_180_rotation() {
        let p = patch_1ch(5, (0..25).map(|v| (v as f32).sin()).collect());
        let a = vflip(&hflip(&p));
        let b = hflip(&vflip(&p));
        assert_eq!(a.values(), b.values());
    }

    #[test]
    fn kernel_radius_and_normalization() {
        let k = gaussian_kernel(1.0);
        assert_eq!(k.len(), 7); // radius ceil(3*1) = 3
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        // symmetric, peaked at center
        assert_eq!(k[0], k[6]);
        assert!(k[3] > k[2]);

        let k = gaussian_kernel(0.1);
        assert_eq!(k.len(), 3); // radius ceil(0.3) = 1
    }

    #[test]
    fn blur_preserves_constants_and_mass_locality() {
        let p = patch_1ch(5, vec![2.5f32; 25]);
        let b = gaussian_blur(&p, 1.3);
        for &v in b.values() {
            assert!((v - 2.5).abs() < 1e-6);
        }

        // an impulse spreads but the blurred center is below the original
        let mut values = vec![0.0f32; 49];
        values[3 * 7 + 3] = 1.0;
        let p = patch_1ch(7, values);
        let b = gaussian_blur(&p, 0.8);
        assert!(b.value(0, 3, 3) < 1.0);
        assert!(b.value(0, 3, 3) > b.value(0, 3, 4));
        assert!(b.value(0, 3, 4) > 0.0);
    }

    #[test]
    fn center_crop_keeps_center() {
        let p = patch_1ch(7, (0..49).map(|v| v as f32).collect());
        let c = center_crop(&p, 3);
        assert_eq!(c.size(), 3);
        assert_eq!(c.center_value(0), p.center_value(0));
        assert_eq!(c.value(0, 0, 0), p.value(0, 2, 2));
        // crop to the same size is the identity
        let same = center_crop(&p, 7);
        assert_eq!(same.values(), p.values());
    }

    #[test]
    #[should_panic(expected = "must be odd")]
    fn center_crop_rejects_even() {
        let p = patch_1ch(5, vec![0.0; 25]);
        center_crop(&p, 4);
    }

    #[test]
    fn crop_size_sampling_covers_odd_range() {
        let spec = AugmentSpec::full(9);
        let mut rng = rng_from_seed(7);
        let mut seen = std::collections::BTreeSet::new();
        for _ in 0..200 {
            let s = sample_crop_size(&spec, &mut rng);
            assert!(s % 2 == 1 && (3..=9).contains(&s));
            seen.insert(s);
        }
        assert_eq!(seen.into_iter().collect::<Vec<_>>(), vec![3, 5, 7, 9]);

        let fixed = AugmentSpec::none(9);
        assert_eq!(sample_crop_size(&fixed, &mut rng), 9);
    }

    #[test]
    fn augment_is_deterministic_for_a_seed() {
        let p = patch_1ch(9, (0..81).map(|v| (v as f32 * 0.37).cos()).collect());
        let spec = AugmentSpec::full(9);
        let a = augment(&p, &spec, 5, &mut rng_from_seed(42));
        let b = augment(&p, &spec, 5, &mut rng_from_seed(42));
        assert_eq!(a.values(), b.values());
        assert_eq!(a.size(), 5);

        // different seeds eventually differ
        let c = augment(&p, &spec, 5, &mut rng_from_seed(43));
        assert!(a.values() != c.values());
    }

    #[test]
    fn augment_with_everything_off_is_a_plain_crop() {
        let p = patch_1ch(9, (0..81).map(|v| v as f32).collect());
        let spec = AugmentSpec::none(9);
        let a = augment(&p, &spec, 9, &mut rng_from_seed(1));
        assert_eq!(a.values(), p.values());
    }
}
