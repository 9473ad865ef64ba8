use rand::seq::SliceRandom;
use rand::Rng;

use super::image::Image;
use super::transform::{apply_jitter, JitterFactors};
use crate::error::{CpcdError, Result};

/// The shuffled patch view of one image.
///
/// `patches[i]` is grid tile `permutation[i]`, tiles numbered row-major over
/// the crop. All patches share one set of jitter factors.
#[derive(Clone, Debug, PartialEq)]
pub struct JigsawPatchSet {
    pub parent_id: usize,
    pub grid: usize,
    pub patch_size: usize,
    pub crop_origin: (usize, usize),
    pub permutation: Vec<usize>,
    pub jitter: JitterFactors,
    pub patches: Vec<Image>,
}

impl JigsawPatchSet {
    pub fn patch_count(&self) -> usize {
        self.patches.len()
    }

    /// Undoes the shuffle and tiles the patches back into the crop.
    pub fn retile(&self) -> Result<Image> {
        let side = self.grid * self.patch_size;
        let ch = self.patches[0].channels();
        let mut out = Image::filled(side, side, ch, 0.0);
        for (patch, &tile) in self.patches.iter().zip(&self.permutation) {
            let (tr, tc) = (tile / self.grid, tile % self.grid);
            out.paste(patch, tr * self.patch_size, tc * self.patch_size)?;
        }
        Ok(out)
    }
}

/// Deterministic core of [`make_jigsaw`] with every random choice given.
pub fn make_jigsaw_with(
    image: &Image,
    parent_id: usize,
    grid: usize,
    patch_size: usize,
    crop_origin: (usize, usize),
    permutation: Vec<usize>,
    jitter: JitterFactors,
) -> Result<JigsawPatchSet> {
    let count = grid * grid;
    let mut seen = vec![false; count];
    if permutation.len() != count || permutation.iter().any(|&p| p >= count || std::mem::replace(&mut seen[p], true)) {
        return Err(CpcdError::input(format!(
            "permutation {permutation:?} is not a bijection on 0..{count}"
        )));
    }
    let side = grid * patch_size;
    let crop = image.crop(crop_origin.0, crop_origin.1, side, side)?;
    let patches = permutation
        .iter()
        .map(|&tile| {
            let (tr, tc) = (tile / grid, tile % grid);
            crop.crop(tr * patch_size, tc * patch_size, patch_size, patch_size)
                .map(|p| apply_jitter(&p, &jitter))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(JigsawPatchSet {
        parent_id,
        grid,
        patch_size,
        crop_origin,
        permutation,
        jitter,
        patches,
    })
}

/// Random crop of `grid × patch_size` square, cut into `grid²` tiles, shuffled,
/// and colour-jittered with one shared draw of factors.
pub fn make_jigsaw<R: Rng + ?Sized>(
    image: &Image,
    parent_id: usize,
    grid: usize,
    patch_size: usize,
    jitter_strength: f64,
    rng: &mut R,
) -> Result<JigsawPatchSet> {
    let side = grid * patch_size;
    if grid == 0 || patch_size == 0 || side > image.height() || side > image.width() {
        return Err(CpcdError::input(format!(
            "{grid}x{grid} patches of {patch_size} do not fit a {}x{} image",
            image.height(),
            image.width()
        )));
    }
    let r0 = rng.random_range(0..=image.height() - side);
    let c0 = rng.random_range(0..=image.width() - side);
    let mut permutation: Vec<usize> = (0..grid * grid).collect();
    permutation.shuffle(rng);
    let jitter = JitterFactors::sample(jitter_strength, rng);
    make_jigsaw_with(image, parent_id, grid, patch_size, (r0, c0), permutation, jitter)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn textured(n: usize) -> Image {
        let px = (0..n * n * 3).map(|i| ((i * 37) % 101) as f64 / 100.0).collect();
        Image::new(n, n, 3, px).unwrap()
    }

    #[test]
    fn four_patches_of_sixty_four() {
        let img = textured(128);
        let set = make_jigsaw(&img, 0, 2, 64, 0.4, &mut stream(1, &[1])).unwrap();
        assert_eq!(set.patch_count(), 4);
        assert!(set.patches.iter().all(|p| p.shape() == [64, 64, 3]));
    }

    #[test]
    fn identity_permutation_retiles_to_crop() {
        let img = textured(20);
        let set = make_jigsaw_with(&img, 3, 3, 6, (1, 2), (0..9).collect(), JitterFactors::IDENTITY)
            .unwrap();
        assert_eq!(set.retile().unwrap(), img.crop(1, 2, 18, 18).unwrap());
    }

    #[test]
    fn shuffled_sets_retile_to_crop() {
        let img = textured(32);
        for seed in 0..100 {
            let mut rng = stream(seed, &[9]);
            let set = make_jigsaw(&img, 0, 2, 12, 0.0, &mut rng).unwrap();
            let (r0, c0) = set.crop_origin;
            assert_eq!(set.retile().unwrap(), img.crop(r0, c0, 24, 24).unwrap());
        }
    }

    #[test]
    fn permutation_is_bijection_for_many_seeds() {
        let img = textured(16);
        for seed in 0..100 {
            let set = make_jigsaw(&img, 0, 3, 5, 0.4, &mut stream(seed, &[2])).unwrap();
            let mut p = set.permutation.clone();
            p.sort_unstable();
            assert_eq!(p, (0..9).collect::<Vec<_>>());
        }
    }

    #[test]
    fn oversize_request_is_rejected() {
        let img = textured(16);
        assert!(make_jigsaw(&img, 0, 2, 9, 0.4, &mut stream(0, &[0])).is_err());
        assert!(make_jigsaw_with(&img, 0, 2, 4, (0, 0), vec![0, 1, 1, 2], JitterFactors::IDENTITY).is_err());
    }

    #[test]
    fn patches_share_jitter() {
        let img = Image::filled(8, 8, 3, 0.5);
        let set = make_jigsaw(&img, 0, 2, 4, 0.4, &mut stream(5, &[5])).unwrap();
        assert!(set.patches.windows(2).all(|w| w[0] == w[1]));
        assert!(set.patches.iter().all(Image::in_unit_range));
    }
}
