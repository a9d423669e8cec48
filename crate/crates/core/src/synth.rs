//! Deterministic synthetic scenes and seeded train/test splits.

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::raster::{HsiCube, LabelMap};
use crate::scalar::Real;

/// Parameters of a Voronoi-mosaic scene.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub height: usize,
    pub width: usize,
    pub num_classes: u32,
    pub bands: usize,
    /// Standard deviation of the additive Gaussian noise, in reflectance units.
    pub noise_sigma: f64,
    pub seed: u64,
    /// Number of Voronoi cells; must be at least `num_classes`.
    pub cells: usize,
}

impl SyntheticSpec {
    /// Scene with four Voronoi cells per class.
    pub fn new(
        height: usize,
        width: usize,
        num_classes: u32,
        bands: usize,
        noise_sigma: f64,
        seed: u64,
    ) -> Self {
        Self {
            height,
            width,
            num_classes,
            bands,
            noise_sigma,
            seed,
            cells: 4 * num_classes as usize,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 || self.bands == 0 {
            return Err(Error::Dimension("synthetic scene must be non-empty".into()));
        }
        if self.num_classes == 0 {
            return Err(Error::param("num_classes", "must be at least 1"));
        }
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return Err(Error::param("noise_sigma", "must be finite and >= 0"));
        }
        if self.cells < self.num_classes as usize {
            return Err(Error::param(
                "cells",
                format!(
                    "{} Voronoi cells cannot hold {} classes",
                    self.cells, self.num_classes
                ),
            ));
        }
        if self.cells > self.height * self.width {
            return Err(Error::param("cells", "more cells than pixels"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticScene<T> {
    pub cube: HsiCube<T>,
    pub labels: LabelMap,
    /// Noise-free spectrum of each class, indexed by `class - 1`.
    pub signatures: Vec<Vec<T>>,
}

/// Piecewise-constant Voronoi mosaic with one random signature per class plus i.i.d. noise.
pub fn generate_synthetic<T: Real>(spec: &SyntheticSpec) -> Result<SyntheticScene<T>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (h, w) = (spec.height, spec.width);
    let n = h * w;
    let t = spec.num_classes as usize;

    // Distinct pixel sites guarantee every cell, hence every class, is non-empty.
    let sites: Vec<(usize, usize)> = index::sample(&mut rng, n, spec.cells)
        .into_iter()
        .map(|p| (p / w, p % w))
        .collect();
    let cell_class: Vec<u32> = (0..spec.cells)
        .map(|c| {
            if c < t {
                c as u32 + 1
            } else {
                rng.random_range(1..=spec.num_classes)
            }
        })
        .collect();
    let signatures: Vec<Vec<T>> = (0..t)
        .map(|_| {
            (0..spec.bands)
                .map(|_| T::lit(rng.random::<f64>()))
                .collect()
        })
        .collect();

    let mut labels = Vec::with_capacity(n);
    for r in 0..h {
        for c in 0..w {
            let mut best = 0;
            let mut best_d = usize::MAX;
            for (i, &(sr, sc)) in sites.iter().enumerate() {
                let d = sr.abs_diff(r).pow(2) + sc.abs_diff(c).pow(2);
                if d < best_d {
                    best_d = d;
                    best = i;
                }
            }
            labels.push(cell_class[best]);
        }
    }

    let mut data = vec![T::zero(); n * spec.bands];
    for b in 0..spec.bands {
        for p in 0..n {
            data[b * n + p] = signatures[labels[p] as usize - 1][b];
        }
    }
    if spec.noise_sigma > 0.0 {
        let normal = Normal::new(0.0, spec.noise_sigma).expect("sigma validated");
        for v in data.iter_mut() {
            *v += T::lit(normal.sample(&mut rng));
        }
    }

    Ok(SyntheticScene {
        cube: HsiCube::new(h, w, spec.bands, data)?,
        labels: LabelMap::new(h, w, spec.num_classes, labels)?,
        signatures,
    })
}

/// Draws exactly `per_class` training pixels per class; every other labeled pixel is test.
pub fn sample_training(
    labels: &LabelMap,
    per_class: usize,
    seed: u64,
) -> Result<(LabelMap, LabelMap)> {
    let t = labels.num_classes() as usize;
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); t];
    for (i, &l) in labels.labels().iter().enumerate() {
        if l > 0 {
            by_class[l as usize - 1].push(i);
        }
    }
    for (c, members) in by_class.iter().enumerate() {
        if members.len() < per_class {
            return Err(Error::TooFewSamples {
                class: c as u32 + 1,
                found: members.len(),
                needed: per_class,
            });
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = vec![0u32; labels.pixels()];
    let mut test = labels.labels().to_vec();
    for (c, members) in by_class.iter_mut().enumerate() {
        members.shuffle(&mut rng);
        for &i in &members[..per_class] {
            train[i] = c as u32 + 1;
            test[i] = 0;
        }
    }
    let (h, w) = (labels.height(), labels.width());
    Ok((
        LabelMap::new(h, w, labels.num_classes(), train)?,
        LabelMap::new(h, w, labels.num_classes(), test)?,
    ))
}
