//! Synthetic embedding datasets with planted signal.
//!
//! Background tiles are i.i.d. standard normal per coordinate. In positive
//! slides a chosen fraction of tiles is shifted by a fixed effect size along
//! one seeded unit direction, which makes downstream separability tunable
//! from chance (effect 0) to trivial (large effects).

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::seed::{self, stream};

use super::{EmbeddingMatrix, EmbeddingSet, EncoderProfile};

/// Build a balanced labeled set: `n_slides` slides (even index negative,
/// odd positive), each with a tile count drawn from `tiles_range`
/// (inclusive). Deterministic in `seed`.
pub fn synth_embedding_dataset(
    n_slides: usize,
    tiles_range: (usize, usize),
    dim: usize,
    signal_frac: f64,
    effect_size: f64,
    seed: u64,
) -> Result<EmbeddingSet> {
    if n_slides == 0 || dim == 0 {
        return Err(Error::InvalidInput("need at least one slide and one dimension".into()));
    }
    let (lo, hi) = tiles_range;
    if lo == 0 || hi < lo {
        return Err(Error::InvalidInput(format!("bad tiles_range ({lo}, {hi})")));
    }
    if !(0.0..=1.0).contains(&signal_frac) {
        return Err(Error::InvalidInput(format!("signal_frac {signal_frac} outside [0,1]")));
    }
    if !(effect_size >= 0.0) {
        return Err(Error::InvalidInput(format!("effect_size {effect_size} must be >= 0")));
    }

    // One fixed unit direction for the whole dataset.
    let mut dir_rng = seed::rng(seed::mix(seed, &[stream::DIRECTION]));
    let mut direction: Vec<f64> = (0..dim).map(|_| dir_rng.sample(StandardNormal)).collect();
    let norm = direction.iter().map(|v| v * v).sum::<f64>().sqrt();
    for v in &mut direction {
        *v /= norm;
    }

    let mut set = EmbeddingSet::new(EncoderProfile::new("synthetic", dim as u32), "synthetic");
    let width = n_slides.to_string().len().max(4);
    for i in 0..n_slides {
        let label = (i % 2) as u8;
        let slide_id = format!("s{i:0width$}");
        let mut rng = seed::rng(seed::mix(seed, &[stream::SLIDE, i as u64]));
        let n_tiles = rng.random_range(lo..=hi);

        let mut values = Vec::with_capacity(n_tiles * dim);
        for _ in 0..n_tiles * dim {
            values.push(rng.sample::<f64, _>(StandardNormal) as f32);
        }

        if label == 1 && effect_size > 0.0 {
            let n_signal = ((signal_frac * n_tiles as f64).round() as usize).min(n_tiles);
            let mut order: Vec<usize> = (0..n_tiles).collect();
            order.shuffle(&mut rng);
            for &k in order.iter().take(n_signal) {
                for j in 0..dim {
                    let shifted = f64::from(values[k * dim + j]) + effect_size * direction[j];
                    values[k * dim + j] = shifted as f32;
                }
            }
        }

        let coords = (0..n_tiles)
            .map(|k| ((k % 64) as u32 * 224, (k / 64) as u32 * 224))
            .collect();
        let matrix = EmbeddingMatrix::new(slide_id, dim as u32, coords, values)?;
        set.insert(matrix, Some(label))?;
    }
    Ok(set)
}
