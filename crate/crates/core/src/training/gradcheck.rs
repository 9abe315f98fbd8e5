//! Central finite-difference verification of analytic gradients.

use rand::Rng;

use crate::policy::{Gradients, ParamSet};
use crate::rngutil::rng_from_seed;

use super::loss::TrainError;

/// Compare an analytic gradient against central finite differences on
/// `sample_count` randomly chosen trainable coordinates.
///
/// `loss` is re-evaluated under coordinate perturbations of ±h; the relative
/// error denominator is floored at 1e-8. Returns the maximum relative error
/// over the sampled coordinates.
pub fn finite_diff_check<F>(
    base: &mut ParamSet,
    mut adapters: Option<&mut ParamSet>,
    loss: F,
    analytic: &Gradients,
    h: f64,
    sample_count: usize,
    seed: u64,
) -> Result<f64, TrainError>
where
    F: Fn(&ParamSet, Option<&ParamSet>) -> Result<f64, TrainError>,
{
    // (set, tensor, coord) triples over trainable coordinates only: frozen
    // coordinates have zero analytic gradient by contract while the loss
    // still varies under their perturbation.
    let mut coords: Vec<(usize, usize, usize)> = Vec::new();
    for (ti, t) in base.tensors.iter().enumerate() {
        if t.trainable {
            for i in 0..t.data.len() {
                coords.push((0, ti, i));
            }
        }
    }
    if let Some(ad) = adapters.as_deref() {
        for (ti, t) in ad.tensors.iter().enumerate() {
            if t.trainable {
                for i in 0..t.data.len() {
                    coords.push((1, ti, i));
                }
            }
        }
    }
    if coords.is_empty() {
        return Err(TrainError::BadConfig("no trainable coordinates to check".into()));
    }

    let mut rng = rng_from_seed(seed);
    let picks: Vec<(usize, usize, usize)> = if coords.len() <= sample_count {
        coords
    } else {
        (0..sample_count).map(|_| coords[rng.gen_range(0..coords.len())]).collect()
    };

    let mut max_rel = 0.0f64;
    for (set, ti, i) in picks {
        let read = |base: &ParamSet, adapters: Option<&ParamSet>| -> f64 {
            match set {
                0 => base.tensors[ti].data[i],
                _ => adapters.expect("adapter set present").tensors[ti].data[i],
            }
        };
        let write = |base: &mut ParamSet, adapters: &mut Option<&mut ParamSet>, value: f64| {
            match set {
                0 => base.tensors[ti].data[i] = value,
                _ => adapters.as_deref_mut().expect("adapter set present").tensors[ti].data[i] = value,
            }
        };
        let original = read(base, adapters.as_deref());
        write(base, &mut adapters, original + h);
        let plus = loss(base, adapters.as_deref())?;
        write(base, &mut adapters, original - h);
        let minus = loss(base, adapters.as_deref())?;
        write(base, &mut adapters, original);

        let numeric = (plus - minus) / (2.0 * h);
        let g = match set {
            0 => analytic.base[ti][i],
            _ => analytic.adapters.as_ref().expect("adapter grads")[ti][i],
        };
        let denom = g.abs().max(numeric.abs()).max(1e-8);
        let rel = (g - numeric).abs() / denom;
        if rel > max_rel {
            max_rel = rel;
        }
    }
    Ok(max_rel)
}
