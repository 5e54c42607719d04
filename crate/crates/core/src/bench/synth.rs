use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::types::LabeledMatrix;

/// Union-of-subspaces fixture: class `c` draws an orthonormal `dim x
/// subspace_dim` basis, then `per_class` samples `basis * g + noise * e` with
/// standard normal `g` and `e`. Columns are grouped by class.
pub fn make_synthetic(
    classes: usize,
    dim: usize,
    subspace_dim: usize,
    per_class: usize,
    noise: f64,
    seed: u64,
) -> Result<LabeledMatrix> {
    if classes == 0 || dim == 0 || subspace_dim == 0 {
        return Err(Error::InvalidParam(
            "synthetic data needs at least one class, dimension and basis vector".into(),
        ));
    }
    if subspace_dim > dim {
        return Err(Error::InvalidParam(format!(
            "subspace dimension {subspace_dim} exceeds ambient dimension {dim}"
        )));
    }
    if per_class < 2 {
        return Err(Error::InvalidParam("need at least 2 samples per class".into()));
    }
    if !(noise >= 0.0 && noise.is_finite()) {
        return Err(Error::InvalidParam(format!("noise must be nonnegative, got {noise}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut normal = move || -> f64 { StandardNormal.sample(&mut rng) };
    let mut data = DMatrix::zeros(dim, classes * per_class);
    let mut labels = Vec::with_capacity(classes * per_class);
    for c in 0..classes {
        let basis = DMatrix::from_fn(dim, subspace_dim, |_, _| normal()).qr().q();
        for j in 0..per_class {
            let coef = DMatrix::from_fn(subspace_dim, 1, |_, _| normal());
            let mut col = &basis * coef;
            if noise > 0.0 {
                col += DMatrix::from_fn(dim, 1, |_, _| normal()) * noise;
            }
            data.set_column(c * per_class + j, &col.column(0));
            labels.push(c);
        }
    }
    LabeledMatrix::new(data, labels, classes)
}
