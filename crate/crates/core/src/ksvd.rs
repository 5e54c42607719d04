//! K-SVD dictionary learning and the per-class dictionary initializer.

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coding::{omp_code_matrix, OmpParams};
use crate::error::{Error, Result};
use crate::linalg::thin_svd;
use crate::types::{CoefficientMatrix, Dictionary, LabeledMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsvdParams {
    /// Number of atoms to learn.
    pub atoms: usize,
    /// OMP sparsity used in the coding step.
    pub sparsity: usize,
    pub iterations: usize,
    pub seed: u64,
}

impl KsvdParams {
    /// Initializer defaults for `atoms_per_class` atoms per class.
    pub fn initializer(atoms_per_class: usize, seed: u64) -> Self {
        Self {
            atoms: atoms_per_class,
            sparsity: atoms_per_class.clamp(1, 5),
            iterations: 10,
            seed,
        }
    }
}

#[derive(Debug, Clone)]
pub struct KsvdOutput {
    /// Unit-norm atoms, `n x K`.
    pub atoms: DMatrix<f64>,
    pub coefficients: CoefficientMatrix,
    /// `||Y - DX||²` after each iteration.
    pub objective_trace: Vec<f64>,
}

/// Seeded K-SVD: atoms start as `p.atoms` distinct normalized data columns.
pub fn ksvd_train(y: &DMatrix<f64>, p: &KsvdParams) -> Result<KsvdOutput> {
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    ksvd_train_with_rng(y, p, &mut rng)
}

fn ksvd_train_with_rng(y: &DMatrix<f64>, p: &KsvdParams, rng: &mut ChaCha8Rng) -> Result<KsvdOutput> {
    check_params(y, p)?;
    let nonzero: Vec<usize> = (0..y.ncols())
        .filter(|&i| y.column(i).norm() > 0.0)
        .collect();
    if nonzero.len() < p.atoms {
        return Err(Error::Data(format!(
            "{} nonzero samples cannot seed {} atoms",
            nonzero.len(),
            p.atoms
        )));
    }
    let picked: Vec<usize> = sample(rng, nonzero.len(), p.atoms)
        .into_iter()
        .map(|i| nonzero[i])
        .collect();
    let mut init = y.select_columns(&picked);
    for mut c in init.column_iter_mut() {
        let n = c.norm();
        c /= n;
    }
    ksvd_train_from(y, init, p)
}

fn check_params(y: &DMatrix<f64>, p: &KsvdParams) -> Result<()> {
    if p.atoms == 0 || p.iterations == 0 {
        return Err(Error::InvalidParam(
            "K-SVD needs at least one atom and one iteration".into(),
        ));
    }
    if p.atoms > y.ncols() {
        return Err(Error::InvalidParam(format!(
            "K-SVD asked for {} atoms from {} samples",
            p.atoms,
            y.ncols()
        )));
    }
    if p.sparsity == 0 || p.sparsity > p.atoms {
        return Err(Error::InvalidParam(format!(
            "K-SVD sparsity must be in 1..={}, got {}",
            p.atoms, p.sparsity
        )));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("K-SVD input has non-finite entries".into()));
    }
    Ok(())
}

/// K-SVD from explicit unit-norm initial atoms.
///
/// Each iteration codes every column by OMP (a column keeps its previous code
/// if that code already fits better) and then sweeps the atoms in order,
/// replacing each atom and its coefficient row by the leading singular pair of
/// the restricted residual.
pub fn ksvd_train_from(
    y: &DMatrix<f64>,
    init_atoms: DMatrix<f64>,
    p: &KsvdParams,
) -> Result<KsvdOutput> {
    let p = KsvdParams {
        atoms: init_atoms.ncols(),
        ..*p
    };
    check_params(y, &p)?;
    if init_atoms.nrows() != y.nrows() {
        return Err(Error::dims("D", init_atoms.shape(), "Y", y.shape()));
    }
    let labels = vec![0; p.atoms];
    let mut atoms = init_atoms;
    let mut x: Option<DMatrix<f64>> = None;
    let mut trace = Vec::with_capacity(p.iterations);
    let omp = OmpParams::with_sparsity(p.sparsity);

    for _ in 0..p.iterations {
        let dict = Dictionary::new(atoms.clone(), labels.clone())?;
        let mut coded = omp_code_matrix(&dict, y, &omp)?.into_inner();
        if let Some(prev) = &x {
            keep_better_columns(y, &atoms, prev, &mut coded);
        }
        for k in 0..p.atoms {
            update_atom(y, &mut atoms, &mut coded, k);
        }
        trace.push((y - &atoms * &coded).norm_squared());
        x = Some(coded);
    }

    Ok(KsvdOutput {
        atoms,
        coefficients: CoefficientMatrix::new(x.expect("at least one iteration"))?,
        objective_trace: trace,
    })
}

fn keep_better_columns(y: &DMatrix<f64>, atoms: &DMatrix<f64>, prev: &DMatrix<f64>, new: &mut DMatrix<f64>) {
    let r_prev = y - atoms * prev;
    let r_new = y - atoms * &*new;
    for i in 0..y.ncols() {
        if r_prev.column(i).norm_squared() < r_new.column(i).norm_squared() {
            new.set_column(i, &prev.column(i));
        }
    }
}

/// Flips the sign of `v` so its largest-magnitude entry is positive. Returns
/// whether a flip happened.
pub(crate) fn canonical_sign(v: &mut DVector<f64>) -> bool {
    let lead = v.iter().copied().fold(0.0f64, |a, b| if b.abs() > a.abs() { b } else { a });
    if lead < 0.0 {
        v.neg_mut();
        true
    } else {
        false
    }
}

/// Rank-1 update of atom `k` and its coefficient row.
pub fn update_atom(y: &DMatrix<f64>, atoms: &mut DMatrix<f64>, x: &mut DMatrix<f64>, k: usize) {
    let users: Vec<usize> = (0..x.ncols()).filter(|&i| x[(k, i)] != 0.0).collect();
    if users.is_empty() {
        replace_unused_atom(y, atoms, x, k);
        return;
    }
    let dk = atoms.column(k).into_owned();
    let mut e = DMatrix::zeros(y.nrows(), users.len());
    for (j, &i) in users.iter().enumerate() {
        let xi = x.column(i);
        let col = y.column(i) - &*atoms * xi + &dk * xi[k];
        e.set_column(j, &col);
    }
    let svd = thin_svd(&e).expect("SVD of a finite residual");
    let sigma = svd.s[0];
    let mut atom = svd.u.column(0).into_owned();
    let mut row = svd.v.column(0) * sigma;
    if canonical_sign(&mut atom) {
        row.neg_mut();
    }
    atoms.set_column(k, &atom);
    for (j, &i) in users.iter().enumerate() {
        x[(k, i)] = row[j];
    }
}

fn replace_unused_atom(y: &DMatrix<f64>, atoms: &mut DMatrix<f64>, x: &DMatrix<f64>, k: usize) {
    let residual = y - &*atoms * x;
    let worst = residual
        .column_iter()
        .map(|c| c.norm_squared())
        .enumerate()
        .fold((0, -1.0), |b, (i, r)| if r > b.1 { (i, r) } else { b });
    let col = y.column(worst.0);
    let n = col.norm();
    if n > 0.0 {
        atoms.set_column(k, &(col / n));
    } else {
        log::warn!("atom {k} unused and no nonzero column to replace it");
    }
}

/// Trains `K / C` atoms per class with K-SVD and concatenates the
/// sub-dictionaries in class order.
///
/// `p.atoms` is ignored; `p.sparsity` is capped at the per-class atom count.
/// Class `c` draws its initial atoms from stream `c` of the seeded generator.
pub fn init_dictionary_per_class(y: &LabeledMatrix, k: usize, p: &KsvdParams) -> Result<Dictionary> {
    let c = y.class_count();
    if c == 0 || k == 0 {
        return Err(Error::InvalidParam("need at least one class and one atom".into()));
    }
    if k % c != 0 {
        return Err(Error::InvalidParam(format!(
            "{k} atoms cannot be split evenly over {c} classes; choose a multiple of {c}"
        )));
    }
    let per_class = k / c;
    let sizes = y.class_sizes();
    if let Some((cls, &n)) = sizes.iter().enumerate().find(|(_, &n)| n < per_class) {
        return Err(Error::InvalidParam(format!(
            "class {cls} has {n} samples, fewer than the {per_class} atoms requested per class"
        )));
    }
    let columns = y.class_columns();
    let params = KsvdParams {
        atoms: per_class,
        sparsity: p.sparsity.clamp(1, per_class),
        ..*p
    };
    let subs: Vec<DMatrix<f64>> = columns
        .par_iter()
        .enumerate()
        .map(|(cls, cols)| {
            let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
            rng.set_stream(cls as u64);
            ksvd_train_with_rng(&y.data().select_columns(cols), &params, &mut rng).map(|o| o.atoms)
        })
        .collect::<Result<_>>()?;
    let mut atoms = DMatrix::zeros(y.dim(), k);
    for (cls, sub) in subs.iter().enumerate() {
        atoms.columns_mut(cls * per_class, per_class).copy_from(sub);
    }
    let labels = (0..c).flat_map(|cls| std::iter::repeat_n(cls, per_class)).collect();
    Dictionary::new(atoms, labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
    }

    // Leading singular pair by power iteration on EᵀE.
    fn power_oracle(e: &DMatrix<f64>) -> (DVector<f64>, DVector<f64>) {
        let g = e.transpose() * e;
        let mut v = DVector::from_element(g.nrows(), 1.0);
        for _ in 0..5000 {
            v = &g * &v;
            let n = v.norm();
            v /= n;
        }
        let sigma = (e * &v).norm();
        let mut u = (e * &v) / sigma;
        if canonical_sign(&mut u) {
            v.neg_mut();
        }
        (u, v * sigma)
    }

    #[test]
    fn orthonormal_data_is_a_fixed_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let q = random(&mut rng, 5, 4).qr().q();
        let p = KsvdParams { atoms: 4, sparsity: 1, iterations: 1, seed: 0 };
        let out = ksvd_train_from(&q, q.clone(), &p).unwrap();
        for k in 0..4 {
            let a = out.atoms.column(k);
            let s = a.dot(&q.column(k)).signum();
            assert!((a - q.column(k) * s).norm() < 1e-10);
            for i in 0..4 {
                let expect = if i == k { s } else { 0.0 };
                assert!((out.coefficients.data()[(k, i)] - expect).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn rank_one_data() {
        let c = DVector::from_vec(vec![3.0, -4.0, 1.0]);
        let y = DMatrix::from_columns(&[c.clone(), c.clone(), c.clone(), c.clone()]);
        let p = KsvdParams { atoms: 1, sparsity: 1, iterations: 3, seed: 1 };
        let out = ksvd_train(&y, &p).unwrap();
        let unit = &c / c.norm();
        // largest-magnitude entry (-4) made positive
        assert!((out.atoms.column(0) + &unit).norm() < 1e-12);
        for v in out.coefficients.data().iter() {
            assert!((v + c.norm()).abs() < 1e-10);
        }
    }

    #[test]
    fn descent_and_atom_update_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let y = random(&mut rng, 6, 20);
        let p = KsvdParams { atoms: 4, sparsity: 2, iterations: 10, seed: 3 };
        let out = ksvd_train(&y, &p).unwrap();
        let t = &out.objective_trace;
        assert_eq!(t.len(), 10);
        assert!(t[9] <= t[0]);
        for w in t.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-8));
        }
        for c in out.atoms.column_iter() {
            assert!((c.norm() - 1.0).abs() < 1e-10);
        }

        // One atom sweep checked against the power-iteration oracle.
        let mut atoms = out.atoms.clone();
        let dict = Dictionary::new(atoms.clone(), vec![0; 4]).unwrap();
        let mut x = omp_code_matrix(&dict, &y, &OmpParams::with_sparsity(2)).unwrap().into_inner();
        for k in 0..4 {
            let users: Vec<usize> = (0..20).filter(|&i| x[(k, i)] != 0.0).collect();
            if users.is_empty() {
                update_atom(&y, &mut atoms, &mut x, k);
                continue;
            }
            let mut without = atoms.clone();
            without.column_mut(k).fill(0.0);
            let e = y.select_columns(&users) - &without * x.select_columns(&users);
            let (u, row) = power_oracle(&e);
            update_atom(&y, &mut atoms, &mut x, k);
            assert!((atoms.column(k) - &u).amax() < 1e-8, "atom {k}");
            for (j, &i) in users.iter().enumerate() {
                assert!((x[(k, i)] - row[j]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn unused_atom_is_replaced_by_worst_column() {
        let y = DMatrix::from_column_slice(2, 3, &[1.0, 0.0, 0.0, 5.0, 2.0, 0.0]);
        let mut atoms = DMatrix::from_column_slice(2, 2, &[1.0, 0.0, 0.6, 0.8]);
        let mut x = DMatrix::from_column_slice(2, 3, &[1.0, 0.0, 0.0, 0.0, 2.0, 0.0]);
        update_atom(&y, &mut atoms, &mut x, 1);
        assert_eq!(atoms.column(1).into_owned(), DVector::from_vec(vec![0.0, 1.0]));
    }

    #[test]
    fn too_many_atoms_is_an_error() {
        let y = DMatrix::from_element(3, 2, 1.0);
        let p = KsvdParams { atoms: 3, sparsity: 1, iterations: 1, seed: 0 };
        assert!(ksvd_train(&y, &p).is_err());
    }

    #[test]
    fn per_class_init_two_means() {
        let a = DVector::from_vec(vec![2.0, 0.0, 0.0]);
        let b = DVector::from_vec(vec![0.0, 0.0, -3.0]);
        let y = DMatrix::from_columns(&[a.clone(), a.clone(), b.clone(), b.clone(), b]);
        let y = LabeledMatrix::new(y, vec![0, 0, 1, 1, 1], 2).unwrap();
        let d = init_dictionary_per_class(&y, 2, &KsvdParams::initializer(1, 9)).unwrap();
        assert_eq!(d.atom_labels(), &[0, 1]);
        assert!((d.atoms().column(0) - DVector::from_vec(vec![1.0, 0.0, 0.0])).norm() < 1e-12);
        assert!((d.atoms().column(1).abs() - DVector::from_vec(vec![0.0, 0.0, 1.0])).norm() < 1e-12);
    }

    #[test]
    fn per_class_init_errors_and_reproducibility() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let y = LabeledMatrix::new(random(&mut rng, 4, 9), vec![0, 0, 0, 1, 1, 1, 2, 2, 2], 3).unwrap();
        let p = KsvdParams::initializer(2, 4);
        assert!(init_dictionary_per_class(&y, 7, &p).is_err());
        assert!(init_dictionary_per_class(&y, 12, &p).is_err());
        let d1 = init_dictionary_per_class(&y, 6, &p).unwrap();
        let d2 = init_dictionary_per_class(&y, 6, &p).unwrap();
        assert_eq!(d1, d2);
        assert_eq!(d1.atom_labels(), &[0, 0, 1, 1, 2, 2]);
    }
}
