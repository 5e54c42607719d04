//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

use structdict::admm::{admm_update_x, sdl_l1_train, AdmmParams};
use structdict::bench::{make_synthetic, run_experiment_on, strip_timing, Dataset, ExperimentConfig, Method};
use structdict::classifier::{train_classifier, Coding};
use structdict::coding::{omp_code_traced, soft_threshold, OmpParams};
use structdict::data::{
    half_split_alternative, load_matrix, mirror_samples, normalize_columns, save_matrix,
    train_test_split, DataFormat, ImageMeta, LabelTable, Orientation, SplitSpec, TrainCount,
};
use structdict::esdl::{esdl_train, esdl_train_with_options, update_coefficients, update_dictionary, NormalizeMode, TrainOptions};
use structdict::ksvd::{init_dictionary_per_class, ksvd_train, KsvdParams};
use structdict::objective::build_ideal_matrix;
use structdict::{CoefficientMatrix, Dictionary, EsdlParams, LabelMatrix, LabeledMatrix};

type Check = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0, |a, v| a.max(v.abs()))
}

fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
}

fn unit_columns(mut m: DMatrix<f64>) -> DMatrix<f64> {
    for mut c in m.column_iter_mut() {
        let n = c.norm();
        c /= n;
    }
    m
}

/// Generic dense solve `A X = B` by LU, independent of the library's
/// Cholesky path.
fn lu_solve(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a.clone().lu().solve(b).expect("oracle system is nonsingular")
}

struct Instance {
    d: Dictionary,
    y: LabeledMatrix,
    ya: LabeledMatrix,
    classes: usize,
}

/// Two classes, one atom block per class, every class present among samples.
fn instance(rng: &mut ChaCha8Rng) -> Instance {
    let n = rng.random_range(3..=10);
    let per = rng.random_range(1..=4);
    let k = 2 * per;
    let big_n = rng.random_range(2..=12);
    let atoms = unit_columns(random(rng, n, k));
    let atom_labels: Vec<usize> = (0..k).map(|j| j / per).collect();
    let labels: Vec<usize> = (0..big_n).map(|i| if i == 0 { 0 } else if i == 1 { 1 } else { rng.random_range(0..2) }).collect();
    Instance {
        d: Dictionary::new(atoms, atom_labels).unwrap(),
        y: LabeledMatrix::new(random(rng, n, big_n), labels.clone(), 2).unwrap(),
        ya: LabeledMatrix::new(random(rng, n, big_n), labels, 2).unwrap(),
        classes: 2,
    }
}

fn random_params(rng: &mut ChaCha8Rng) -> EsdlParams {
    EsdlParams {
        alpha: rng.random_range(0.0..1.0),
        beta: rng.random_range(1e-4..0.5),
        gamma: rng.random_range(1e-4..0.5),
        ..EsdlParams::face()
    }
}

fn criterion_1() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let (mut worst_grad, mut worst_solve) = (0.0f64, 0.0f64);
    for _ in 0..20 {
        let inst = instance(&mut rng);
        let p = random_params(&mut rng);
        let q = build_ideal_matrix(inst.y.labels(), inst.d.atom_labels()).unwrap();
        let x = update_coefficients(&inst.d, &inst.y, &inst.ya, &q, &p).unwrap();
        let (d, y, ya, q, x) = (inst.d.atoms(), inst.y.data(), inst.ya.data(), q.data(), x.data());
        let k = d.ncols();
        let grad = (d.transpose() * (d * x - y)) * 2.0
            + (d.transpose() * (d * x - ya)) * (2.0 * p.alpha)
            + x * (2.0 * p.beta)
            + (x - q) * (2.0 * p.gamma);
        worst_grad = worst_grad.max(max_abs(&grad));
        let a = d.transpose() * d * (1.0 + p.alpha) + DMatrix::identity(k, k) * (p.beta + p.gamma);
        let b = d.transpose() * y + d.transpose() * ya * p.alpha + q * p.gamma;
        worst_solve = worst_solve.max(max_abs(&(x - lu_solve(&a, &b))));
    }
    ensure(worst_grad < 1e-7, || format!("gradient max-abs {worst_grad:e}"))?;
    ensure(worst_solve < 1e-10, || format!("solve mismatch {worst_solve:e}"))?;
    Ok(format!("gradient {worst_grad:.1e}, solve {worst_solve:.1e}"))
}

fn rel_err(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    max_abs(&(a - b)) / max_abs(b).max(1.0)
}

fn criterion_2() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let (mut e_d, mut e_w, mut e_x) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..20 {
        let inst = instance(&mut rng);
        let p = random_params(&mut rng);
        let k = inst.d.atom_count();
        let n_samples = inst.y.len();

        // Dictionary: D (1+α) X Xᵀ = (Y + αY_alter) Xᵀ, X of full row rank.
        let xs = random(&mut rng, k, n_samples.max(k) + 2);
        let labels: Vec<usize> = (0..xs.ncols()).map(|i| i % inst.classes).collect();
        let n = inst.d.dim();
        let y = LabeledMatrix::new(random(&mut rng, n, xs.ncols()), labels.clone(), 2).unwrap();
        let ya = LabeledMatrix::new(random(&mut rng, n, xs.ncols()), labels.clone(), 2).unwrap();
        let x = CoefficientMatrix::new(xs.clone()).unwrap();
        let d = update_dictionary(&x, &y, &ya, p.alpha, inst.d.atom_labels()).unwrap();
        let gram = &xs * xs.transpose() * (1.0 + p.alpha);
        let rhs = &xs * (y.data() + ya.data() * p.alpha).transpose();
        e_d = e_d.max(rel_err(d.atoms(), &lu_solve(&gram, &rhs).transpose()));

        // Classifier: W (X Xᵀ + λI) = H Xᵀ.
        let lambda = rng.random_range(1e-4..1.0);
        let h = LabelMatrix::from_labels(&labels, 2);
        let w = train_classifier(&x, &h, lambda).unwrap();
        let a = &xs * xs.transpose() + DMatrix::identity(k, k) * lambda;
        let oracle = lu_solve(&a, &(&xs * h.data().transpose())).transpose();
        e_w = e_w.max(rel_err(w.weights(), &oracle));

        // ADMM X-step.
        let ap = AdmmParams::from_weights(&p);
        let mu = rng.random_range(0.01..10.0);
        let q = build_ideal_matrix(inst.y.labels(), inst.d.atom_labels()).unwrap();
        let z = CoefficientMatrix::new(random(&mut rng, k, n_samples)).unwrap();
        let l = CoefficientMatrix::new(random(&mut rng, k, n_samples)).unwrap();
        let xa = admm_update_x(&inst.d, &inst.y, &inst.ya, &q, &z, &l, mu, &ap).unwrap();
        let dm = inst.d.atoms();
        let a = dm.transpose() * dm * (1.0 + p.alpha) + DMatrix::identity(k, k) * (mu / 2.0 + p.gamma);
        let b = dm.transpose() * inst.y.data()
            + dm.transpose() * inst.ya.data() * p.alpha
            + q.data() * p.gamma
            + (z.data() * mu - l.data()) * 0.5;
        e_x = e_x.max(rel_err(xa.data(), &lu_solve(&a, &b)));
    }
    ensure(e_d < 1e-9, || format!("dictionary update off by {e_d:e}"))?;
    ensure(e_w < 1e-9, || format!("classifier off by {e_w:e}"))?;
    ensure(e_x < 1e-9, || format!("ADMM X-step off by {e_x:e}"))?;
    Ok(format!("dictionary {e_d:.1e}, classifier {e_w:.1e}, admm x {e_x:.1e}"))
}

/// Minimizes `τ|z| + ½(z - m)²` by comparing the objective at the three
/// stationary candidates.
fn prox_oracle(m: f64, tau: f64) -> f64 {
    let f = |z: f64| tau * z.abs() + 0.5 * (z - m) * (z - m);
    let mut best = 0.0;
    for c in [m - tau, m + tau] {
        let valid = (c > 0.0 && m - tau > 0.0) || (c < 0.0 && m + tau < 0.0);
        if valid && f(c) < f(best) {
            best = c;
        }
    }
    best
}

fn criterion_3() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut worst = 0.0f64;
    let mut dead = 0usize;
    for _ in 0..10 {
        let tau = rng.random_range(0.0..2.0);
        let m = DMatrix::from_fn(1000, 1, |_, _| rng.random_range(-5.0..5.0));
        let z = soft_threshold(&m, tau).map_err(|e| e.to_string())?;
        for (mv, zv) in m.iter().zip(z.iter()) {
            worst = worst.max((zv - prox_oracle(*mv, tau)).abs());
            if mv.abs() <= tau {
                dead += 1;
                ensure(*zv == 0.0, || format!("{zv} inside dead zone for m={mv}, tau={tau}"))?;
            }
        }
    }
    ensure(worst < 1e-9, || format!("prox mismatch {worst:e}"))?;
    Ok(format!("10000 scalars, max error {worst:.1e}, {dead} exact zeros"))
}

struct Fixture {
    y: LabeledMatrix,
    ya: LabeledMatrix,
}

/// Three-class subspace data, normalized and half-split.
fn fixture(seed: u64) -> Fixture {
    let raw = make_synthetic(3, 20, 2, 20, 0.05, seed).unwrap();
    let (y, _) = normalize_columns(&raw);
    let hs = half_split_alternative(&y, seed).unwrap();
    Fixture { y: hs.original, ya: hs.alternative }
}

fn criterion_4() -> Check {
    let fx = fixture(4);
    let p = EsdlParams { max_iters: 30, tol: f64::MIN_POSITIVE, ..EsdlParams::face() };
    let opts = TrainOptions { normalize: NormalizeMode::Never, ..Default::default() };
    let m = esdl_train_with_options(&fx.y, &fx.ya, 6, &p, &KsvdParams::initializer(2, 4), &opts)
        .map_err(|e| e.to_string())?;
    let t = &m.report.objective_trace;
    ensure(t.len() == 30, || format!("{} iterations recorded", t.len()))?;
    let mut prev = m.report.initial_objective.unwrap();
    for (i, &f) in t.iter().enumerate() {
        ensure(f <= prev * (1.0 + 1e-8), || format!("objective rose at iteration {}: {prev} -> {f}", i + 1))?;
        prev = f;
    }
    Ok(format!("objective {:.6} -> {:.6}", m.report.initial_objective.unwrap(), t[t.len() - 1]))
}

fn criterion_5() -> Check {
    let fx = fixture(5);
    let p = AdmmParams::from_weights(&EsdlParams::face());
    let m = sdl_l1_train(&fx.y, &fx.ya, 6, &p, &KsvdParams::initializer(2, 5)).map_err(|e| e.to_string())?;
    let r = &m.report;
    let last = *r.primal_residual_trace.last().unwrap();
    ensure(last < 1e-6, || {
        format!("residual {last:e} after {} iterations (mu reached {:e})", r.iterations_run, r.mu_trace.last().unwrap())
    })?;
    ensure(r.iterations_run <= 200, || "more than 200 iterations".into())?;
    ensure(r.mu_trace.windows(2).all(|w| w[1] >= w[0]), || "mu decreased".into())?;
    ensure(r.mu_trace.iter().all(|&m| m <= 1e8), || "mu exceeded cap".into())?;
    ensure(r.mu_trace[0] == 0.01, || format!("mu starts at {}", r.mu_trace[0]))?;
    Ok(format!("residual {last:.1e} after {} iterations", r.iterations_run))
}

/// Least-squares residual of `y` on the atoms in `support`.
fn ls_residual(d: &DMatrix<f64>, y: &DVector<f64>, support: &[usize]) -> f64 {
    if support.is_empty() {
        return y.norm();
    }
    let q = d.select_columns(support).qr().q();
    (y - &q * q.tr_mul(y)).norm()
}

fn subsets(k: usize, size: usize) -> Vec<Vec<usize>> {
    if size == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for s in subsets(k, size - 1) {
        let start = s.last().map_or(0, |&l| l + 1);
        for j in start..k {
            let mut t = s.clone();
            t.push(j);
            out.push(t);
        }
    }
    out
}

/// Largest absolute inner product between distinct unit columns.
fn coherence(d: &DMatrix<f64>) -> f64 {
    let g = d.transpose() * d;
    let mut m = 0.0f64;
    for i in 0..g.nrows() {
        for j in 0..i {
            m = m.max(g[(i, j)].abs());
        }
    }
    m
}

/// Random unit-norm dictionary whose coherence guarantees greedy recovery of
/// every `t0`-sparse combination.
fn incoherent_dictionary(rng: &mut ChaCha8Rng, k: usize, t0: usize) -> DMatrix<f64> {
    loop {
        let n = rng.random_range(200..=400);
        let d = unit_columns(random(rng, n, k));
        let mu = coherence(&d);
        if (2 * t0 - 1) as f64 * mu < 1.0 {
            return d;
        }
    }
}

fn criterion_6() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let mut worst = 0.0f64;
    for case in 0..50 {
        let k = rng.random_range(2..=10);
        let t0 = rng.random_range(1..=3.min(k));
        let d = incoherent_dictionary(&mut rng, k, t0);
        let mut x0 = DVector::zeros(k);
        let mut chosen: Vec<usize> = (0..k).collect();
        for _ in 0..(k - t0) {
            let i = rng.random_range(0..chosen.len());
            chosen.remove(i);
        }
        for &j in &chosen {
            x0[j] = rng.random_range(0.5..2.0) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        }
        let y = &d * &x0;
        let dict = Dictionary::new(d.clone(), vec![0; k]).unwrap();
        let out = omp_code_traced(&dict, &y, &OmpParams::with_sparsity(t0)).map_err(|e| e.to_string())?;
        let omp_res = (&y - &d * &out.coefficients).norm();
        let mut best = f64::INFINITY;
        let mut best_supports = Vec::new();
        for size in 0..=t0 {
            for s in subsets(k, size) {
                let r = ls_residual(&d, &y, &s);
                if r < best - 1e-12 {
                    best = r;
                    best_supports.clear();
                }
                if (r - best).abs() <= 1e-12 {
                    best_supports.push(s);
                }
            }
        }
        let mut sup = out.support.clone();
        sup.sort_unstable();
        let ok = omp_res <= best + 1e-6 || best_supports.contains(&sup);
        ensure(ok, || format!("case {case}: OMP residual {omp_res:e}, best {best:e}"))?;
        worst = worst.max(omp_res - best);
    }
    Ok(format!("50 instances, worst excess residual {worst:.1e}"))
}

/// Sine of the largest principal angle between two column spaces.
fn subspace_gap(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let qa = a.clone().qr().q();
    let qb = b.clone().qr().q();
    let proj = &qb - &qa * (qa.transpose() * &qb);
    proj.singular_values().max()
}

fn criterion_7() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(707);
    let y = random(&mut rng, 8, 30);
    let out = ksvd_train(&y, &KsvdParams { atoms: 5, sparsity: 2, iterations: 10, seed: 7 }).map_err(|e| e.to_string())?;
    let t = &out.objective_trace;
    ensure(t.len() == 10, || format!("{} iterations recorded", t.len()))?;
    ensure(t.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12)), || format!("objective rose: {t:?}"))?;

    let clean = make_synthetic(3, 12, 2, 10, 0.0, 77).unwrap();
    let d = init_dictionary_per_class(&clean, 6, &KsvdParams::initializer(2, 77)).map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    for (c, cols) in clean.class_columns().iter().enumerate() {
        // PCA oracle: leading eigenvectors of the class scatter matrix.
        let yc = clean.data().select_columns(cols);
        let eig = (&yc * yc.transpose()).symmetric_eigen();
        let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
        order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
        let u = eig.eigenvectors.select_columns(&order[..2]);
        let atoms: Vec<usize> = (0..6).filter(|&k| d.atom_labels()[k] == c).collect();
        let sub = d.atoms().select_columns(&atoms);
        worst = worst.max(subspace_gap(&u, &sub)).max(subspace_gap(&sub, &u));
    }
    ensure(worst < 1e-6, || format!("principal angle sine {worst:e}"))?;
    Ok(format!("objective {:.4} -> {:.4}, principal angle sine {worst:.1e}", t[0], t[9]))
}

fn benchmark_config(method: Method) -> ExperimentConfig {
    ExperimentConfig {
        method,
        atoms: 40,
        esdl: EsdlParams::face(),
        split: SplitSpec { train_per_class: TrainCount::PerClass(20), seed: 0, pinned_prefix: 0 },
        repeats: 5,
        coding: Coding::Omp(OmpParams::with_sparsity(30)),
        seed: 2024,
        workers: 1,
        ..Default::default()
    }
}

fn criterion_8() -> Check {
    let data = Dataset::in_memory(make_synthetic(10, 64, 5, 40, 0.05, 8).unwrap());
    let esdl = run_experiment_on(&benchmark_config(Method::Esdl), &data).map_err(|e| e.to_string())?;
    let base = run_experiment_on(&benchmark_config(Method::KsvdBaseline), &data).map_err(|e| e.to_string())?;
    let same_splits = esdl.repeats.iter().zip(&base.repeats).all(|(a, b)| a.split_seed == b.split_seed);
    ensure(same_splits, || "methods saw different splits".into())?;
    let summary = format!("ESDL {:.4}, K-SVD baseline {:.4}", esdl.mean_accuracy, base.mean_accuracy);
    ensure(esdl.mean_accuracy >= 0.90, || format!("{summary}; ESDL below 0.90"))?;
    ensure(esdl.mean_accuracy >= base.mean_accuracy, || format!("{summary}; ESDL below baseline"))?;
    Ok(summary)
}

fn criterion_9() -> Check {
    let raw = make_synthetic(10, 64, 5, 40, 0.05, 8).unwrap();
    let (data, _) = normalize_columns(&raw);
    let esdl_p = EsdlParams { max_iters: 50, ..EsdlParams::face() };
    let admm_p = AdmmParams { max_iters: 50, ..AdmmParams::from_weights(&esdl_p) };
    let mut lines = Vec::new();
    for r in 0..5u64 {
        let split = train_test_split(&data, &SplitSpec { train_per_class: TrainCount::PerClass(20), seed: r, pinned_prefix: 0 })
            .map_err(|e| e.to_string())?;
        let hs = half_split_alternative(&split.train, r).map_err(|e| e.to_string())?;
        let init = KsvdParams::initializer(4, r);
        let e = esdl_train(&hs.original, &hs.alternative, 40, &esdl_p, &init).map_err(|e| e.to_string())?;
        let s = sdl_l1_train(&hs.original, &hs.alternative, 40, &admm_p, &init).map_err(|e| e.to_string())?;
        let (te, ts) = (e.report.train_seconds, s.report.train_seconds);
        lines.push(format!("{te:.4}s<{ts:.4}s"));
        ensure(te < ts, || format!("repeat {r}: ESDL {te:.4}s ({} iters) vs SDL-l1 {ts:.4}s ({} iters)", e.report.iterations_run, s.report.iterations_run))?;
    }
    Ok(lines.join(", "))
}

fn run_benchmark(data: &Path, report: &Path, workers: &str) -> Result<Value, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_structdict"))
        .args(["benchmark", "--data"])
        .arg(data)
        .args(["--atoms", "6", "--repeats", "1", "--seed", "11", "--train-per-class", "10", "--coding", "omp:3", "--workers", workers, "--report"])
        .arg(report)
        .env_remove("STRUCTDICT_WORKERS")
        .output()
        .map_err(|e| e.to_string())?;
    ensure(out.status.success(), || String::from_utf8_lossy(&out.stderr).into_owned())?;
    let mut v: Value = serde_json::from_slice(&std::fs::read(report).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    strip_timing(&mut v);
    Ok(v)
}

fn criterion_10() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let data = dir.path().join("fixture.bin");
    let st = Command::new(env!("CARGO_BIN_EXE_structdict"))
        .args(["synth", "--classes", "3", "--dim", "20", "--subspace-dim", "2", "--per-class", "20", "--seed", "3", "--out"])
        .arg(&data)
        .status()
        .map_err(|e| e.to_string())?;
    ensure(st.success(), || "synth failed".into())?;
    let a = run_benchmark(&data, &dir.path().join("a.json"), "1")?;
    let b = run_benchmark(&data, &dir.path().join("b.json"), "2")?;
    let (ta, tb) = (serde_json::to_string_pretty(&a).unwrap(), serde_json::to_string_pretty(&b).unwrap());
    ensure(ta == tb, || "reports differ outside timing fields".into())?;
    Ok(format!("{} bytes identical across 1 and 2 workers", ta.len()))
}

fn random_labeled(rng: &mut ChaCha8Rng, dim: usize) -> LabeledMatrix {
    let classes = rng.random_range(1..=4);
    let mut labels: Vec<usize> = (0..classes).collect();
    for _ in 0..rng.random_range(0..12) {
        labels.push(rng.random_range(0..classes));
    }
    let n = labels.len();
    LabeledMatrix::new(random(rng, dim, n), labels, classes).unwrap()
}

fn criterion_11() -> Check {
    const CASES: usize = 100;
    let mut rng = ChaCha8Rng::seed_from_u64(1111);

    for case in 0..CASES {
        let meta = ImageMeta { width: rng.random_range(1..=6), height: rng.random_range(1..=6) };
        let y = random_labeled(&mut rng, meta.pixels());
        let once = mirror_samples(&y, &meta).map_err(|e| e.to_string())?;
        let twice = mirror_samples(&once, &meta).map_err(|e| e.to_string())?;
        ensure(twice == y, || format!("mirror case {case}: not an involution"))?;
        for (j, col) in once.data().column_iter().enumerate() {
            for r in 0..meta.height {
                for c in 0..meta.width {
                    let want = y.data()[(( meta.width - 1 - c) * meta.height + r, j)];
                    ensure(col[c * meta.height + r] == want, || format!("mirror case {case}: pixel ({r},{c})"))?;
                }
            }
        }
    }

    for case in 0..CASES {
        let mut y = random_labeled(&mut rng, 3);
        // every class needs two samples
        let extra: Vec<usize> = (0..y.class_count()).flat_map(|c| [c, c]).collect();
        let (data, mut labels, c) = y.into_parts();
        labels.extend(&extra);
        let mut grown = DMatrix::zeros(3, labels.len());
        grown.columns_mut(0, data.ncols()).copy_from(&data);
        for j in data.ncols()..labels.len() {
            grown.set_column(j, &random(&mut rng, 3, 1).column(0));
        }
        y = LabeledMatrix::new(grown, labels, c).unwrap();
        let hs = half_split_alternative(&y, case as u64).map_err(|e| e.to_string())?;
        ensure(hs.original.labels() == hs.alternative.labels(), || format!("half split case {case}: labels misaligned"))?;
        let mut used: Vec<usize> = hs.original_indices.iter().chain(&hs.alternative_indices).copied().collect();
        used.sort_unstable();
        used.dedup();
        ensure(used.len() == hs.original_indices.len() * 2, || format!("half split case {case}: column reused"))?;
        for (half, idx) in [(&hs.original, &hs.original_indices), (&hs.alternative, &hs.alternative_indices)] {
            for (j, &i) in idx.iter().enumerate() {
                ensure(half.data().column(j) == y.data().column(i), || format!("half split case {case}: column {i} altered"))?;
            }
        }
        let dropped = y.len() - used.len();
        let odd = y.class_sizes().iter().filter(|&&s| s % 2 == 1).count();
        ensure(dropped == odd, || format!("half split case {case}: dropped {dropped}, odd classes {odd}"))?;
    }

    for case in 0..CASES {
        let base = random_labeled(&mut rng, 2);
        let min = *base.class_sizes().iter().min().unwrap();
        let n_train = rng.random_range(0..=min);
        let pinned = rng.random_range(0..=n_train);
        let spec = SplitSpec { train_per_class: TrainCount::PerClass(n_train), seed: case as u64, pinned_prefix: pinned };
        let s = train_test_split(&base, &spec).map_err(|e| e.to_string())?;
        let mut all: Vec<usize> = s.train_indices.iter().chain(&s.test_indices).copied().collect();
        all.sort_unstable();
        ensure(all == (0..base.len()).collect::<Vec<_>>(), || format!("split case {case}: not a partition"))?;
        for cols in base.class_columns() {
            let in_train = cols.iter().filter(|i| s.train_indices.contains(i)).count();
            ensure(in_train == n_train, || format!("split case {case}: {in_train} != {n_train} per class"))?;
            ensure(cols[..pinned].iter().all(|i| s.train_indices.contains(i)), || format!("split case {case}: pinned sample in test"))?;
        }
    }

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    for case in 0..CASES {
        let dim = rng.random_range(1..=5);
        let y = random_labeled(&mut rng, dim);
        let raw: Vec<i64> = (0..y.class_count() as i64).map(|c| c * 7 - 10).collect();
        let table = LabelTable::remap(&raw).0;
        for (f, format) in [DataFormat::Binary, DataFormat::Csv(Orientation::SamplesAsColumns), DataFormat::Csv(Orientation::SamplesAsRows)]
            .into_iter()
            .enumerate()
        {
            let path = dir.path().join(format!("m{f}.dat"));
            let labels = dir.path().join(format!("l{f}.csv"));
            save_matrix(&path, Some(&labels), &y, &table, format).map_err(|e| e.to_string())?;
            let orientation = match format {
                DataFormat::Csv(o) => o,
                DataFormat::Binary => Orientation::SamplesAsColumns,
            };
            let back = load_matrix(&path, Some(&labels), orientation).map_err(|e| e.to_string())?;
            ensure(back.matrix == y, || format!("round trip case {case}, format {format:?}: matrix differs"))?;
            ensure(back.label_table == table, || format!("round trip case {case}, format {format:?}: label table differs"))?;
        }
    }
    Ok(format!("{CASES} cases each for mirror, half split, train/test split, 3 formats"))
}

fn main() {
    let criteria: [(&str, fn() -> Check, Duration); 11] = [
        ("closed-form coefficient update", criterion_1, Duration::from_secs(1)),
        ("closed-form dictionary, classifier, ADMM X-step", criterion_2, Duration::from_secs(1)),
        ("soft-threshold", criterion_3, Duration::from_secs(1)),
        ("monotone descent", criterion_4, Duration::from_secs(10)),
        ("ADMM feasibility", criterion_5, Duration::from_secs(30)),
        ("OMP vs exhaustive support", criterion_6, Duration::from_secs(5)),
        ("K-SVD descent and per-class init", criterion_7, Duration::from_secs(10)),
        ("synthetic classification benchmark", criterion_8, Duration::from_secs(60)),
        ("relative training speed", criterion_9, Duration::from_secs(120)),
        ("pipeline determinism", criterion_10, Duration::from_secs(60)),
        ("data-pipeline properties", criterion_11, Duration::from_secs(5)),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, run, budget)) in criteria.iter().enumerate() {
        let id = format!("criterion {}", i + 1);
        if !filter.is_empty() && !filter.iter().any(|f| id.ends_with(f.as_str()) || name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_else(|| "panicked".into()))
        });
        let elapsed = start.elapsed();
        let result = match result {
            Ok(detail) if elapsed > *budget => Err(format!("{detail}; took {elapsed:.2?}, budget {budget:?}")),
            other => other,
        };
        match result {
            Ok(detail) => println!("{id:>12} PASS  {name}: {detail} [{elapsed:.2?}]"),
            Err(detail) => {
                failed += 1;
                println!("{id:>12} FAIL  {name}: {detail} [{elapsed:.2?}]");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
