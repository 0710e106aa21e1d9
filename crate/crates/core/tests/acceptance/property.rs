//! Criteria 1-7: exact properties on seeded random fixtures. No dataset files.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use awdual::dataset::{pair_test_train, GaussianClusters};
use awdual::duality::{build_pair_records, decompose_gap, min_dual_shift, sigma_w_quadratic, DualShiftRecord};
use awdual::linalg::{sym_eig, Matrix, SymmetricMatrix};
use awdual::multilearner::{run_multilearner, ssgd_round, Algorithm, LearnerState, MultiConfig};
use awdual::network::{layer_hessian, Activation, Workspace};
use awdual::rng::{indexed_stream_rng, Stream};
use awdual::trainer::{sgd_step, train, TrainConfig};
use awdual::{EigenBasis, LabeledSet, Mlp};

use crate::oracle::{self, dot, random_net, random_vec};
use crate::Gate;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random architecture: input 3..12, one to three hidden layers, 2..10 classes.
fn random_case_net(rng: &mut ChaCha8Rng) -> Mlp {
    let depth = rng.gen_range(2..=4);
    let mut sizes = vec![rng.gen_range(3..=12)];
    for _ in 1..depth {
        sizes.push(rng.gen_range(2..=10));
    }
    sizes.push(rng.gen_range(2..=10));
    let activation = if rng.gen_bool(0.5) { Activation::Relu } else { Activation::Tanh };
    let biases = rng.gen_bool(0.7);
    random_net(&sizes, activation, biases, rng)
}

fn synthetic(dim: usize, per_class: usize, seed: u64) -> LabeledSet {
    GaussianClusters::new(dim, 1.0, 0).sample(per_class, seed).unwrap()
}

fn trained_fixture(sizes: &[usize], biases: bool, epochs: usize) -> (Mlp, LabeledSet, LabeledSet) {
    let train_set = synthetic(sizes[0], 20, 11);
    let test_set = synthetic(sizes[0], 8, 12);
    let cfg = TrainConfig {
        layer_sizes: sizes.to_vec(),
        biases,
        n_per_class: 20,
        batch_size: 10,
        alpha: 0.05,
        max_epochs: epochs,
        seed: 5,
        ..TrainConfig::default()
    };
    let r = train(&cfg, &train_set, &test_set).unwrap();
    (r.solution, train_set, test_set)
}

fn random_basis(m: usize, rng: &mut ChaCha8Rng) -> EigenBasis {
    let a = Matrix::from_vec(m, m, random_vec(m * m, 1.0, rng)).unwrap();
    sym_eig(&SymmetricMatrix::from_matrix(a).unwrap()).unwrap()
}

pub fn duality_exactness(gate: &mut Gate) {
    let start = Instant::now();
    let mut r = rng(101);
    let mut worst: f64 = 0.0;
    let mut errors = 0;
    let mut redraws = 0;
    let mut cases = 0;
    while cases < 500 {
        let net = random_case_net(&mut r);
        let s = r.gen_range(1..=net.num_layers());
        let label = r.gen_range(0..net.num_classes());
        let dim = net.sizes()[0];
        let x = random_vec(dim, 1.0, &mut r);
        let x_test = random_vec(dim, 1.0, &mut r);
        let a = oracle::activity_into(&net, &x, s);
        let a_test = oracle::activity_into(&net, &x_test, s);
        if a.iter().all(|&v| v == 0.0) {
            // a dead partner activity has no dual shift by definition
            redraws += 1;
            continue;
        }
        cases += 1;
        let delta_a: Vec<f64> = a_test.iter().zip(&a).map(|(t, p)| t - p).collect();
        let dw = match min_dual_shift(&net.layer(s).weights, &a, &delta_a) {
            Ok(m) => m,
            Err(_) => {
                errors += 1;
                continue;
            }
        };
        let shifted: Vec<f64> = net.layer(s).weights.as_slice().iter().zip(dw.as_slice()).map(|(w, d)| w + d).collect();
        let dual = oracle::loss(&net, &x, label, Some((s, &shifted)));
        let direct = oracle::loss(&net, &x_test, label, None);
        worst = worst.max((dual - direct).abs());
    }
    let secs = start.elapsed().as_secs_f64();
    gate.report(
        1,
        "duality exactness",
        worst < 1e-9 && secs < 10.0 && errors == 0,
        format!("500 cases, max |l(x',w) - l(x,w+dw)| = {worst:.2e} (< 1e-9), {secs:.2} s (< 10 s), {errors} errors, {redraws} dead-activity draws replaced"),
    );
}

pub fn minimality(gate: &mut Gate) {
    let mut r = rng(202);
    let mut violations = 0;
    let mut worst_constraint: f64 = 0.0;
    let mut tightest = f64::INFINITY;
    for _ in 0..200 {
        let rows = r.gen_range(2..=12);
        let cols = r.gen_range(1..=8);
        let w = Matrix::from_vec(rows, cols, random_vec(rows * cols, 1.0, &mut r)).unwrap();
        let a = random_vec(rows, 1.0, &mut r);
        let delta_a = random_vec(rows, 0.5, &mut r);
        let dw = min_dual_shift(&w, &a, &delta_a).unwrap();
        let target: Vec<f64> = (0..cols).map(|j| (0..rows).map(|i| delta_a[i] * w.get(i, j)).sum()).collect();
        let aa = dot(&a, &a);
        let base_norm = dot(dw.as_slice(), dw.as_slice());
        for _ in 0..100 {
            // any alternative is dw + N with aᵀN = 0
            let scale = 10f64.powf(r.gen_range(-4.0..1.0));
            let raw = random_vec(rows * cols, scale, &mut r);
            let mut alt = dw.as_slice().to_vec();
            for j in 0..cols {
                let proj: f64 = (0..rows).map(|i| a[i] * raw[i * cols + j]).sum::<f64>() / aa;
                for i in 0..rows {
                    alt[i * cols + j] += raw[i * cols + j] - a[i] * proj;
                }
            }
            for j in 0..cols {
                let got: f64 = (0..rows).map(|i| a[i] * alt[i * cols + j]).sum();
                worst_constraint = worst_constraint.max((got - target[j]).abs());
            }
            let alt_norm = dot(&alt, &alt);
            if alt_norm < base_norm {
                violations += 1;
            }
            tightest = tightest.min(alt_norm - base_norm);
        }
    }
    gate.report(
        2,
        "minimality",
        violations == 0 && worst_constraint < 1e-9,
        format!("200 cases x 100 alternatives, {violations} shorter alternatives, alternatives satisfy the constraint to {worst_constraint:.1e}, smallest excess {tightest:.1e}"),
    );
}

pub fn decomposition_identity(gate: &mut Gate) {
    let mut r = rng(303);
    let mut worst: f64 = 0.0;
    for case in 0..200 {
        let m = r.gen_range(2..=30);
        let k = r.gen_range(1..=60);
        let basis = random_basis(m, &mut r);
        let scale_g = 10f64.powf(r.gen_range(-2.0..1.0));
        let records: Vec<DualShiftRecord<f64>> = (0..k)
            .map(|index| {
                let g = random_vec(m, scale_g, &mut r);
                let delta_w = random_vec(m, 1.0, &mut r);
                DualShiftRecord {
                    index,
                    test: index,
                    partner: index,
                    label: 0,
                    a: vec![1.0],
                    a_test: vec![1.0],
                    delta_l: dot(&g, &delta_w),
                    g,
                    delta_w,
                    s_w: 1.0,
                    train_loss: 0.0,
                    test_loss: 0.0,
                }
            })
            .collect();
        let spec = decompose_gap(&records, &basis).unwrap();
        let expected = records.iter().map(|r| dot(&r.g, &r.delta_w)).sum::<f64>() / k as f64;
        let sum: f64 = (0..m)
            .map(|n| spec.c[n] * spec.sigma_g[n] * spec.sigma_w[n] + spec.mu_g[n] * spec.mu_w[n])
            .sum();
        worst = worst.max((sum - expected).abs()).max((spec.dl_total - expected).abs());
        let _ = case;
    }
    gate.report(
        3,
        "decomposition identity",
        worst < 1e-10,
        format!("200 random record sets, max |sum_n dL_n - <dl_k>| = {worst:.2e} (< 1e-10)"),
    );
}

pub fn gradient_and_hessian(gate: &mut Gate) {
    let mut r = rng(404);
    let mut bad = 0;
    let mut checked = 0;
    let mut worst_excess: f64 = 0.0;
    for _ in 0..40 {
        let net = random_case_net(&mut r);
        let x = random_vec(net.sizes()[0], 1.0, &mut r);
        let label = r.gen_range(0..net.num_classes());
        let grad = net.sample_gradient(&x, label).unwrap();
        let mut probe = net.clone();
        let flat = net.to_flat();
        let gflat = grad.to_flat();
        for p in 0..flat.len() {
            let h = 1e-5;
            let mut plus = flat.clone();
            plus[p] += h;
            probe.set_flat(&plus).unwrap();
            let lp = oracle::loss(&probe, &x, label, None);
            let mut minus = flat.clone();
            minus[p] -= h;
            probe.set_flat(&minus).unwrap();
            let lm = oracle::loss(&probe, &x, label, None);
            let fd = (lp - lm) / (2.0 * h);
            let tol = 1e-6f64.max(1e-4 * gflat[p].abs());
            let err = (fd - gflat[p]).abs();
            worst_excess = worst_excess.max(err / tol);
            checked += 1;
            if err > tol {
                bad += 1;
            }
        }
    }

    let mut asym: f64 = 0.0;
    for (sizes, biases, epochs, s) in [
        (vec![20, 16, 12, 10], true, 40, 2),
        (vec![20, 12, 10], false, 40, 1),
        (vec![20, 16, 12, 10], true, 0, 3),
    ] {
        let (net, train_set, _) = trained_fixture(&sizes, biases, epochs.max(1));
        let h = layer_hessian(&net, &train_set, s, 4096).unwrap();
        asym = asym.max(h.relative_asymmetry());
    }
    gate.report(
        4,
        "gradient and Hessian checks",
        bad == 0 && asym < 1e-4,
        format!(
            "{checked} gradient components vs central differences, {bad} outside max(1e-6, 1e-4|g|) (worst at {worst_excess:.2} of tolerance); Hessian relative asymmetry {asym:.1e} (< 1e-4)"
        ),
    );
}

pub fn scale_covariance(gate: &mut Gate) {
    let (net, train_set, test_set) = trained_fixture(&[20, 12, 12, 10], false, 60);
    let s = 2;
    let pairs = pair_test_train(&train_set, &test_set, test_set.len()).unwrap();
    let records = build_pair_records(&net, &train_set, &test_set, &pairs, s, 1.0).unwrap();
    let hessian = layer_hessian(&net, &train_set, s, 4096).unwrap();
    let basis = sym_eig(&hessian.matrix).unwrap();
    let base = decompose_gap(&records, &basis).unwrap();
    let dl_scale = base.dl.iter().fold(0.0f64, |m, v| m.max(v.abs()));

    let mut worst_w: f64 = 0.0;
    let mut worst_g: f64 = 0.0;
    let mut worst_dl: f64 = 0.0;
    let mut worst_h: f64 = 0.0;
    for p in [3.0, 0.5, 7.25] {
        let mut scaled = net.clone();
        scaled.layer_mut(s).weights.as_mut_slice().iter_mut().for_each(|w| *w *= p);
        scaled.layer_mut(s + 1).weights.as_mut_slice().iter_mut().for_each(|w| *w /= p);
        let rec = build_pair_records(&scaled, &train_set, &test_set, &pairs, s, 1.0).unwrap();
        // the eigenvectors are unchanged (H scales by 1/p^2), so both solutions
        // are decomposed in the same directions
        let spec = decompose_gap(&rec, &basis).unwrap();
        let h_scaled = layer_hessian(&scaled, &train_set, s, 4096).unwrap();
        let hmax = hessian.max_abs;
        for (a, b) in h_scaled.matrix.as_matrix().as_slice().iter().zip(hessian.matrix.as_matrix().as_slice()) {
            worst_h = worst_h.max((a * p * p - b).abs() / hmax);
        }
        for n in 0..basis.dim() {
            let rel = |x: f64, y: f64| (x - y).abs() / y.abs().max(1e-300);
            if base.sigma_w[n] > 1e-12 * base.sigma_w.iter().cloned().fold(0.0, f64::max) {
                worst_w = worst_w.max(rel(spec.sigma_w[n], p * base.sigma_w[n]));
            }
            if base.sigma_g[n] > 1e-12 * base.sigma_g.iter().cloned().fold(0.0, f64::max) {
                worst_g = worst_g.max(rel(spec.sigma_g[n], base.sigma_g[n] / p));
            }
            worst_dl = worst_dl.max((spec.dl[n] - base.dl[n]).abs() / base.dl[n].abs().max(1e-12 * dl_scale));
        }
    }
    gate.report(
        5,
        "scale-transformation covariance",
        worst_w < 1e-8 && worst_g < 1e-8 && worst_dl < 1e-8,
        format!(
            "p in {{3, 0.5, 7.25}}: max rel err sigma_w*p {worst_w:.1e}, sigma_g/p {worst_g:.1e}, dL_n {worst_dl:.1e} (< 1e-8); finite-difference H*p^2 matches H to {worst_h:.1e} of max|H|"
        ),
    );
}

pub fn multi_learner_equivalence(gate: &mut Gate) {
    let data = synthetic(20, 30, 21);
    let mut r = rng(606);
    let init = random_net(&[20, 16, 12, 10], Activation::Relu, true, &mut r);
    let (m, b, alpha) = (4, 10, 0.1);
    let mut states: Vec<LearnerState<f64>> = (0..m)
        .map(|j| LearnerState {
            index: j,
            params: init.clone(),
            rng: indexed_stream_rng(1, Stream::Dropout, j as u64),
        })
        .collect();
    let mut reference = init.clone();
    let mut ws = Workspace::new(&init);
    let mut grad = init.zeros_like();
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let picks = rand::seq::index::sample(&mut r, data.len(), m * b).into_vec();
        let batches: Vec<&[usize]> = picks.chunks(b).collect();
        ssgd_round(&mut states, &data, &batches, alpha, 0.0, 0.0).unwrap();
        sgd_step::<f64, ChaCha8Rng>(&mut reference, &data, &picks, alpha, 0.0, None, &mut ws, &mut grad);
        let avg = awdual::multilearner::mean_params(&states);
        let diff = avg.to_flat().iter().zip(reference.to_flat()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        worst = worst.max(diff);
    }

    let test = synthetic(20, 5, 22);
    let cfg = TrainConfig {
        layer_sizes: vec![20, 16, 12, 10],
        n_per_class: 30,
        batch_size: 10,
        max_epochs: 8,
        ..TrainConfig::default()
    };
    let sgd = train(&cfg, &data, &test).unwrap();
    let mut gap_m1: f64 = 0.0;
    for algorithm in [Algorithm::Dpsgd, Algorithm::Ssgd] {
        let multi = MultiConfig {
            train: cfg.clone(),
            m: 1,
            algorithm,
            ..MultiConfig::default()
        };
        let run = run_multilearner(&multi, &data, &test, None).unwrap();
        let diff = run.result.solution.to_flat().iter().zip(sgd.solution.to_flat()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        gap_m1 = gap_m1.max(diff);
    }
    gate.report(
        6,
        "SSGD and single-learner equivalences",
        worst < 1e-12 && gap_m1 < 1e-12,
        format!("SSGD (m=4, B=10) vs SGD (B=40) over 20 rounds: max |dW| {worst:.1e}; m=1 DPSGD/SSGD vs SGD over 8 epochs: {gap_m1:.1e} (< 1e-12)"),
    );
}

pub fn sigma_w_identity(gate: &mut Gate) {
    let (net, train_set, test_set) = trained_fixture(&[20, 16, 12, 10], true, 40);
    let mut r = rng(707);
    let mut worst: f64 = 0.0;
    for s in [1, 2, 3] {
        let pairs = pair_test_train(&train_set, &test_set, test_set.len()).unwrap();
        for s_w in [1.0, 0.3] {
            let records = build_pair_records(&net, &train_set, &test_set, &pairs, s, s_w).unwrap();
            let quad = sigma_w_quadratic(&net.layer(s).weights, &records).unwrap();
            let m = records[0].delta_w.len();
            let basis = random_basis(m, &mut r);
            let spec = decompose_gap(&records, &basis).unwrap();
            let moment: f64 = (0..m).map(|n| spec.sigma_w[n].powi(2) + spec.mu_w[n].powi(2)).sum();
            let direct = records.iter().map(|r| dot(&r.delta_w, &r.delta_w)).sum::<f64>() / records.len() as f64;
            worst = worst.max((quad - moment).abs() / moment).max((quad - direct).abs() / direct);
        }
    }
    gate.report(
        7,
        "sigma_w quadratic-form identity",
        worst < 1e-9,
        format!("layers 1-3, s_w in {{1, 0.3}}: max rel |C-form - sum(sigma_w^2 + mu_w^2)| = {worst:.1e} (< 1e-9)"),
    );
}
