use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use t3sc::autodiff::{Eager, Graph, Parameter};
use t3sc::gradcheck::check_parameters;
use t3sc::sparse_coding::lasso::{lasso_oracle, objective, Matrix};
use t3sc::sparse_coding::{
    csc_encode, ista_step, lista_step, overlap_add_decode, weighted_csc_encode, CodeMap, CscConfig,
};
use t3sc::Tensor;

mod common;
use common::{rand_tensor, spectral_norm_sq, synthesis_matrix};

fn csc_objective(m: &Matrix, y: &[f64], lam: f64, codes: &[f64]) -> f64 {
    objective(y, m, &vec![lam; codes.len()], codes)
}

#[test]
fn csc_reaches_lasso_optimum() {
    for seed in 0..4 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (c, h, w, s, p) = (8, 6, 6, 3, 4);
        let d = rand_tensor(&[p, c, s, s], &mut rng);
        let y = rand_tensor(&[c, h, w], &mut rng);
        let a = synthesis_matrix(&d, h, w, &[1.0; 8]);
        let eta = 1.0 / spectral_norm_sq(&a);
        let lam = 0.01;
        let g = Eager;
        let cm = csc_encode(
            &g,
            &y,
            &d.map(|v| v * eta),
            &d,
            &Tensor::full(&[p], lam * eta),
            None,
            CscConfig { iterations: 500, stride: 1 },
        )
        .unwrap();
        let ours = csc_objective(&a, y.data(), lam, cm.codes.data());
        let oracle = lasso_oracle(y.data(), &a, &vec![lam; a.cols]);
        let best = csc_objective(&a, y.data(), lam, &oracle);
        assert!((ours - best) / best < 1e-4, "seed {seed}: ours {ours} best {best}");
    }
}

#[test]
fn weighted_fixed_point_matches_rescaled_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (c, h, w, s, p) = (2, 3, 3, 2, 3);
    let beta = [4.0f64, 1.0];
    let d = rand_tensor(&[p, c, s, s], &mut rng);
    let y = rand_tensor(&[c, h, w], &mut rng);
    let a = synthesis_matrix(&d, h, w, &[2.0, 1.0]);
    let eta = 1.0 / spectral_norm_sq(&a);
    let lam = 0.02;
    let sy: Vec<f64> = y.data().iter().enumerate().map(|(i, v)| v * beta[i / 9].sqrt()).collect();
    let oracle = lasso_oracle(&sy, &a, &vec![lam; a.cols]);
    let g = Eager;
    let cm = weighted_csc_encode(
        &g,
        &y,
        &d.map(|v| v * eta),
        &d,
        &Tensor::full(&[p], lam * eta),
        &Tensor::new(&[2], beta.to_vec()).unwrap(),
        CscConfig { iterations: 20000, stride: 1 },
    )
    .unwrap();
    for (x, o) in cm.codes.data().iter().zip(&oracle) {
        assert!((x - o).abs() < 1e-7, "{x} vs {o}");
    }
}

#[test]
fn decode_of_unpenalized_encode_reconstructs() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (c, h, w, p) = (4, 8, 8, 6);
    let mut d = rand_tensor(&[p, c, 1, 1], &mut rng).map(|v| 0.2 * v);
    for j in 0..c {
        d.data_mut()[j * c + j] += 1.0;
    }
    let y = Tensor::from_fn(&[c, h, w], |i| {
        let (b, px) = (i / 64, i % 64);
        ((px / 8) as f64 * 0.3 + b as f64).sin() * ((px % 8) as f64 * 0.2).cos()
    });
    let a = synthesis_matrix(&d, h, w, &[1.0; 4]);
    let eta = 1.0 / spectral_norm_sq(&a);
    let g = Eager;
    let cm = csc_encode(
        &g,
        &y,
        &d.map(|v| v * eta),
        &d,
        &Tensor::scalar(0.0),
        None,
        CscConfig { iterations: 2000, stride: 1 },
    )
    .unwrap();
    let rec = overlap_add_decode(&g, &cm, &d).unwrap();
    let err: f64 = rec.data().iter().zip(y.data()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let norm: f64 = y.data().iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!(err / norm < 1e-3, "{}", err / norm);
}

#[test]
fn lasso_oracle_beats_long_proximal_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let (m, p) = (8, 12);
    let d = Matrix::new(m, p, (0..m * p).map(|_| rng.random_range(-1.0..1.0)).collect());
    let y: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
    let lam = vec![0.05; p];
    let oracle = lasso_oracle(&y, &d, &lam);
    let eta = 1.0 / spectral_norm_sq(&d);
    let mut x = vec![0.0; p];
    for _ in 0..1_000_000 {
        let r: Vec<f64> = y.iter().zip(d.apply(&x)).map(|(a, b)| a - b).collect();
        let gr = d.apply_t(&r);
        for j in 0..p {
            let u = x[j] + eta * gr[j];
            x[j] = u.signum() * (u.abs() - eta * lam[j]).max(0.0);
        }
    }
    assert!(objective(&y, &d, &lam, &oracle) <= objective(&y, &d, &lam, &x) + 1e-9);
}

#[test]
fn ista_objective_is_monotone() {
    let g = Eager;
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (m, p) = (10, 15);
        let dm = Matrix::new(m, p, (0..m * p).map(|_| rng.random_range(-1.0..1.0)).collect());
        let y: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
        let lam = vec![0.1; p];
        let eta = 1.0 / spectral_norm_sq(&dm);
        let d = Tensor::new(&[m, p], dm.data.clone()).unwrap();
        let yt = Tensor::new(&[m], y.clone()).unwrap();
        let lt = Tensor::full(&[p], 0.1 * eta);
        let mut a = Tensor::zeros(&[p]);
        let mut prev = objective(&y, &dm, &lam, a.data());
        for _ in 0..300 {
            a = ista_step(&g, &a, &yt, &d, eta, &lt).unwrap();
            let cur = objective(&y, &dm, &lam, a.data());
            assert!(cur <= prev + 1e-14 * prev.abs(), "seed {seed}: {cur} > {prev}");
            prev = cur;
        }
    }
}

#[test]
fn single_pixel_csc_is_patchwise_lista() {
    let g = Eager;
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (c, p) = (5, 7);
        let ck = rand_tensor(&[p, c, 1, 1], &mut rng).map(|v| 0.2 * v);
        let dk = rand_tensor(&[p, c, 1, 1], &mut rng);
        let y = rand_tensor(&[c, 1, 1], &mut rng);
        let lam = Tensor::full(&[p], 0.03);
        let t = 6;
        let cm = csc_encode(&g, &y, &ck, &dk, &lam, None, CscConfig { iterations: t, stride: 1 })
            .unwrap();
        let transpose = |k: &Tensor<f64>| Tensor::from_fn(&[c, p], |i| k.data()[(i % p) * c + i / p]);
        let (cm_mat, dm_mat) = (transpose(&ck), transpose(&dk));
        let yv = y.clone().reshape(&[c]).unwrap();
        let mut a = Tensor::zeros(&[p]);
        for _ in 0..t {
            a = lista_step(&g, &a, &yv, &cm_mat, &dm_mat, &lam).unwrap();
        }
        assert_eq!(cm.codes.data(), a.data(), "seed {seed}");
    }
}

#[test]
fn lista_gradients() {
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let params = vec![
            Parameter::new("C", rand_tensor(&[6, 4], &mut rng)),
            Parameter::new("D", rand_tensor(&[6, 4], &mut rng)),
            Parameter::new("lambda", Tensor::full(&[4], 0.05)),
        ];
        let y = rand_tensor(&[6], &mut rng);
        let a0 = rand_tensor(&[4], &mut rng);
        let target = rand_tensor(&[4], &mut rng);
        let err = check_parameters(&params, 1e-6, |g, v| {
            let a = g.constant(a0.clone());
            let yv = g.constant(y.clone());
            let a1 = lista_step(g, &a, &yv, &v[0], &v[1], &v[2])?;
            let a2 = lista_step(g, &a1, &yv, &v[0], &v[1], &v[2])?;
            g.mse(&a2, &g.constant(target.clone()))
        })
        .unwrap();
        assert!(err < 1e-6, "seed {seed}: {err}");
    }
}

#[test]
fn encode_decode_gradients() {
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
        let (c, p, s) = (2, 3, 3);
        let params = vec![
            Parameter::new("C", rand_tensor(&[p, c, s, s], &mut rng).map(|v| 0.2 * v)),
            Parameter::new("D", rand_tensor(&[p, c, s, s], &mut rng)),
            Parameter::new("W", rand_tensor(&[p, c, s, s], &mut rng)),
            Parameter::new("lambda", Tensor::full(&[p], 0.02)),
        ];
        let y = rand_tensor(&[c, 6, 5], &mut rng);
        let x = rand_tensor(&[c, 6, 5], &mut rng);
        let err = check_parameters(&params, 1e-6, |g, v| {
            let yv = g.constant(y.clone());
            let cm = csc_encode(g, &yv, &v[0], &v[1], &v[3], None, CscConfig { iterations: 3, stride: 1 })?;
            let out = overlap_add_decode(g, &cm, &v[2])?;
            g.mse(&out, &g.constant(x.clone()))
        })
        .unwrap();
        assert!(err < 1e-6, "seed {seed}: {err}");
    }
}

#[test]
fn partition_of_unity_random_geometries() {
    let g = Eager;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..10 {
        let s = rng.random_range(1..6);
        let h = rng.random_range(s..s + 9);
        let w = rng.random_range(s..s + 9);
        let c = rng.random_range(1..4);
        let cm = CodeMap {
            codes: Tensor::<f64>::ones(&[1, h - s + 1, w - s + 1]),
            side: s,
            stride: 1,
            height: h,
            width: w,
        };
        let img = overlap_add_decode(&g, &cm, &Tensor::ones(&[1, c, s, s])).unwrap();
        assert!(img.data().iter().all(|&v| v == 1.0));
    }
}
