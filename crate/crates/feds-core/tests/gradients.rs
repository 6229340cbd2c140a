//! Analytic gradients against central finite differences.

use feds_core::graph::{Graph, Var};
use feds_core::recognizer::{ce_loss, RecognizerConfig, RecognizerNet};
use feds_core::surrogate::{SurrogateConfig, SurrogateLossWeights, SurrogateNet};
use feds_core::text::{encode_one_hot, Alphabet, CharGrid};
use feds_core::{Result, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-5;

fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Tensor {
    let data = (0..rows * cols)
        .map(|_| {
            let v: f64 = rng.random_range(lo..hi);
            if rng.random_bool(0.5) {
                v
            } else {
                -v
            }
        })
        .collect();
    Tensor::from_vec(rows, cols, data).unwrap()
}

fn positive(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    random(rng, rows, cols, 0.2, 1.5).map(f64::abs)
}

type Build = dyn Fn(&mut Graph, &[Var]) -> Result<Var>;

/// Scalar probe: `sum(op(inputs) * weights)` with fixed random weights.
fn probe(build: &Build, inputs: &[Tensor], weights: &Tensor) -> f64 {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone()).unwrap()).collect();
    let out = build(&mut g, &vars).unwrap();
    g.value(out).data().iter().zip(weights.data()).map(|(a, b)| a * b).sum()
}

fn check_op(name: &str, build: &Build, inputs: Vec<Tensor>, rng: &mut ChaCha8Rng) {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone()).unwrap()).collect();
    let out = build(&mut g, &vars).unwrap();
    let [r, c] = g.shape(out);
    let weights = random(rng, r, c, 0.1, 1.0);
    let w = g.constant(weights.clone()).unwrap();
    let prod = g.mul(out, w).unwrap();
    let root = g.sum_all(prod).unwrap();
    let grads = g.backward(root, &vars, false).unwrap();

    for (k, input) in inputs.iter().enumerate() {
        let analytic = g.value(grads[k]);
        for i in 0..input.len() {
            let mut plus = inputs.clone();
            plus[k].data_mut()[i] += STEP;
            let mut minus = inputs.clone();
            minus[k].data_mut()[i] -= STEP;
            let numeric = (probe(build, &plus, &weights) - probe(build, &minus, &weights)) / (2.0 * STEP);
            let a = analytic.data()[i];
            let tol = f64::max(1e-7, 1e-4 * numeric.abs());
            assert!(
                (a - numeric).abs() <= tol,
                "{name}: input {k} entry {i}: analytic {a} numeric {numeric}"
            );
        }
    }
}

#[test]
fn primitive_ops_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let r = &mut rng;
    let (a, b) = (random(r, 3, 4, 0.1, 1.0), random(r, 3, 4, 0.1, 1.0));
    check_op("add", &|g, v| g.add(v[0], v[1]), vec![a.clone(), b.clone()], r);
    check_op("sub", &|g, v| g.sub(v[0], v[1]), vec![a.clone(), b.clone()], r);
    check_op("mul", &|g, v| g.mul(v[0], v[1]), vec![a.clone(), b.clone()], r);
    check_op("scale", &|g, v| g.scale(v[0], -1.7), vec![a.clone()], r);
    check_op("offset", &|g, v| g.offset(v[0], 0.3), vec![a.clone()], r);
    check_op("square", &|g, v| g.square(v[0]), vec![a.clone()], r);
    check_op("leaky_relu", &|g, v| g.leaky_relu(v[0], 0.01), vec![a.clone()], r);
    check_op("abs", &|g, v| g.abs(v[0]), vec![a.clone()], r);
    check_op("abs_smooth", &|g, v| g.abs_smooth(v[0], 1e-3), vec![a.clone()], r);
    check_op("clamp_min", &|g, v| g.clamp_min(v[0], 0.05), vec![a.clone()], r);
    let p = positive(r, 3, 4);
    check_op("sqrt", &|g, v| g.sqrt(v[0]), vec![p.clone()], r);
    check_op("recip", &|g, v| g.recip(v[0]), vec![p.clone()], r);
    check_op("log", &|g, v| g.log(v[0]), vec![p.clone()], r);
    check_op("softmax_rows", &|g, v| g.softmax_rows(v[0]), vec![a.clone()], r);
    check_op("sum_rows", &|g, v| g.sum_rows(v[0]), vec![a.clone()], r);
    check_op("sum_cols", &|g, v| g.sum_cols(v[0]), vec![a.clone()], r);
    check_op("sum_all", &|g, v| g.sum_all(v[0]), vec![a.clone()], r);
    check_op("mean", &|g, v| g.mean(v[0]), vec![a.clone()], r);
    check_op("l2_norm_eps", &|g, v| g.l2_norm_eps(v[0], 1e-12), vec![a.clone()], r);
    check_op("row_l2_norm_eps", &|g, v| g.row_l2_norm_eps(v[0], 1e-12), vec![a.clone()], r);
    check_op(
        "broadcast_rows",
        &|g, v| g.broadcast_rows(v[0], 3),
        vec![random(r, 1, 4, 0.1, 1.0)],
        r,
    );
    check_op(
        "broadcast_cols",
        &|g, v| g.broadcast_cols(v[0], 5),
        vec![random(r, 3, 1, 0.1, 1.0)],
        r,
    );
    check_op(
        "broadcast_scalar",
        &|g, v| g.broadcast_scalar(v[0], [2, 3]),
        vec![random(r, 1, 1, 0.1, 1.0)],
        r,
    );
    check_op(
        "mul_scalar",
        &|g, v| g.mul_scalar(v[0], v[1]),
        vec![a.clone(), random(r, 1, 1, 0.1, 1.0)],
        r,
    );
    let seq = random(r, 8, 3, 0.1, 1.0);
    check_op("segment_sum", &|g, v| g.segment_sum(v[0], 4), vec![seq.clone()], r);
    check_op("segment_mean", &|g, v| g.segment_mean(v[0], 4), vec![seq.clone()], r);
    check_op(
        "segment_expand",
        &|g, v| g.segment_expand(v[0], 3),
        vec![random(r, 2, 3, 0.1, 1.0)],
        r,
    );
    check_op("unfold", &|g, v| g.unfold(v[0], 4, 3, 1), vec![seq.clone()], r);
    check_op("unfold_valid", &|g, v| g.unfold(v[0], 4, 3, 0), vec![seq.clone()], r);

    let m = random(r, 4, 3, 0.1, 1.0);
    let n = random(r, 3, 5, 0.1, 1.0);
    check_op("matmul", &|g, v| g.matmul(v[0], v[1]), vec![m.clone(), n.clone()], r);
    check_op(
        "matmul_ta",
        &|g, v| g.matmul_t(v[0], v[1], true, false),
        vec![m.transpose(), n.clone()],
        r,
    );
    check_op(
        "matmul_tb",
        &|g, v| g.matmul_t(v[0], v[1], false, true),
        vec![m.clone(), n.transpose()],
        r,
    );
    check_op(
        "matmul_tt",
        &|g, v| g.matmul_t(v[0], v[1], true, true),
        vec![m.transpose(), n.transpose()],
        r,
    );
    check_op(
        "linear",
        &|g, v| g.linear(v[0], v[1], v[2]),
        vec![m.clone(), n.clone(), random(r, 1, 5, 0.1, 1.0)],
        r,
    );
    check_op(
        "conv1d",
        &|g, v| g.conv1d(v[0], v[1], v[2], 4, 1),
        vec![seq, random(r, 9, 2, 0.1, 1.0), random(r, 1, 2, 0.1, 1.0)],
        r,
    );
}

/// Second derivatives of smooth ops: differentiate a first-order gradient
/// and compare with finite differences of that gradient.
#[test]
fn second_order_of_smooth_ops() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let r = &mut rng;
    let cases: Vec<(&str, Box<Build>, Tensor)> = vec![
        ("softmax", Box::new(|g: &mut Graph, v: &[Var]| g.softmax_rows(v[0])), random(r, 2, 4, 0.1, 1.0)),
        ("sqrt", Box::new(|g: &mut Graph, v: &[Var]| g.sqrt(v[0])), positive(r, 2, 3)),
        ("log", Box::new(|g: &mut Graph, v: &[Var]| g.log(v[0])), positive(r, 2, 3)),
        ("recip", Box::new(|g: &mut Graph, v: &[Var]| g.recip(v[0])), positive(r, 2, 3)),
        (
            "norm",
            Box::new(|g: &mut Graph, v: &[Var]| g.row_l2_norm_eps(v[0], 1e-12)),
            random(r, 3, 4, 0.1, 1.0),
        ),
        (
            "conv_square",
            Box::new(|g: &mut Graph, v: &[Var]| {
                let u = g.unfold(v[0], 3, 3, 1)?;
                g.square(u)
            }),
            random(r, 6, 2, 0.1, 1.0),
        ),
    ];
    for (name, build, x) in cases {
        let [rows, cols] = x.shape();
        let w = random(r, rows, cols, 0.1, 1.0);
        // s(x) = ||d/dx sum(op(x) * u)||^2 weighted by w
        let s = |x: &Tensor| -> (f64, Option<Tensor>) {
            let mut g = Graph::new();
            let xv = g.param(x.clone()).unwrap();
            let out = build(&mut g, &[xv]).unwrap();
            let [orow, ocol] = g.shape(out);
            let u = g.constant(Tensor::full(orow, ocol, 0.7)).unwrap();
            let p = g.mul(out, u).unwrap();
            let f = g.sum_all(p).unwrap();
            let dx = g.backward(f, &[xv], true).unwrap()[0];
            let wv = g.constant(w.clone()).unwrap();
            let q = g.mul(dx, wv).unwrap();
            let q = g.square(q).unwrap();
            let s = g.sum_all(q).unwrap();
            let d = g.backward(s, &[xv], false).unwrap()[0];
            (g.value(s).item(), Some(g.value(d).clone()))
        };
        let (_, analytic) = s(&x);
        let analytic = analytic.unwrap();
        for i in 0..x.len() {
            let mut p = x.clone();
            p.data_mut()[i] += STEP;
            let mut m = x.clone();
            m.data_mut()[i] -= STEP;
            let numeric = (s(&p).0 - s(&m).0) / (2.0 * STEP);
            let a = analytic.data()[i];
            assert!(
                (a - numeric).abs() <= f64::max(1e-7, 1e-4 * numeric.abs()),
                "{name}[{i}]: {a} vs {numeric}"
            );
        }
    }
}

#[test]
fn norm_of_product_matches_finite_differences_exactly() {
    // root = ||w * x||_2 with no smoothing
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let w = random(&mut rng, 1, 5, 0.2, 1.0);
    let x = random(&mut rng, 1, 5, 0.2, 1.0);
    let f = |w: &Tensor| {
        let mut g = Graph::new();
        let wv = g.param(w.clone()).unwrap();
        let xv = g.constant(x.clone()).unwrap();
        let p = g.mul(wv, xv).unwrap();
        let n = g.l2_norm_eps(p, 0.0).unwrap();
        let d = g.backward(n, &[wv], false).unwrap()[0];
        (g.value(n).item(), g.value(d).clone())
    };
    let (_, grad) = f(&w);
    for i in 0..5 {
        let mut p = w.clone();
        p.data_mut()[i] += STEP;
        let mut m = w.clone();
        m.data_mut()[i] -= STEP;
        let numeric = (f(&p).0 - f(&m).0) / (2.0 * STEP);
        let rel = (grad.data()[i] - numeric).abs() / numeric.abs();
        assert!(rel <= 1e-6, "entry {i}: rel error {rel}");
    }
}

#[test]
fn gradient_norm_penalty_second_order() {
    // s(theta) = ||grad_x f(x; theta)||_2 for f = sum(leaky(x W) * v)^2 style net
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let x = random(&mut rng, 2, 3, 0.2, 1.0);
    let theta = random(&mut rng, 3, 4, 0.2, 1.0);
    let s = |theta: &Tensor| {
        let mut g = Graph::new();
        let t = g.param(theta.clone()).unwrap();
        let xv = g.param(x.clone()).unwrap();
        let h = g.matmul(xv, t).unwrap();
        let h = g.softmax_rows(h).unwrap();
        let h = g.square(h).unwrap();
        let f = g.sum_all(h).unwrap();
        let dx = g.backward(f, &[xv], true).unwrap()[0];
        let n = g.l2_norm_eps(dx, 1e-12).unwrap();
        let d = g.backward(n, &[t], false).unwrap()[0];
        (g.value(n).item(), g.value(d).clone())
    };
    let (_, grad) = s(&theta);
    for i in 0..theta.len() {
        let mut p = theta.clone();
        p.data_mut()[i] += STEP;
        let mut m = theta.clone();
        m.data_mut()[i] -= STEP;
        let numeric = (s(&p).0 - s(&m).0) / (2.0 * STEP);
        let a = grad.data()[i];
        assert!((a - numeric).abs() <= f64::max(1e-7, 1e-3 * numeric.abs()), "{i}: {a} vs {numeric}");
    }
}

#[test]
fn backward_is_linear_in_the_root() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = random(&mut rng, 2, 3, 0.2, 1.0);
    let mut g = Graph::new();
    let xv = g.param(x).unwrap();
    let a = g.square(xv).unwrap();
    let a = g.sum_all(a).unwrap();
    let b = g.softmax_rows(xv).unwrap();
    let b = g.square(b).unwrap();
    let b = g.sum_all(b).unwrap();
    let ab = g.add(a, b).unwrap();
    let ga = g.backward(a, &[xv], false).unwrap()[0];
    let gb = g.backward(b, &[xv], false).unwrap()[0];
    let gab = g.backward(ab, &[xv], false).unwrap()[0];
    let sum = g.value(ga).zip_map(g.value(gb), |p, q| p + q);
    assert!(sum.zip_map(g.value(gab), |p, q| (p - q).abs()).max_abs() < 1e-14);
}

#[test]
fn replay_is_bitwise_identical() {
    let run = || {
        let net = SurrogateNet::new(tiny_surrogate(), 1).unwrap();
        let (z, y) = tiny_pair();
        feds_core::surrogate::surrogate_loss(&z, &y, 2, &net, SurrogateLossWeights::default()).unwrap()
    };
    let (l1, g1) = run();
    let (l2, g2) = run();
    assert_eq!(l1.to_bits(), l2.to_bits());
    for (a, b) in g1.iter().zip(&g2) {
        assert!(a.data().iter().zip(b.data()).all(|(p, q)| p.to_bits() == q.to_bits()));
    }
}

fn tiny_surrogate() -> SurrogateConfig {
    SurrogateConfig {
        channels: 5,
        hidden: 6,
        embedding_dim: 8,
        ..SurrogateConfig::desk(3, 4)
    }
}

fn soft(rng: &mut ChaCha8Rng) -> CharGrid {
    let mut data: Vec<f64> = (0..12).map(|_| rng.random_range(0.05..1.0)).collect();
    for col in data.chunks_mut(3) {
        let s: f64 = col.iter().sum();
        col.iter_mut().for_each(|v| *v /= s);
    }
    CharGrid::from_columns(3, 4, data).unwrap()
}

fn tiny_pair() -> (CharGrid, CharGrid) {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let alpha = Alphabet::new("ab").unwrap();
    (soft(&mut rng), encode_one_hot("abb", &alpha, 4).unwrap())
}

fn tiny_recognizer() -> RecognizerConfig {
    RecognizerConfig {
        alphabet_size: 3,
        length: 4,
        height: 3,
        width: 8,
        channels: 3,
        layers: 2,
        kernel: 3,
        slope: 0.01,
    }
}

/// Perturbs parameter `which` of a store and evaluates `f`.
fn param_fd(
    params: &feds_core::ParamStore,
    picks: &[(usize, usize)],
    analytic: &[Tensor],
    f: &dyn Fn(&feds_core::ParamStore) -> f64,
    label: &str,
) {
    for &(k, i) in picks {
        let bump = |delta: f64| {
            let mut p = params.clone();
            p.tensors_mut().nth(k).unwrap().data_mut()[i] += delta;
            f(&p)
        };
        let numeric = (bump(STEP) - bump(-STEP)) / (2.0 * STEP);
        let a = analytic[k].data()[i];
        assert!(
            (a - numeric).abs() <= f64::max(1e-7, 1e-3 * numeric.abs()),
            "{label}: param {k}[{i}] analytic {a} numeric {numeric}"
        );
    }
}

fn picks(params: &feds_core::ParamStore, count: usize, seed: u64) -> Vec<(usize, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sizes: Vec<usize> = params.tensors().map(Tensor::len).collect();
    (0..count)
        .map(|_| {
            let k = rng.random_range(0..sizes.len());
            (k, rng.random_range(0..sizes[k]))
        })
        .collect()
}

#[test]
fn surrogate_loss_gradient_in_parameters() {
    let cfg = tiny_surrogate();
    let net = SurrogateNet::new(cfg, 4).unwrap();
    let (z, y) = tiny_pair();
    for (label, weights) in [
        ("fit", SurrogateLossWeights { w1: 1.0, w2: 0.0 }),
        ("penalty", SurrogateLossWeights { w1: 1e-9, w2: 1.0 }),
        ("combined", SurrogateLossWeights::default()),
    ] {
        let (_, grads) = feds_core::surrogate::surrogate_loss(&z, &y, 2, &net, weights).unwrap();
        let f = |p: &feds_core::ParamStore| {
            let n = SurrogateNet::from_params(cfg, p.clone()).unwrap();
            feds_core::surrogate::surrogate_loss(&z, &y, 2, &n, weights).unwrap().0
        };
        let mut all: Vec<(usize, usize)> = picks(net.params(), 10, 8);
        // every tensor at least once
        all.extend((0..net.params().len()).map(|k| (k, 0)));
        param_fd(net.params(), &all, &grads, &f, label);
    }
}

#[test]
fn surrogate_distance_gradient_in_grid_and_parameters() {
    let cfg = tiny_surrogate();
    let net = SurrogateNet::new(cfg, 6).unwrap();
    let (z, y) = tiny_pair();
    let dist = |p: &feds_core::ParamStore, zt: &Tensor| {
        let n = SurrogateNet::from_params(cfg, p.clone()).unwrap();
        let mut g = Graph::new();
        let b = n.bind(&mut g, true).unwrap();
        let zv = g.param(zt.clone()).unwrap();
        let yv = g.constant(y.to_tensor()).unwrap();
        let d = b.distance(&mut g, zv, yv).unwrap();
        let d = g.sum_all(d).unwrap();
        let mut wrt = b.params().to_vec();
        wrt.push(zv);
        let grads = g.backward(d, &wrt, false).unwrap();
        (g.value(d).item(), grads.iter().map(|v| g.value(*v).clone()).collect::<Vec<_>>())
    };
    let zt = z.to_tensor();
    let (_, grads) = dist(net.params(), &zt);
    let all: Vec<(usize, usize)> = picks(net.params(), 20, 2);
    param_fd(net.params(), &all, &grads, &|p| dist(p, &zt).0, "distance");
    let dz = grads.last().unwrap();
    for i in 0..zt.len() {
        let mut p = zt.clone();
        p.data_mut()[i] += STEP;
        let mut m = zt.clone();
        m.data_mut()[i] -= STEP;
        let numeric = (dist(net.params(), &p).0 - dist(net.params(), &m).0) / (2.0 * STEP);
        assert!((dz.data()[i] - numeric).abs() <= f64::max(1e-7, 1e-3 * numeric.abs()));
    }
}

#[test]
fn cross_entropy_gradient_in_recognizer_parameters() {
    let cfg = tiny_recognizer();
    let net = RecognizerNet::new(cfg, 2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let images: Tensor = positive(&mut rng, 16, 3).map(|v| v.min(1.0));
    let alpha = Alphabet::new("ab").unwrap();
    let y0 = encode_one_hot("ab", &alpha, 4).unwrap().to_tensor();
    let y1 = encode_one_hot("bba", &alpha, 4).unwrap().to_tensor();
    let y = Tensor::vstack(&[&y0, &y1]).unwrap();
    let ce = |p: &feds_core::ParamStore| {
        let n = RecognizerNet::from_params(cfg, p.clone()).unwrap();
        let mut g = Graph::new();
        let b = n.bind(&mut g, true).unwrap();
        let x = g.constant(images.clone()).unwrap();
        let yv = g.constant(y.clone()).unwrap();
        let z = b.forward(&mut g, x).unwrap();
        let l = ce_loss(&mut g, z, yv, 4).unwrap();
        let grads = g.backward(l, b.params(), false).unwrap();
        (g.value(l).item(), grads.iter().map(|v| g.value(*v).clone()).collect::<Vec<_>>())
    };
    let (_, grads) = ce(net.params());
    let mut all = picks(net.params(), 20, 5);
    all.extend((0..net.params().len()).map(|k| (k, 0)));
    param_fd(net.params(), &all, &grads, &|p| ce(p).0, "ce");
}
