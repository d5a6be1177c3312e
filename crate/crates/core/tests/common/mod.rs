//! Shared fixtures and reference implementations for the integration tests.
//! Everything here is written independently of the library code it checks.

#![allow(dead_code)]

use adfuse::bundle::{EmbeddingBundle, TokenLayerTensor};
use adfuse::features::{Class, DesignMatrix};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Hand-annotated utterances and the tokens worked out for each by hand.
pub const CORPUS: &[(&str, &[&str])] = &[
    ("the boy <is is> [/] falling .", &["the", "boy", "is", "is", "falling"]),
    ("&-um the (be)cause@u xxx .", &["the", "because"]),
    ("", &[]),
    ("the [/] the boy is on the stool .", &["the", "the", "boy", "is", "on", "the", "stool"]),
    ("<the lady> [//] the mother is washing dishes .", &["the", "lady", "the", "mother", "is", "washing", "dishes"]),
    ("she [+ exc] is drying .", &["she", "is", "drying"]),
    ("he took [: takes] [*] the cookie .", &["he", "took", "the", "cookie"]),
    ("&uh the water is &+sp spilling .", &["the", "water", "is", "spilling"]),
    ("&=laughs oh my .", &["oh", "my"]),
    ("<&uh the> [/] the curtains .", &["the", "the", "curtains"]),
    ("the (.) boy (..) is (...) reaching .", &["the", "boy", "is", "reaching"]),
    ("(be)cause she's (a)sleep .", &["because", "she's", "asleep"]),
    ("runnin(g) out .", &["running", "out"]),
    ("gaga@c is a word@s:spa .", &["gaga", "is", "a", "word"]),
    ("xxx the yyy sink www .", &["the", "sink"]),
    ("XXX is Yyy here ?", &["is", "here"]),
    ("the boy is falling !", &["the", "boy", "is", "falling"]),
    ("what is she doing ?", &["what", "is", "she", "doing"]),
    ("The Boy IS Falling .", &["the", "boy", "is", "falling"]),
    ("he's got the jar , and the stool .", &["he's", "got", "the", "jar", "and", "the", "stool"]),
    ("the girl +...", &["the", "girl"]),
    ("+< yes .", &["yes"]),
    ("well +/.", &["well"]),
    ("cookie_jar is up there .", &["cookie", "jar", "is", "up", "there"]),
    ("ice+cream .", &["ice", "cream"]),
    ("the mother 0is washing .", &["the", "mother", "washing"]),
    ("the boy \u{15}1234_5678\u{15} fell .", &["the", "boy", "fell"]),
    ("<the boy> [/] <the boy> [//] the kid .", &["the", "boy", "the", "boy", "the", "kid"]),
    ("&-uh &-um .", &[]),
    ("xxx .", &[]),
    ("the (1.5) sink is overflowing .", &["the", "sink", "is", "overflowing"]),
    ("she's reaching up [>] for the cupboard .", &["she's", "reaching", "up", "for", "the", "cupboard"]),
    ("the boy's falling (.) &-uh off the stool [+ gram] .", &["the", "boy's", "falling", "off", "the", "stool"]),
    ("mm-hmm .", &["mm-hmm"]),
    ("'cause the dog „ .", &["cause", "the", "dog"]),
    ("the <water's> [/] water's running .", &["the", "water's", "water's", "running"]),
    ("okay@i .", &["okay"]),
    ("DISHES in the Sink .", &["dishes", "in", "the", "sink"]),
];

pub fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// A small random binary problem: 2 to 20 rows, 2 to 5 columns, both classes
/// present. Some instances are separable, some overlap.
pub fn random_problem(rng: &mut ChaCha8Rng) -> DesignMatrix {
    let n = rng.random_range(2..=20);
    let d = rng.random_range(2..=5);
    let shift = rng.random_range(0.0..3.0);
    let direction: Vec<f64> = (0..d).map(|_| gaussian(rng)).collect();
    let mut labels: Vec<Class> = (0..n)
        .map(|_| if rng.random::<bool>() { Class::Ad } else { Class::Control })
        .collect();
    labels[0] = Class::Ad;
    labels[1] = Class::Control;
    let rows = labels
        .iter()
        .map(|l| direction.iter().map(|u| l.sign() * shift * u / 2.0 + gaussian(rng)).collect())
        .collect();
    let ids: Vec<String> = (0..n).map(|i| format!("r{i}")).collect();
    DesignMatrix::new(ids.clone(), ids, rows, labels).unwrap()
}

pub struct QpSolution {
    /// Weights followed by the bias, in the model's units.
    pub params: Vec<f64>,
    pub alpha: Vec<f64>,
    pub primal: f64,
    pub dual: f64,
}

impl QpSolution {
    pub fn gap(&self) -> f64 {
        self.primal - self.dual
    }
}

/// `1/2 |w|^2 + C * sum hinge` over bias-augmented rows.
pub fn primal_objective(rows: &[Vec<f64>], y: &[f64], w_aug: &[f64], c: f64, bias_scale: f64) -> f64 {
    let d = w_aug.len() - 1;
    let hinge: f64 = rows
        .iter()
        .zip(y)
        .map(|(x, yi)| {
            let f: f64 = x.iter().zip(&w_aug[..d]).map(|(a, b)| a * b).sum::<f64>() + w_aug[d] * bias_scale;
            (1.0 - yi * f).max(0.0)
        })
        .sum();
    0.5 * w_aug.iter().map(|v| v * v).sum::<f64>() + c * hinge
}

/// Solves the box-constrained SVM dual with a primal-dual interior point
/// method, then reports primal and dual objectives so the duality gap can
/// certify the answer.
pub fn qp_oracle(m: &DesignMatrix, c: f64, bias_scale: f64) -> QpSolution {
    let n = m.len();
    let d = m.width();
    let y: Vec<f64> = m.labels.iter().map(|l| l.sign()).collect();
    let xa = DMatrix::from_fn(n, d + 1, |i, j| if j < d { m.rows[i][j] } else { bias_scale });
    let gram = &xa * xa.transpose();
    let q = DMatrix::from_fn(n, n, |i, j| y[i] * y[j] * gram[(i, j)]);
    let e = DVector::from_element(n, 1.0);

    let mut a = DVector::from_element(n, c / 2.0);
    let mut z = DVector::from_element(n, 1.0);
    let mut u = DVector::from_element(n, 1.0);
    for _ in 0..200 {
        let slack = a.map(|v| c - v);
        let mu = (a.dot(&z) + slack.dot(&u)) / (2.0 * n as f64);
        let r = &q * &a - &e - &z + &u;
        if mu < 1e-14 * c.max(1.0) && r.amax() < 1e-12 {
            break;
        }
        let sigma = 0.1;
        let mut h = q.clone();
        for i in 0..n {
            h[(i, i)] += z[i] / a[i] + u[i] / slack[i];
        }
        let rhs = DVector::from_fn(n, |i, _| {
            -r[i] + (sigma * mu / a[i] - z[i]) - (sigma * mu / slack[i] - u[i])
        });
        // Near the boundary the barrier terms dominate and the system gets
        // badly scaled, so use pivoted LU rather than Cholesky.
        let Some(da) = h.lu().solve(&rhs) else {
            break;
        };
        let dz = DVector::from_fn(n, |i, _| (sigma * mu - a[i] * z[i] - z[i] * da[i]) / a[i]);
        let du = DVector::from_fn(n, |i, _| (sigma * mu - slack[i] * u[i] + u[i] * da[i]) / slack[i]);

        let mut step = 1.0f64;
        for i in 0..n {
            if da[i] < 0.0 {
                step = step.min(-a[i] / da[i]);
            }
            if da[i] > 0.0 {
                step = step.min(slack[i] / da[i]);
            }
            if dz[i] < 0.0 {
                step = step.min(-z[i] / dz[i]);
            }
            if du[i] < 0.0 {
                step = step.min(-u[i] / du[i]);
            }
        }
        let step = (0.99 * step).min(1.0);
        a += step * &da;
        z += step * &dz;
        u += step * &du;
    }

    let alpha: Vec<f64> = a.iter().map(|v| v.clamp(0.0, c)).collect();
    let mut w_aug = vec![0.0; d + 1];
    for i in 0..n {
        for j in 0..=d {
            w_aug[j] += alpha[i] * y[i] * xa[(i, j)];
        }
    }
    let dual = alpha.iter().sum::<f64>() - 0.5 * w_aug.iter().map(|v| v * v).sum::<f64>();
    let primal = primal_objective(&m.rows, &y, &w_aug, c, bias_scale);
    let mut params = w_aug[..d].to_vec();
    params.push(w_aug[d] * bias_scale);
    QpSolution {
        params,
        alpha,
        primal,
        dual,
    }
}

/// Layer-mean of one token written as plain nested loops over a
/// `[layer][dim]` view.
pub fn token_loop(stack: &[Vec<f32>], first: usize, last: usize) -> Vec<f64> {
    let dim = stack[0].len();
    let mut out = vec![0.0; dim];
    for j in 0..dim {
        let mut sum = 0.0;
        for layer in stack.iter().take(last + 1).skip(first) {
            sum += layer[j] as f64;
        }
        out[j] = sum / (last - first + 1) as f64;
    }
    out
}

pub fn sentence_loop(tokens: &[Vec<f64>]) -> Vec<f64> {
    let dim = tokens[0].len();
    let mut out = vec![0.0; dim];
    for j in 0..dim {
        let mut sum = 0.0;
        for t in tokens {
            sum += t[j];
        }
        out[j] = sum / tokens.len() as f64;
    }
    out
}

/// `[token][layer][dim]` values drawn from a wide range of magnitudes.
pub fn random_stacks(rng: &mut ChaCha8Rng, n_tokens: usize, n_layers: usize, dim: usize) -> Vec<Vec<Vec<f32>>> {
    let scale = 10f64.powi(rng.random_range(-3..=3));
    (0..n_tokens)
        .map(|_| {
            (0..n_layers)
                .map(|_| (0..dim).map(|_| (scale * gaussian(rng)) as f32).collect())
                .collect()
        })
        .collect()
}

fn random_f32(rng: &mut ChaCha8Rng) -> f32 {
    match rng.random_range(0..6) {
        0 => 0.0,
        1 => -0.0,
        2 => f32::MIN_POSITIVE / 2.0,
        3 => f32::from_bits(rng.random::<u32>() & 0x7f7f_ffff),
        _ => gaussian(rng) as f32,
    }
}

/// Random bundle; shapes go down to one sentence with one token, ids and
/// names include non-ASCII text.
pub fn random_bundle(rng: &mut ChaCha8Rng) -> EmbeddingBundle {
    let ids = ["S001", "adrs-117", "sujet_é", "被験者", "x"];
    let mut b = EmbeddingBundle::new(ids[rng.random_range(0..ids.len())]);
    if rng.random_range(0..4) > 0 {
        let n_layers = rng.random_range(1..=13);
        let dim = rng.random_range(1..=8);
        let mut t = TokenLayerTensor::new(n_layers, dim);
        for _ in 0..rng.random_range(1..=4) {
            let n_tokens = rng.random_range(1..=3);
            let values = (0..n_tokens * n_layers * dim).map(|_| random_f32(rng)).collect();
            t.push_flat(n_tokens, values).unwrap();
        }
        b.tensor = Some(t);
    }
    let names = ["xvec_sre", "xvec_vox", "ivec_vox", "égal", "x"];
    for _ in 0..rng.random_range(0..=3) {
        let name = names[rng.random_range(0..names.len())];
        let dim = rng.random_range(0..=16);
        b.vectors.insert(name.into(), (0..dim).map(|_| random_f32(rng)).collect());
    }
    if b.tensor.is_none() && b.vectors.is_empty() {
        b.vectors.insert("x".into(), vec![1.0]);
    }
    b
}

/// Compares bundles by bit pattern so `-0.0` and `0.0` count as different.
pub fn bit_identical(a: &EmbeddingBundle, b: &EmbeddingBundle) -> bool {
    let bits = |v: &[f32]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    let tensors_match = match (&a.tensor, &b.tensor) {
        (None, None) => true,
        (Some(x), Some(y)) => {
            x.n_layers == y.n_layers
                && x.dim == y.dim
                && x.sentences.len() == y.sentences.len()
                && x.sentences
                    .iter()
                    .zip(&y.sentences)
                    .all(|(s, t)| s.n_tokens == t.n_tokens && bits(&s.values) == bits(&t.values))
        }
        _ => false,
    };
    a.subject_id == b.subject_id
        && tensors_match
        && a.vectors.len() == b.vectors.len()
        && a.vectors
            .iter()
            .zip(&b.vectors)
            .all(|((ka, va), (kb, vb))| ka == kb && bits(va) == bits(vb))
}
