//! Test-only oracles. Nothing here calls into the crate's numerics except to
//! read parameters and data.
#![allow(dead_code)]

use hybrid_cd::model::{generate_dataset, init_params, Dataset, NetworkParams, RngSeed};
use ndarray::Axis;

/// Double-double number: `hi + lo` with `|lo| <= ulp(hi)/2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dd {
    pub hi: f64,
    pub lo: f64,
}

fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

fn quick_two_sum(a: f64, b: f64) -> Dd {
    let s = a + b;
    Dd {
        hi: s,
        lo: b - (s - a),
    }
}

fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

impl Dd {
    pub const ZERO: Dd = Dd { hi: 0.0, lo: 0.0 };

    pub fn from(v: f64) -> Dd {
        Dd { hi: v, lo: 0.0 }
    }

    pub fn add(self, o: Dd) -> Dd {
        let (s, e) = two_sum(self.hi, o.hi);
        let (t, f) = two_sum(self.lo, o.lo);
        let r = quick_two_sum(s, e + t);
        quick_two_sum(r.hi, r.lo + f)
    }

    pub fn neg(self) -> Dd {
        Dd {
            hi: -self.hi,
            lo: -self.lo,
        }
    }

    pub fn sub(self, o: Dd) -> Dd {
        self.add(o.neg())
    }

    pub fn mul(self, o: Dd) -> Dd {
        let (p, e) = two_prod(self.hi, o.hi);
        quick_two_sum(p, e + (self.hi * o.lo + self.lo * o.hi))
    }

    pub fn div(self, o: Dd) -> Dd {
        let q1 = self.hi / o.hi;
        let r = self.sub(o.mul(Dd::from(q1)));
        let q2 = r.hi / o.hi;
        let r = r.sub(o.mul(Dd::from(q2)));
        let q3 = r.hi / o.hi;
        quick_two_sum(q1, q2).add(Dd::from(q3))
    }

    pub fn sqrt_of(v: f64) -> Dd {
        let s = v.sqrt();
        let (p, e) = two_prod(s, s);
        let r = ((v - p) - e) / (2.0 * s);
        quick_two_sum(s, r)
    }

    pub fn is_positive(self) -> bool {
        self.hi > 0.0 || (self.hi == 0.0 && self.lo > 0.0)
    }

    pub fn to_f64(self) -> f64 {
        self.hi + self.lo
    }
}

/// Forward pass by direct per-term summation in double-double.
pub fn forward_dd(
    w: &ndarray::Array2<f64>,
    a: &ndarray::Array1<f64>,
    x: ndarray::ArrayView1<f64>,
) -> Dd {
    let mut sum = Dd::ZERO;
    for (row, &ar) in w.axis_iter(Axis(0)).zip(a.iter()) {
        let mut z = Dd::ZERO;
        for (&wj, &xj) in row.iter().zip(x.iter()) {
            z = z.add(Dd::from(wj).mul(Dd::from(xj)));
        }
        if z.is_positive() {
            sum = sum.add(Dd::from(ar).mul(z));
        }
    }
    sum.div(Dd::sqrt_of(w.nrows() as f64))
}

pub fn loss_dd(w: &ndarray::Array2<f64>, a: &ndarray::Array1<f64>, data: &Dataset) -> Dd {
    let mut total = Dd::ZERO;
    for (x, &y) in data.features().axis_iter(Axis(0)).zip(data.labels().iter()) {
        let r = forward_dd(w, a, x).sub(Dd::from(y));
        total = total.add(r.mul(r));
    }
    total.mul(Dd::from(0.5))
}

/// Central difference of the loss in coordinate `(r, j)` with step `h`,
/// evaluated in double-double.
pub fn central_difference(
    params: &NetworkParams,
    data: &Dataset,
    r: usize,
    j: usize,
    h: f64,
) -> f64 {
    let mut plus = params.weights().clone();
    let mut minus = params.weights().clone();
    plus[[r, j]] += h;
    minus[[r, j]] -= h;
    let span = Dd::from(plus[[r, j]]).sub(Dd::from(minus[[r, j]]));
    let lp = loss_dd(&plus, params.output(), data);
    let lm = loss_dd(&minus, params.output(), data);
    lp.sub(lm).div(span).to_f64()
}

/// Central differences of the loss, evaluated in double-double.
///
/// Shifting `w[r, j]` only moves neuron `r`, so each sample's output is kept
/// as a sum of per-neuron terms and only term `r` is recomputed per probe.
pub struct FiniteDifferences<'a> {
    params: &'a NetworkParams,
    data: &'a Dataset,
    /// `z[r][s]`
    z: Vec<Vec<Dd>>,
    /// `a_r · relu(z[r][s])`
    terms: Vec<Vec<Dd>>,
    /// `Σ_r terms[r][s]`
    sums: Vec<Dd>,
}

impl<'a> FiniteDifferences<'a> {
    pub fn new(params: &'a NetworkParams, data: &'a Dataset) -> Self {
        let w = params.weights();
        let a = params.output();
        let mut z = Vec::with_capacity(params.m());
        let mut terms = Vec::with_capacity(params.m());
        for (row, &ar) in w.axis_iter(Axis(0)).zip(a.iter()) {
            let zr: Vec<Dd> = data
                .features()
                .axis_iter(Axis(0))
                .map(|x| {
                    row.iter().zip(x.iter()).fold(Dd::ZERO, |acc, (&wj, &xj)| {
                        acc.add(Dd::from(wj).mul(Dd::from(xj)))
                    })
                })
                .collect();
            terms.push(zr.iter().map(|&v| neuron_term(ar, v)).collect());
            z.push(zr);
        }
        let sums = (0..data.n())
            .map(|s| {
                terms
                    .iter()
                    .fold(Dd::ZERO, |acc, t: &Vec<Dd>| acc.add(t[s]))
            })
            .collect();
        Self {
            params,
            data,
            z,
            terms,
            sums,
        }
    }

    fn loss_shifted(&self, r: usize, j: usize, shift: f64) -> Dd {
        let ar = self.params.output()[r];
        let root = Dd::sqrt_of(self.params.m() as f64);
        let mut total = Dd::ZERO;
        for s in 0..self.data.n() {
            let x = self.data.features()[[s, j]];
            let z = self.z[r][s].add(Dd::from(shift).mul(Dd::from(x)));
            let out = self.sums[s]
                .sub(self.terms[r][s])
                .add(neuron_term(ar, z))
                .div(root);
            let res = out.sub(Dd::from(self.data.labels()[s]));
            total = total.add(res.mul(res));
        }
        total.mul(Dd::from(0.5))
    }

    /// Same quantity as [`central_difference`].
    pub fn at(&self, r: usize, j: usize, h: f64) -> f64 {
        let w = self.params.weights()[[r, j]];
        let (plus, minus) = (w + h, w - h);
        let span = Dd::from(plus).sub(Dd::from(minus));
        let lp = self.loss_shifted(r, j, plus - w);
        let lm = self.loss_shifted(r, j, minus - w);
        lp.sub(lm).div(span).to_f64()
    }
}

fn neuron_term(a: f64, z: Dd) -> Dd {
    if z.is_positive() {
        Dd::from(a).mul(z)
    } else {
        Dd::ZERO
    }
}

/// Relative error, 0 when both are exactly 0.
pub fn rel_err(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

pub fn instance(n: usize, p: usize, m: usize, seed: u64) -> (NetworkParams, Dataset) {
    (
        init_params(m, p, RngSeed(seed)).unwrap(),
        generate_dataset(n, p, RngSeed(seed)).unwrap(),
    )
}

/// Smallest `|w_r · X_s|`.
pub fn min_abs_preactivation(params: &NetworkParams, data: &Dataset) -> f64 {
    let z = params.weights().dot(&data.features().t());
    z.iter().fold(f64::INFINITY, |acc, v| acc.min(v.abs()))
}

/// First seed at or after `start` whose instance keeps every preactivation
/// at least `margin` away from the ReLU kink.
pub fn kink_free_instance(
    n: usize,
    p: usize,
    m: usize,
    start: u64,
    margin: f64,
) -> (NetworkParams, Dataset, u64) {
    (start..start + 10_000)
        .map(|seed| {
            let (params, data) = instance(n, p, m, seed);
            (params, data, seed)
        })
        .find(|(params, data, _)| min_abs_preactivation(params, data) > margin)
        .expect("a kink-free seed")
}
