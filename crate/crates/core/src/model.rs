//! Two-layer ReLU regression network, squared-error loss and its analytic
//! gradient with respect to the first layer, plus seeded synthetic data.
//!
//! The network is `f(x) = (1/√m) Σ_r a_r · max(w_r·x, 0)`. Only the first
//! layer `W` is ever trained; the output weights `A` stay at their
//! initialization.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{StandardNormal, Uniform};

use crate::error::{Error, Result};

/// Tolerance for the unit-norm check on feature rows.
pub const UNIT_NORM_TOL: f64 = 1e-12;

const DATA_STREAM: u64 = 1;
const PARAM_STREAM: u64 = 2;

/// Seed for every random draw in an experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RngSeed(pub u64);

impl RngSeed {
    fn rng(self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.0);
        rng.set_stream(stream);
        rng
    }
}

#[inline]
pub(crate) fn relu(z: f64) -> f64 {
    if z > 0.0 {
        z
    } else {
        0.0
    }
}

/// Training samples: `n` unit-norm feature rows and one scalar label each.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Array2<f64>,
    labels: Array1<f64>,
}

impl Dataset {
    /// Validates shapes, finiteness and the unit-norm row invariant.
    pub fn new(features: Array2<f64>, labels: Array1<f64>) -> Result<Self> {
        let (n, p) = features.dim();
        if n == 0 || p == 0 {
            return Err(Error::invalid(format!(
                "dataset needs n >= 1 and p >= 1, got n={n}, p={p}"
            )));
        }
        if labels.len() != n {
            return Err(Error::invalid(format!(
                "{} labels for {n} feature rows",
                labels.len()
            )));
        }
        if features.iter().chain(labels.iter()).any(|v| !v.is_finite()) {
            return Err(Error::invalid("dataset contains non-finite values"));
        }
        for (i, row) in features.axis_iter(Axis(0)).enumerate() {
            let norm = row.dot(&row).sqrt();
            if (norm - 1.0).abs() > UNIT_NORM_TOL {
                return Err(Error::invalid(format!(
                    "feature row {i} has norm {norm}, expected 1"
                )));
            }
        }
        Ok(Self { features, labels })
    }

    pub fn n(&self) -> usize {
        self.features.nrows()
    }

    pub fn p(&self) -> usize {
        self.features.ncols()
    }

    /// `n × p`, row `i` is sample `i`.
    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn labels(&self) -> &Array1<f64> {
        &self.labels
    }

    /// Plain-text form: header `n p`, then `n` feature lines, then `n`
    /// label lines, all values at 17 significant digits.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "{} {}", self.n(), self.p()).unwrap();
        for row in self.features.axis_iter(Axis(0)) {
            let mut first = true;
            for v in row {
                if !first {
                    out.push(' ');
                }
                first = false;
                write!(out, "{v:.16e}").unwrap();
            }
            out.push('\n');
        }
        for y in &self.labels {
            writeln!(out, "{y:.16e}").unwrap();
        }
        out
    }

    pub fn from_text(text: &str, path: &Path) -> Result<Self> {
        let parse_err = |line: usize, message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));

        let (hline, header) = lines
            .next()
            .ok_or_else(|| parse_err(1, "missing `n p` header".into()))?;
        let dims: Vec<usize> = header
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| parse_err(hline, format!("bad header: {e}")))?;
        let [n, p] = dims[..] else {
            return Err(parse_err(hline, "header must be `n p`".into()));
        };

        let mut features = Array2::zeros((n, p));
        for i in 0..n {
            let (ln, line) = lines
                .next()
                .ok_or_else(|| parse_err(hline + 1 + i, "missing feature row".into()))?;
            let mut count = 0;
            for (j, tok) in line.split_whitespace().enumerate() {
                if j >= p {
                    return Err(parse_err(ln, format!("more than {p} values")));
                }
                features[[i, j]] = tok
                    .parse()
                    .map_err(|e| parse_err(ln, format!("bad value `{tok}`: {e}")))?;
                count += 1;
            }
            if count != p {
                return Err(parse_err(ln, format!("expected {p} values, found {count}")));
            }
        }

        let mut labels = Array1::zeros(n);
        for i in 0..n {
            let (ln, line) = lines
                .next()
                .ok_or_else(|| parse_err(hline + 1 + n + i, "missing label".into()))?;
            let tok = line.trim();
            labels[i] = tok
                .parse()
                .map_err(|e| parse_err(ln, format!("bad label `{tok}`: {e}")))?;
        }
        if let Some((ln, extra)) = lines.find(|(_, l)| !l.trim().is_empty()) {
            return Err(parse_err(ln, format!("trailing content `{extra}`")));
        }

        Self::new(features, labels)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text, path)
    }
}

/// First-layer weights `W` (`m × p`) and output weights `A` (`m`).
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    weights: Array2<f64>,
    output: Array1<f64>,
}

impl NetworkParams {
    pub fn new(weights: Array2<f64>, output: Array1<f64>) -> Result<Self> {
        let (m, p) = weights.dim();
        if m == 0 || p == 0 {
            return Err(Error::invalid(format!(
                "network needs m >= 1 and p >= 1, got m={m}, p={p}"
            )));
        }
        if output.len() != m {
            return Err(Error::invalid(format!(
                "{} output weights for {m} neurons",
                output.len()
            )));
        }
        if !Self::all_finite(&weights, &output) {
            return Err(Error::invalid("parameters contain non-finite values"));
        }
        Ok(Self { weights, output })
    }

    fn all_finite(weights: &Array2<f64>, output: &Array1<f64>) -> bool {
        weights.iter().chain(output.iter()).all(|v| v.is_finite())
    }

    pub fn m(&self) -> usize {
        self.weights.nrows()
    }

    pub fn p(&self) -> usize {
        self.weights.ncols()
    }

    /// `1/√m`, always derived from the current shape.
    pub fn scale(&self) -> f64 {
        1.0 / (self.m() as f64).sqrt()
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    pub fn output(&self) -> &Array1<f64> {
        &self.output
    }

    /// Same output layer, new first layer. Fails with
    /// [`Error::Diverged`] if the new weights are not finite.
    pub fn with_weights(&self, weights: Array2<f64>) -> Result<Self> {
        if weights.dim() != self.weights.dim() {
            return Err(Error::invalid("weight matrix shape changed"));
        }
        if weights.iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged {
                epoch: 0,
                what: "parameters",
            });
        }
        Ok(Self {
            weights,
            output: self.output.clone(),
        })
    }

    pub(crate) fn check_compatible(&self, data: &Dataset) -> Result<()> {
        if self.p() != data.p() {
            return Err(Error::invalid(format!(
                "network expects p={}, dataset has p={}",
                self.p(),
                data.p()
            )));
        }
        Ok(())
    }
}

/// `n` points uniform on the unit sphere in `R^p` (normalized Gaussian
/// vectors) with standard Gaussian labels.
pub fn generate_dataset(n: usize, p: usize, seed: RngSeed) -> Result<Dataset> {
    if n == 0 || p == 0 {
        return Err(Error::invalid(format!(
            "generate_dataset needs n >= 1 and p >= 1, got n={n}, p={p}"
        )));
    }
    let mut rng = seed.rng(DATA_STREAM);
    let mut features = Array2::zeros((n, p));
    for mut row in features.axis_iter_mut(Axis(0)) {
        loop {
            row.iter_mut()
                .for_each(|v| *v = rng.sample::<f64, _>(StandardNormal));
            let norm = row.dot(&row).sqrt();
            if norm > 0.0 {
                row.mapv_inplace(|v| v / norm);
                break;
            }
        }
    }
    let labels = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    Dataset::new(features, labels)
}

/// `W` entries i.i.d. `N(0, 1)`, `A` entries i.i.d. `Uniform[-1, 1]`.
pub fn init_params(m: usize, p: usize, seed: RngSeed) -> Result<NetworkParams> {
    if m == 0 || p == 0 {
        return Err(Error::invalid(format!(
            "init_params needs m >= 1 and p >= 1, got m={m}, p={p}"
        )));
    }
    let mut rng = seed.rng(PARAM_STREAM);
    let weights = Array2::from_shape_simple_fn((m, p), || rng.sample(StandardNormal));
    let unit = Uniform::new_inclusive(-1.0, 1.0).expect("valid bounds");
    let output = (0..m).map(|_| rng.sample(unit)).collect();
    NetworkParams::new(weights, output)
}

pub fn forward(params: &NetworkParams, x: ArrayView1<f64>) -> Result<f64> {
    if x.len() != params.p() {
        return Err(Error::invalid(format!(
            "input has {} features, network expects {}",
            x.len(),
            params.p()
        )));
    }
    let sum: f64 = params
        .weights
        .axis_iter(Axis(0))
        .zip(params.output.iter())
        .map(|(w, &a)| a * relu(w.dot(&x)))
        .sum();
    Ok(params.scale() * sum)
}

/// Preactivations `Z[r, s] = w_r · X_s`, shape `m × n`.
pub(crate) fn preactivations(params: &NetworkParams, data: &Dataset) -> Array2<f64> {
    params.weights.dot(&data.features.t())
}

/// Predictions for every sample from precomputed preactivations.
pub(crate) fn predictions(params: &NetworkParams, z: &Array2<f64>) -> Array1<f64> {
    let scale = params.scale();
    let mut preds = Array1::zeros(z.ncols());
    for (zr, &a) in z.axis_iter(Axis(0)).zip(params.output.iter()) {
        for (pred, &zrs) in preds.iter_mut().zip(zr.iter()) {
            *pred += a * relu(zrs);
        }
    }
    preds.mapv_inplace(|v| scale * v);
    preds
}

pub(crate) fn half_sum_squares(residuals: &Array1<f64>) -> f64 {
    0.5 * residuals.iter().map(|r| r * r).sum::<f64>()
}

/// Gradient of the loss w.r.t. `W` given preactivations and residuals.
/// Uses the subgradient 0 at a zero preactivation.
pub(crate) fn gradient_from_parts(
    params: &NetworkParams,
    data: &Dataset,
    z: &Array2<f64>,
    residuals: &Array1<f64>,
) -> Array2<f64> {
    let scale = params.scale();
    let mut gated = Array2::zeros(z.dim());
    for ((mut g, zr), &a) in gated
        .axis_iter_mut(Axis(0))
        .zip(z.axis_iter(Axis(0)))
        .zip(params.output.iter())
    {
        let coef = a * scale;
        for ((gs, &zrs), &res) in g.iter_mut().zip(zr.iter()).zip(residuals.iter()) {
            *gs = if zrs > 0.0 { coef * res } else { 0.0 };
        }
    }
    gated.dot(&data.features)
}

/// `½ Σ_i (f(X_i) − y_i)²`.
pub fn loss(params: &NetworkParams, data: &Dataset) -> Result<f64> {
    params.check_compatible(data)?;
    let z = preactivations(params, data);
    let residuals = predictions(params, &z) - data.labels();
    Ok(half_sum_squares(&residuals))
}

/// `∂L/∂W`, shape `m × p`.
pub fn gradient(params: &NetworkParams, data: &Dataset) -> Result<Array2<f64>> {
    params.check_compatible(data)?;
    let z = preactivations(params, data);
    let residuals = predictions(params, &z) - data.labels();
    Ok(gradient_from_parts(params, data, &z, &residuals))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn tiny() -> (NetworkParams, Dataset) {
        let s = 0.5f64.sqrt();
        let data = Dataset::new(array![[1.0, 0.0], [s, -s]], array![0.3, -1.2]).unwrap();
        let params =
            NetworkParams::new(array![[0.4, -0.7], [1.1, 0.2]], array![0.9, -0.5]).unwrap();
        (params, data)
    }

    #[test]
    fn unit_sphere_in_one_dimension_is_plus_minus_one() {
        for seed in 0..20 {
            let d = generate_dataset(1, 1, RngSeed(seed)).unwrap();
            let x = d.features()[[0, 0]];
            assert!(x == 1.0 || x == -1.0, "got {x}");
        }
    }

    #[test]
    fn generated_rows_are_unit_norm() {
        let d = generate_dataset(10, 1000, RngSeed(7)).unwrap();
        assert_eq!(d.features().dim(), (10, 1000));
        for row in d.features().axis_iter(Axis(0)) {
            assert!((row.dot(&row).sqrt() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_dataset(10, 1000, RngSeed(3)).unwrap();
        let b = generate_dataset(10, 1000, RngSeed(3)).unwrap();
        assert_eq!(a.to_text(), b.to_text());
        let c = generate_dataset(10, 1000, RngSeed(4)).unwrap();
        assert_ne!(a, c);
        assert_eq!(
            init_params(4, 3, RngSeed(3)).unwrap(),
            init_params(4, 3, RngSeed(3)).unwrap()
        );
    }

    #[test]
    fn zero_sizes_rejected() {
        assert!(matches!(
            generate_dataset(0, 3, RngSeed(0)),
            Err(Error::InvalidArgument(_))
        ));
        assert!(matches!(
            generate_dataset(3, 0, RngSeed(0)),
            Err(Error::InvalidArgument(_))
        ));
        assert!(matches!(
            init_params(0, 3, RngSeed(0)),
            Err(Error::InvalidArgument(_))
        ));
        assert!(matches!(
            init_params(3, 0, RngSeed(0)),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn init_moments() {
        let params = init_params(1000, 1000, RngSeed(11)).unwrap();
        let w = params.weights();
        let count = w.len() as f64;
        let mean = w.sum() / count;
        let var = w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / count;
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((var - 1.0).abs() < 0.05, "var {var}");

        let small = init_params(4, 3, RngSeed(11)).unwrap();
        assert!(small.output().iter().all(|a| (-1.0..=1.0).contains(a)));
        assert_eq!(small.scale(), 0.5);
    }

    #[test]
    fn forward_edge_cases() {
        let zero = NetworkParams::new(Array2::zeros((3, 2)), array![1.0, -2.0, 0.5]).unwrap();
        assert_eq!(forward(&zero, array![0.6, 0.8].view()).unwrap(), 0.0);

        let single = NetworkParams::new(array![[1.0, 0.0]], array![1.0]).unwrap();
        assert_eq!(forward(&single, array![1.0, 0.0].view()).unwrap(), 1.0);

        assert!(forward(&single, array![1.0].view()).is_err());
    }

    #[test]
    fn loss_edge_cases() {
        let (params, data) = tiny();
        let zero = NetworkParams::new(Array2::zeros((2, 2)), params.output().clone()).unwrap();
        let expected = 0.5 * (0.3f64.powi(2) + 1.2f64.powi(2));
        assert_eq!(loss(&zero, &data).unwrap(), expected);

        let preds: Array1<f64> = data
            .features()
            .axis_iter(Axis(0))
            .map(|x| forward(&params, x).unwrap())
            .collect();
        let fitted = Dataset::new(data.features().clone(), preds).unwrap();
        assert_eq!(loss(&params, &fitted).unwrap(), 0.0);
        assert!(loss(&params, &data).unwrap() > 0.0);

        let wide = NetworkParams::new(Array2::zeros((2, 3)), array![1.0, 1.0]).unwrap();
        assert!(loss(&wide, &data).is_err());
        assert!(gradient(&wide, &data).is_err());
    }

    #[test]
    fn gradient_zero_cases() {
        let (params, data) = tiny();
        let zero = NetworkParams::new(Array2::zeros((2, 2)), params.output().clone()).unwrap();
        assert!(gradient(&zero, &data).unwrap().iter().all(|&g| g == 0.0));

        let dead = NetworkParams::new(params.weights().clone(), array![0.0, -0.5]).unwrap();
        let g = gradient(&dead, &data).unwrap();
        assert!(g.row(0).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dataset_validation() {
        assert!(Dataset::new(array![[0.5, 0.5]], array![1.0]).is_err());
        assert!(Dataset::new(array![[1.0, 0.0]], array![1.0, 2.0]).is_err());
        assert!(Dataset::new(array![[1.0, 0.0]], array![f64::NAN]).is_err());
        assert!(NetworkParams::new(array![[1.0]], array![1.0, 2.0]).is_err());
        assert!(NetworkParams::new(array![[f64::INFINITY]], array![1.0]).is_err());
    }

    #[test]
    fn text_parse_errors_carry_line_numbers() {
        let path = Path::new("d.txt");
        let err = Dataset::from_text("2 2\n1 0\n0 x\n1\n2\n", path).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
        let err = Dataset::from_text("1 2\n1 0\n", path).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
        let err = Dataset::from_text("1 2 3\n", path).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }), "{err}");
    }
}
