//! One-vs-rest linear SVM over standardized features.
//!
//! Each class minimizes `λ/2 ‖w‖² + mean_i max(0, 1 − y_i (w·x_i + b))` with
//! `λ = 1 / (C n)`. An epoch is a pass of per-sample subgradient steps in a
//! seeded order with step `lr / epoch`; the pass is kept only if it does not
//! raise the objective, otherwise it is retried with half the step.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::SceneId;
use crate::tsv;

const STEP_RETRIES: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SvmConfig {
    pub c: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for SvmConfig {
    fn default() -> Self {
        SvmConfig {
            c: 1.0,
            epochs: 200,
            learning_rate: 0.1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvmModel {
    pub classes: usize,
    pub features: usize,
    /// Row-major `[classes][features]`, in standardized feature space.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Total objective over all classes after each epoch.
    pub objective: Vec<f64>,
}

struct Problem<'a> {
    x: &'a [Vec<f64>],
    y: Vec<f64>,
    lambda: f64,
}

impl Problem<'_> {
    fn objective(&self, w: &[f64], b: f64) -> f64 {
        let reg = 0.5 * self.lambda * w.iter().map(|v| v * v).sum::<f64>();
        let hinge: f64 = self
            .x
            .iter()
            .zip(&self.y)
            .map(|(x, &y)| (1.0 - y * (dot(w, x) + b)).max(0.0))
            .sum();
        reg + hinge / self.x.len() as f64
    }

    fn pass(&self, w: &mut [f64], b: &mut f64, order: &[usize], eta: f64) {
        for &i in order {
            let (x, y) = (&self.x[i], self.y[i]);
            let violated = y * (dot(w, x) + *b) < 1.0;
            for (wj, xj) in w.iter_mut().zip(x) {
                *wj -= eta * self.lambda * *wj;
                if violated {
                    *wj += eta * y * xj;
                }
            }
            if violated {
                *b += eta * y;
            }
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Per-class weights, bias and objective history.
fn train_class(
    problem: &Problem<'_>,
    config: &SvmConfig,
    class: usize,
) -> (Vec<f64>, f64, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(class as u64);
    let f = problem.x[0].len();
    let (mut w, mut b) = (vec![0.0; f], 0.0);
    let mut current = problem.objective(&w, b);
    let mut history = Vec::with_capacity(config.epochs);
    let mut order: Vec<usize> = (0..problem.x.len()).collect();
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut eta = config.learning_rate / epoch as f64;
        for _ in 0..=STEP_RETRIES {
            let (mut w2, mut b2) = (w.clone(), b);
            problem.pass(&mut w2, &mut b2, &order, eta);
            let next = problem.objective(&w2, b2);
            if next <= current {
                (w, b, current) = (w2, b2, next);
                break;
            }
            eta *= 0.5;
        }
        history.push(current);
    }
    (w, b, history)
}

/// Trains one linear scorer per scene id in `0..=max label`.
pub fn train_pe_svm(samples: &[(Vec<f64>, SceneId)], config: SvmConfig) -> Result<SvmModel> {
    if !(config.c > 0.0 && config.learning_rate > 0.0) || config.epochs == 0 {
        return Err(Error::InvalidParameter(
            "SVM needs positive C, learning rate and epochs".into(),
        ));
    }
    let Some((first, _)) = samples.first() else {
        return Err(Error::EmptySet("SVM training samples"));
    };
    let features = first.len();
    if let Some((x, _)) = samples.iter().find(|(x, _)| x.len() != features) {
        return Err(Error::DimensionMismatch(format!(
            "feature vector of length {} among length {features}",
            x.len()
        )));
    }
    if samples
        .iter()
        .any(|(x, _)| x.iter().any(|v| !v.is_finite()))
    {
        return Err(Error::InvalidParameter("non-finite SVM feature".into()));
    }
    let labels: std::collections::BTreeSet<SceneId> = samples.iter().map(|(_, y)| *y).collect();
    if labels.len() < 2 {
        return Err(Error::SingleClass);
    }
    let classes = labels.last().unwrap().index() + 1;
    let n = samples.len() as f64;

    let mean: Vec<f64> = (0..features)
        .map(|j| samples.iter().map(|(x, _)| x[j]).sum::<f64>() / n)
        .collect();
    let mut constant = 0;
    let std: Vec<f64> = (0..features)
        .map(|j| {
            let var = samples
                .iter()
                .map(|(x, _)| (x[j] - mean[j]).powi(2))
                .sum::<f64>()
                / n;
            if var > 0.0 {
                var.sqrt()
            } else {
                constant += 1;
                1.0
            }
        })
        .collect();
    if constant > 0 {
        log::warn!("{constant} of {features} SVM feature columns are constant");
    }
    let x: Vec<Vec<f64>> = samples
        .iter()
        .map(|(x, _)| {
            x.iter()
                .zip(&mean)
                .zip(&std)
                .map(|((v, m), s)| (v - m) / s)
                .collect()
        })
        .collect();
    let lambda = 1.0 / (config.c * n);

    let per_class: Vec<(Vec<f64>, f64, Vec<f64>)> = (0..classes)
        .into_par_iter()
        .map(|c| {
            let problem = Problem {
                x: &x,
                y: samples
                    .iter()
                    .map(|(_, y)| if y.index() == c { 1.0 } else { -1.0 })
                    .collect(),
                lambda,
            };
            train_class(&problem, &config, c)
        })
        .collect();

    let objective = (0..config.epochs)
        .map(|e| per_class.iter().map(|(_, _, h)| h[e]).sum())
        .collect();
    let mut weights = Vec::with_capacity(classes * features);
    let mut bias = Vec::with_capacity(classes);
    for (w, b, _) in per_class {
        weights.extend(w);
        bias.push(b);
    }
    Ok(SvmModel {
        classes,
        features,
        weights,
        bias,
        mean,
        std,
        objective,
    })
}

impl SvmModel {
    /// Per-class margins for a raw (unstandardized) feature vector.
    pub fn margins(&self, features: &[f64]) -> Result<Vec<f64>> {
        if features.len() != self.features {
            return Err(Error::DimensionMismatch(format!(
                "feature vector of length {}, model expects {}",
                features.len(),
                self.features
            )));
        }
        let z: Vec<f64> = features
            .iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((v, m), s)| (v - m) / s)
            .collect();
        Ok((0..self.classes)
            .map(|c| {
                dot(
                    &self.weights[c * self.features..(c + 1) * self.features],
                    &z,
                ) + self.bias[c]
            })
            .collect())
    }

    /// Class with the largest margin; ties go to the lower id.
    pub fn predict(&self, features: &[f64]) -> Result<SceneId> {
        let m = self.margins(features)?;
        let mut best = 0;
        for (i, v) in m.iter().enumerate() {
            if *v > m[best] {
                best = i;
            }
        }
        Ok(SceneId(best as u32))
    }

    pub fn accuracy(&self, samples: &[(Vec<f64>, SceneId)]) -> Result<f64> {
        if samples.is_empty() {
            return Err(Error::EmptySet("SVM evaluation samples"));
        }
        let mut hits = 0;
        for (x, y) in samples {
            hits += usize::from(self.predict(x)? == *y);
        }
        Ok(hits as f64 / samples.len() as f64)
    }

    /// Header `classes features`, one weight row per class, then the bias,
    /// mean and std rows.
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut out = format!("{}\t{}\n", self.classes, self.features);
        for c in 0..self.classes {
            out.push_str(&tsv::join_floats(
                &self.weights[c * self.features..(c + 1) * self.features],
            ));
            out.push('\n');
        }
        for row in [&self.bias, &self.mean, &self.std] {
            out.push_str(&tsv::join_floats(row));
            out.push('\n');
        }
        tsv::write_file(path, &out)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let rows: Vec<tsv::Row> = tsv::read_lines(path)?
            .into_iter()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(n, l)| tsv::Row::new(path, n, &l))
            .collect();
        let Some((header, body)) = rows.split_first() else {
            return Err(Error::format(path, "empty SVM model file"));
        };
        header.expect_fields(2)?;
        let classes: usize = header.parse(0)?;
        let features: usize = header.parse(1)?;
        if body.len() != classes + 3 {
            return Err(Error::format(
                path,
                format!(
                    "expected {} rows after header, found {}",
                    classes + 3,
                    body.len()
                ),
            ));
        }
        let floats = |row: &tsv::Row, n: usize| -> Result<Vec<f64>> {
            if n == 0 && row.len() == 1 && row.field(0).is_empty() {
                return Ok(Vec::new());
            }
            row.expect_fields(n)?;
            (0..n).map(|i| row.parse::<f64>(i)).collect()
        };
        let mut weights = Vec::with_capacity(classes * features);
        for row in &body[..classes] {
            weights.extend(floats(row, features)?);
        }
        let bias = floats(&body[classes], classes)?;
        let mean = floats(&body[classes + 1], features)?;
        let std = floats(&body[classes + 2], features)?;
        if std.iter().any(|s| s.is_nan() || *s <= 0.0) {
            return Err(Error::format(path, "standard deviations must be positive"));
        }
        Ok(SvmModel {
            classes,
            features,
            weights,
            bias,
            mean,
            std,
            objective: Vec::new(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    /// Two classes separated along the first axis with a gap, plus noise
    /// columns.
    fn separable(n: usize, seed: u64) -> Vec<(Vec<f64>, SceneId)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let label = i % 2;
                let side = if label == 0 { -1.0 } else { 1.0 };
                let mut x = vec![side * rng.gen_range(0.5..2.0)];
                x.extend((0..9).map(|_| rng.gen_range(-1.0..1.0)));
                (x, SceneId(label as u32))
            })
            .collect()
    }

    #[test]
    fn separable_data_is_learned() {
        let data = separable(200, 1);
        let model = train_pe_svm(&data, SvmConfig::default()).unwrap();
        assert!(model.accuracy(&data).unwrap() >= 0.95);
    }

    #[test]
    fn objective_never_increases() {
        let data = separable(100, 2);
        let model = train_pe_svm(&data, SvmConfig::default()).unwrap();
        assert_eq!(model.objective.len(), 200);
        assert!(model.objective.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn deterministic_given_seed() {
        let data = separable(60, 3);
        let cfg = SvmConfig {
            seed: 9,
            ..SvmConfig::default()
        };
        assert_eq!(
            train_pe_svm(&data, cfg).unwrap(),
            train_pe_svm(&data, cfg).unwrap()
        );
    }

    #[test]
    fn conflicting_duplicates_do_not_crash() {
        let data = vec![
            (vec![1.0, 1.0], SceneId(0)),
            (vec![1.0, 1.0], SceneId(1)),
            (vec![-1.0, 0.0], SceneId(0)),
        ];
        let model = train_pe_svm(&data, SvmConfig::default()).unwrap();
        let acc = model.accuracy(&data).unwrap();
        assert!(acc < 1.0);
    }

    #[test]
    fn constant_columns_are_tolerated() {
        let mut data = separable(40, 4);
        for (x, _) in &mut data {
            x.push(3.0);
        }
        let model = train_pe_svm(&data, SvmConfig::default()).unwrap();
        assert_eq!(*model.std.last().unwrap(), 1.0);
        assert!(model.weights.iter().all(|w| w.is_finite()));
    }

    #[test]
    fn single_class_is_an_error() {
        let data = vec![(vec![1.0], SceneId(0)), (vec![2.0], SceneId(0))];
        assert!(matches!(
            train_pe_svm(&data, SvmConfig::default()),
            Err(Error::SingleClass)
        ));
    }

    #[test]
    fn model_round_trips() {
        let data = separable(30, 5);
        let model = train_pe_svm(
            &data,
            SvmConfig {
                epochs: 10,
                ..SvmConfig::default()
            },
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("svm.tsv");
        model.write(&p).unwrap();
        let back = SvmModel::load(&p).unwrap();
        assert_eq!(back.weights, model.weights);
        assert_eq!(back.std, model.std);
        for (x, _) in &data {
            assert_eq!(back.predict(x).unwrap(), model.predict(x).unwrap());
        }
    }
}
