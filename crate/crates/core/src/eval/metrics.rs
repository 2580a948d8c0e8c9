use std::fmt::Write as _;

use crate::error::{ensure, Result};

pub fn error_rate(predictions: &[usize], labels: &[usize]) -> Result<f64> {
    ensure!(
        predictions.len() == labels.len() && !labels.is_empty(),
        Contract,
        "error rate over {} predictions and {} labels",
        predictions.len(),
        labels.len()
    );
    let wrong = predictions.iter().zip(labels).filter(|(p, l)| p != l).count();
    Ok(wrong as f64 / labels.len() as f64)
}

/// Percentage reduction of error when replacing model A by model B.
pub fn relative_improvement(er_a: f64, er_b: f64) -> Result<f64> {
    ensure!(er_a > 0.0, Contract, "relative improvement needs a positive baseline error, got {er_a}");
    Ok((er_a - er_b) / er_a * 100.0)
}

/// Row = true class, column = predicted class.
pub fn confusion_matrix(predictions: &[usize], labels: &[usize], classes: usize) -> Result<Vec<Vec<usize>>> {
    ensure!(
        predictions.len() == labels.len(),
        Contract,
        "{} predictions for {} labels",
        predictions.len(),
        labels.len()
    );
    let mut m = vec![vec![0; classes]; classes];
    for (&p, &l) in predictions.iter().zip(labels) {
        ensure!(p < classes && l < classes, Contract, "class index {} out of {classes}", p.max(l));
        m[l][p] += 1;
    }
    Ok(m)
}

/// Error rate implied by a confusion matrix.
pub fn confusion_error_rate(m: &[Vec<usize>]) -> f64 {
    let total: usize = m.iter().flatten().sum();
    let trace: usize = (0..m.len()).map(|i| m[i][i]).sum();
    if total == 0 {
        return 0.0;
    }
    (total - trace) as f64 / total as f64
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub error_rate: f64,
    pub confusion: Vec<Vec<usize>>,
    pub class_counts: Vec<usize>,
    pub class_names: Vec<String>,
    pub embedding: Option<Vec<[f64; 2]>>,
    pub labels: Vec<usize>,
    pub config: String,
    pub seed: u64,
}

impl EvalReport {
    pub fn new(predictions: &[usize], labels: &[usize], class_names: Vec<String>, config: String, seed: u64) -> Result<Self> {
        let confusion = confusion_matrix(predictions, labels, class_names.len())?;
        let class_counts = confusion.iter().map(|r| r.iter().sum()).collect();
        Ok(Self {
            error_rate: error_rate(predictions, labels)?,
            confusion,
            class_counts,
            class_names,
            embedding: None,
            labels: labels.to_vec(),
            config,
            seed,
        })
    }

    pub fn metrics_csv(&self) -> String {
        let mut s = String::from("metric,value\n");
        let _ = writeln!(s, "error_rate,{}", self.error_rate);
        let _ = writeln!(s, "samples,{}", self.labels.len());
        let _ = writeln!(s, "seed,{}", self.seed);
        for (name, n) in self.class_names.iter().zip(&self.class_counts) {
            let _ = writeln!(s, "count_{name},{n}");
        }
        s
    }

    pub fn confusion_csv(&self) -> String {
        let mut s = String::from("true\\pred");
        for n in &self.class_names {
            s.push(',');
            s.push_str(n);
        }
        s.push('\n');
        for (name, row) in self.class_names.iter().zip(&self.confusion) {
            s.push_str(name);
            for v in row {
                let _ = write!(s, ",{v}");
            }
            s.push('\n');
        }
        s
    }

    pub fn coordinates_csv(&self) -> Option<String> {
        self.embedding.as_ref().map(|e| coordinates_csv(e, &self.labels))
    }
}

/// `index,class,x,y` rows.
pub fn coordinates_csv(coords: &[[f64; 2]], labels: &[usize]) -> String {
    let mut s = String::from("index,class,x,y\n");
    for (i, (c, l)) in coords.iter().zip(labels).enumerate() {
        let _ = writeln!(s, "{i},{l},{},{}", c[0], c[1]);
    }
    s
}
