use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

/// Why a test statistic could not be computed the usual way.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Degenerate {
    /// Zero spread and zero mean difference: `p` is set to 0.5.
    NoDifference,
    /// Zero spread with a nonzero mean: `p` is 0 (or 1 for a negative mean).
    ConstantDifference,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TTest {
    pub t: f64,
    pub df: usize,
    /// One-tailed p-value for the alternative `mean(a - b) > 0`.
    pub p: f64,
    pub degenerate: Option<Degenerate>,
}

/// Paired one-tailed t-test on `d = a - b` with the sample standard deviation.
pub fn paired_t_test_one_tailed(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::Config(format!(
            "paired t-test needs two equal-length samples of at least 2, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let n = a.len() as f64;
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = d.iter().sum::<f64>() / n;
    let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let df = a.len() - 1;
    let sd = var.sqrt();
    if sd == 0.0 {
        return Ok(if mean == 0.0 {
            TTest { t: 0.0, df, p: 0.5, degenerate: Some(Degenerate::NoDifference) }
        } else {
            TTest {
                t: mean.signum() * f64::INFINITY,
                df,
                p: if mean > 0.0 { 0.0 } else { 1.0 },
                degenerate: Some(Degenerate::ConstantDifference),
            }
        });
    }
    let t = mean / (sd / n.sqrt());
    Ok(TTest { t, df, p: student_t_upper_tail(t, df as f64), degenerate: None })
}

/// `P(T > t)` for Student's t with `df` degrees of freedom.
pub fn student_t_upper_tail(t: f64, df: f64) -> f64 {
    let dist = StudentsT::new(0.0, 1.0, df).expect("positive degrees of freedom");
    dist.sf(t)
}
