use statrs::function::beta::beta_reg;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TTestResult {
    pub t_statistic: f64,
    pub degrees_of_freedom: usize,
    /// Upper-tail probability `P(T >= t)`.
    pub p_value: f64,
    pub mean_difference: f64,
}

pub fn mean(samples: &[f64]) -> f64 {
    samples.iter().sum::<f64>() / samples.len() as f64
}

/// Sample standard deviation with an `n - 1` denominator.
pub fn sample_std_dev(samples: &[f64]) -> Result<f64> {
    if samples.len() < 2 {
        return Err(Error::NotEnoughSamples(samples.len()));
    }
    let m = mean(samples);
    let ss: f64 = samples.iter().map(|x| (x - m) * (x - m)).sum();
    Ok((ss / (samples.len() - 1) as f64).sqrt())
}

pub fn standard_error(samples: &[f64]) -> Result<f64> {
    Ok(sample_std_dev(samples)? / (samples.len() as f64).sqrt())
}

/// `P(T >= t)` for Student's t with `df` degrees of freedom.
pub fn student_t_upper_tail(t: f64, df: f64) -> f64 {
    if t.is_nan() {
        return f64::NAN;
    }
    if t == f64::INFINITY {
        return 0.0;
    }
    if t == f64::NEG_INFINITY {
        return 1.0;
    }
    let tail = 0.5 * beta_reg(df / 2.0, 0.5, df / (df + t * t));
    if t >= 0.0 {
        tail
    } else {
        1.0 - tail
    }
}

/// One-sided paired t-test of `H0: mean(a - b) <= 0`.
///
/// Zero variance with a nonzero mean difference gives an infinite `t`
/// (`p = 0` when `a` is larger, `p = 1` otherwise). Identical samples leave
/// `t` undefined.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TTestResult> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch(a.len(), b.len()));
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::NotEnoughSamples(n));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let m = mean(&d);
    let sd = sample_std_dev(&d)?;
    let df = n - 1;
    let t = if sd > 0.0 {
        m * (n as f64).sqrt() / sd
    } else if m > 0.0 {
        f64::INFINITY
    } else if m < 0.0 {
        f64::NEG_INFINITY
    } else {
        return Err(Error::UndefinedT);
    };
    Ok(TTestResult {
        t_statistic: t,
        degrees_of_freedom: df,
        p_value: student_t_upper_tail(t, df as f64),
        mean_difference: m,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * b.abs().max(1e-300)
    }

    #[test]
    fn worked_example() {
        let r = paired_t_test(&[1.0, 2.0, 3.0], &[0.0, 0.0, 0.0]).unwrap();
        assert!(close(r.t_statistic, 12f64.sqrt(), 1e-12));
        assert_eq!(r.degrees_of_freedom, 2);
        assert!((r.p_value - 0.0371).abs() < 5e-5);
    }

    #[test]
    fn degenerate_differences() {
        let r = paired_t_test(&[5.0; 4], &[0.0; 4]).unwrap();
        assert_eq!(r.t_statistic, f64::INFINITY);
        assert_eq!(r.p_value, 0.0);
        let r = paired_t_test(&[0.0; 4], &[5.0; 4]).unwrap();
        assert_eq!(r.p_value, 1.0);
        assert!(matches!(paired_t_test(&[1.0, 2.0], &[1.0, 2.0]), Err(Error::UndefinedT)));
        assert!(matches!(paired_t_test(&[1.0], &[0.0]), Err(Error::NotEnoughSamples(1))));
        assert!(matches!(paired_t_test(&[1.0, 2.0], &[0.0]), Err(Error::LengthMismatch(2, 1))));
    }

    #[test]
    fn standard_error_examples() {
        assert!(close(standard_error(&[2.0, 4.0, 6.0]).unwrap(), 2.0 / 3f64.sqrt(), 1e-12));
        assert_eq!(standard_error(&[7.0, 7.0, 7.0]).unwrap(), 0.0);
        assert!(close(standard_error(&[0.0, 1.0]).unwrap(), 0.5, 1e-12));
        assert!(standard_error(&[1.0]).is_err());
    }

    #[test]
    fn one_degree_of_freedom_is_cauchy() {
        for t in [-3.0, -0.5, 0.0, 0.7, 2.0, 40.0] {
            let cauchy = 0.5 - f64::atan(t) / std::f64::consts::PI;
            assert!(close(student_t_upper_tail(t, 1.0), cauchy, 1e-12), "t={t}");
        }
    }

    #[test]
    fn tail_decreases_in_t() {
        let mut prev = 1.0;
        for i in 0..100 {
            let p = student_t_upper_tail(i as f64 * 0.1, 7.0);
            assert!(p <= prev);
            prev = p;
        }
    }
}
