use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PassKError {
    #[error("k must be at least 1")]
    ZeroK,
    #[error("correct count {c} exceeds sample count {n}")]
    CorrectExceedsSamples { n: u32, c: u32 },
    #[error("k = {k} exceeds sample count {n}")]
    KExceedsSamples { n: u32, k: u32 },
}

/// Unbiased pass@k estimate `1 - C(n-c, k) / C(n, k)` for one task.
///
/// Evaluated as a running product so large `n` never forms a binomial.
pub fn pass_at_k(n: u32, c: u32, k: u32) -> Result<f64, PassKError> {
    if k == 0 {
        return Err(PassKError::ZeroK);
    }
    if c > n {
        return Err(PassKError::CorrectExceedsSamples { n, c });
    }
    if k > n {
        return Err(PassKError::KExceedsSamples { n, k });
    }
    if n - c < k {
        return Ok(1.0);
    }
    let k = k as f64;
    let miss: f64 = (n - c + 1..=n).map(|i| 1.0 - k / i as f64).product();
    Ok(1.0 - miss)
}
