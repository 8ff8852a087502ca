use crate::error::{Error, Result};

/// Ordered `(time, value)` observations.
///
/// Times are strictly increasing unless the series was built with
/// [`TimeSeries::with_replicates`], which admits repeated times (several
/// observations taken at the same time point).
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    times: Vec<f64>,
    values: Vec<f64>,
    replicated: bool,
}

impl TimeSeries {
    pub fn new(times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        Self::build(times, values, false)
    }

    /// Series whose times only need to be nondecreasing.
    pub fn with_replicates(times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        Self::build(times, values, true)
    }

    fn build(times: Vec<f64>, values: Vec<f64>, replicated: bool) -> Result<Self> {
        if times.is_empty() {
            return Err(Error::InsufficientData {
                required: 1,
                got: 0,
            });
        }
        if times.len() != values.len() {
            return Err(Error::InvalidInput(format!(
                "{} times but {} values",
                times.len(),
                values.len()
            )));
        }
        if let Some(i) = times
            .iter()
            .chain(values.iter())
            .position(|v| !v.is_finite())
        {
            return Err(Error::InvalidInput(format!(
                "non-finite entry at position {i}"
            )));
        }
        for (i, w) in times.windows(2).enumerate() {
            let ordered = if replicated { w[1] >= w[0] } else { w[1] > w[0] };
            if !ordered {
                return Err(Error::InvalidInput(format!(
                    "times not {} at index {}: {} then {}",
                    if replicated {
                        "nondecreasing"
                    } else {
                        "strictly increasing"
                    },
                    i + 1,
                    w[0],
                    w[1]
                )));
            }
        }
        Ok(Self {
            times,
            values,
            replicated,
        })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn is_replicated(&self) -> bool {
        self.replicated
    }

    /// Span `t_N - t_1`.
    pub fn time_range(&self) -> f64 {
        self.times[self.times.len() - 1] - self.times[0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.times.iter().copied().zip(self.values.iter().copied())
    }

    /// Same times, new values.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        Self::build(self.times.clone(), values, self.replicated)
    }
}

pub(crate) fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance; zero for fewer than two points.
pub(crate) fn sample_variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64
}
