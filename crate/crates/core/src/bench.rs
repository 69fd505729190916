//! Fitting-time measurement.

use std::time::Instant;

use rayon::prelude::*;

use crate::cascade::CascadeModel;
use crate::dataset::AnnotatedSample;
use crate::error::{Error, Result};

/// Per-image fitting time over repeated passes of one model.
#[derive(Debug, Clone, PartialEq)]
pub struct Timing {
    /// Seconds per image of each timed pass.
    pub pass_seconds: Vec<f64>,
}

impl Timing {
    pub fn min(&self) -> f64 {
        self.pass_seconds.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn median(&self) -> f64 {
        let mut v = self.pass_seconds.clone();
        v.sort_by(f64::total_cmp);
        let n = v.len();
        if n == 0 {
            f64::NAN
        } else if n % 2 == 1 {
            v[n / 2]
        } else {
            0.5 * (v[n / 2 - 1] + v[n / 2])
        }
    }

    pub fn images_per_second(&self) -> f64 {
        1.0 / self.min()
    }
}

fn pass(model: &CascadeModel, samples: &[AnnotatedSample], parallel: bool) -> Result<f64> {
    let start = Instant::now();
    if parallel {
        samples.par_iter().try_for_each(|s| model.fit(&s.image, &s.bbox, false).map(drop))?;
    } else {
        for s in samples {
            std::hint::black_box(model.fit(&s.image, &s.bbox, false)?);
        }
    }
    Ok(start.elapsed().as_secs_f64() / samples.len() as f64)
}

/// Times every model over `samples`, `reps` passes each after one untimed
/// warm-up pass. Passes of different models are interleaved so that drift in
/// machine load affects all of them alike.
pub fn time_models(models: &[&CascadeModel], samples: &[AnnotatedSample], reps: usize, parallel: bool) -> Result<Vec<Timing>> {
    if samples.is_empty() {
        return Err(Error::Empty("no samples to time"));
    }
    for m in models {
        pass(m, samples, parallel)?;
    }
    let mut out = vec![Timing { pass_seconds: Vec::with_capacity(reps) }; models.len()];
    for _ in 0..reps {
        for (m, t) in models.iter().zip(&mut out) {
            t.pass_seconds.push(pass(m, samples, parallel)?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn timing_stats() {
        let t = Timing { pass_seconds: vec![3.0, 1.0, 2.0, 4.0] };
        assert_eq!(t.min(), 1.0);
        assert_eq!(t.median(), 2.5);
        assert_eq!(t.images_per_second(), 1.0);
        assert!(Timing { pass_seconds: vec![] }.median().is_nan());
    }
}
