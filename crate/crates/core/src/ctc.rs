//! Connectionist temporal classification: loss, gradient with respect to the
//! pre-softmax logits, and best-path decoding. Label 0 is the blank.

use ndarray::{Array2, ArrayView2};
use thiserror::Error;

use crate::codec::Codec;

#[derive(Debug, Error, PartialEq)]
pub enum CtcError {
    #[error(
        "target of length {target_len} needs at least {required} time steps, line has {steps}"
    )]
    Infeasible {
        target_len: usize,
        required: usize,
        steps: usize,
    },
    #[error("label {label} outside [1, {max}]")]
    InvalidLabel { label: usize, max: usize },
    #[error("enumeration of {classes}^{steps} paths is too large")]
    TooLarge { classes: usize, steps: usize },
}

#[derive(Debug, Clone)]
pub struct CtcResult {
    /// Negative log probability of the target.
    pub loss: f64,
    /// `T x C` gradient of the loss with respect to the logits.
    pub logit_grad: Array2<f64>,
}

/// Minimum number of frames needed to emit `target`: one per label plus a
/// blank between every pair of equal neighbours.
pub fn required_steps(target: &[usize]) -> usize {
    target.len() + target.windows(2).filter(|w| w[0] == w[1]).count()
}

fn check_target(steps: usize, classes: usize, target: &[usize]) -> Result<(), CtcError> {
    if let Some(&label) = target.iter().find(|&&l| l == 0 || l >= classes) {
        return Err(CtcError::InvalidLabel {
            label,
            max: classes.saturating_sub(1),
        });
    }
    let required = required_steps(target).max(1);
    if steps < required {
        return Err(CtcError::Infeasible {
            target_len: target.len(),
            required,
            steps,
        });
    }
    Ok(())
}

#[inline]
fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// CTC loss and logit gradient via the forward-backward recursion in log
/// space.
pub fn ctc_loss_grad(posteriors: ArrayView2<f64>, target: &[usize]) -> Result<CtcResult, CtcError> {
    let (steps, classes) = posteriors.dim();
    check_target(steps, classes, target)?;

    let ext: Vec<usize> = std::iter::once(0)
        .chain(target.iter().flat_map(|&l| [l, 0]))
        .collect();
    let states = ext.len();
    let log_y = posteriors.mapv(f64::ln);
    // skip transition s-2 -> s allowed
    let can_skip: Vec<bool> = (0..states)
        .map(|s| s >= 2 && ext[s] != 0 && ext[s] != ext[s - 2])
        .collect();

    let mut alpha = Array2::from_elem((steps, states), f64::NEG_INFINITY);
    alpha[[0, 0]] = log_y[[0, ext[0]]];
    if states > 1 {
        alpha[[0, 1]] = log_y[[0, ext[1]]];
    }
    for t in 1..steps {
        for s in 0..states {
            let mut acc = alpha[[t - 1, s]];
            if s >= 1 {
                acc = log_add(acc, alpha[[t - 1, s - 1]]);
            }
            if can_skip[s] {
                acc = log_add(acc, alpha[[t - 1, s - 2]]);
            }
            alpha[[t, s]] = acc + log_y[[t, ext[s]]];
        }
    }

    // beta excludes the emission at t itself
    let mut beta = Array2::from_elem((steps, states), f64::NEG_INFINITY);
    beta[[steps - 1, states - 1]] = 0.0;
    if states > 1 {
        beta[[steps - 1, states - 2]] = 0.0;
    }
    for t in (0..steps - 1).rev() {
        for s in 0..states {
            let mut acc = beta[[t + 1, s]] + log_y[[t + 1, ext[s]]];
            if s + 1 < states {
                acc = log_add(acc, beta[[t + 1, s + 1]] + log_y[[t + 1, ext[s + 1]]]);
            }
            if s + 2 < states && can_skip[s + 2] {
                acc = log_add(acc, beta[[t + 1, s + 2]] + log_y[[t + 1, ext[s + 2]]]);
            }
            beta[[t, s]] = acc;
        }
    }

    let mut log_p = alpha[[steps - 1, states - 1]];
    if states > 1 {
        log_p = log_add(log_p, alpha[[steps - 1, states - 2]]);
    }

    let mut logit_grad = posteriors.to_owned();
    for t in 0..steps {
        for s in 0..states {
            let occupancy = alpha[[t, s]] + beta[[t, s]] - log_p;
            if occupancy > f64::NEG_INFINITY {
                logit_grad[[t, ext[s]]] -= occupancy.exp();
            }
        }
    }
    Ok(CtcResult {
        loss: -log_p,
        logit_grad,
    })
}

/// Collapse a frame-level path: merge repeats, then drop blanks.
pub fn collapse(path: &[usize]) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = None;
    for &l in path {
        if Some(l) != prev && l != 0 {
            out.push(l);
        }
        prev = Some(l);
    }
    out
}

/// Exact target probability by enumerating every frame-level path. Only for
/// tiny instances; a test oracle for [`ctc_loss_grad`].
pub fn path_prob_oracle(posteriors: ArrayView2<f64>, target: &[usize]) -> Result<f64, CtcError> {
    let (steps, classes) = posteriors.dim();
    let total = (classes as f64).powi(steps as i32);
    if total > 1e7 {
        return Err(CtcError::TooLarge { classes, steps });
    }
    let mut path = vec![0usize; steps];
    let mut prob = 0.0;
    loop {
        if collapse(&path) == target {
            prob += path
                .iter()
                .enumerate()
                .map(|(t, &c)| posteriors[[t, c]])
                .product::<f64>();
        }
        // odometer increment
        let mut i = 0;
        loop {
            if i == steps {
                return Ok(prob);
            }
            path[i] += 1;
            if path[i] < classes {
                break;
            }
            path[i] = 0;
            i += 1;
        }
    }
}

/// Per-frame argmax, lowest index on ties.
pub fn best_path(posteriors: ArrayView2<f64>) -> Vec<usize> {
    posteriors
        .rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            for (i, &p) in row.iter().enumerate() {
                if p > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

pub fn best_path_decode(posteriors: ArrayView2<f64>, codec: &Codec) -> String {
    let labels = collapse(&best_path(posteriors));
    labels.into_iter().map(|l| codec.symbols()[l]).collect()
}
