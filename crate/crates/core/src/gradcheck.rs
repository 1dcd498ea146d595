//! Finite-difference verification of tape gradients.

use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::KernelError;
use crate::params::{Frozen, ParamId, ParamStore};
use crate::tape::{Fault, Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckConfig {
    /// Central-difference step.
    pub h: f64,
    /// Maximum tolerated relative error per coordinate.
    pub tol: f64,
    /// Stores with fewer scalars than this are swept exhaustively.
    pub full_sweep_below: usize,
    /// Coordinates sampled per tensor when not sweeping.
    pub samples_per_tensor: usize,
    pub seed: u64,
    /// Perturbs one gradient rule on the analytic pass.
    pub fault: Option<Fault>,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            h: 1e-5,
            tol: 1e-4,
            full_sweep_below: 10_000,
            samples_per_tensor: 256,
            seed: 0,
            fault: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorCheck {
    pub name: String,
    pub max_rel_error: f64,
    /// Flat index of the worst coordinate, if any coordinate was checked.
    pub worst_index: Option<usize>,
    pub checked: usize,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub tensors: Vec<TensorCheck>,
    pub tol: f64,
    /// Smallest `|x|` at any ReLU input during the unperturbed pass.
    pub relu_margin: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.tensors.iter().all(|t| t.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &TensorCheck> {
        self.tensors.iter().filter(|t| !t.passed)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.tensors
            .iter()
            .map(|t| t.max_rel_error)
            .fold(0.0, f64::max)
    }
}

/// `|a - n| / max(|a| + |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

fn eval<F>(store: &ParamStore, forward: &F) -> Result<f64, KernelError>
where
    F: Fn(&mut Tape<'_>) -> Result<Var, KernelError>,
{
    let mut tape = Tape::new(store);
    let loss = forward(&mut tape)?;
    let v = tape.value(loss);
    if v.len() != 1 {
        return Err(KernelError::NonScalarLoss(v.shape().to_vec()));
    }
    Ok(v.item())
}

/// Compares the tape gradient of the scalar built by `forward` against
/// central finite differences, tensor by tensor. Frozen coordinates are
/// skipped; a fully frozen tensor reports an error of exactly zero.
pub fn grad_check<F>(
    params: &ParamStore,
    forward: F,
    config: &GradCheckConfig,
) -> Result<GradCheckReport, KernelError>
where
    F: Fn(&mut Tape<'_>) -> Result<Var, KernelError>,
{
    if !(config.h > 0.0) {
        return Err(KernelError::Invalid(String::from("step h must be positive")));
    }
    let (analytic, relu_margin) = {
        let mut tape = Tape::new(params);
        if let Some(f) = config.fault {
            tape = tape.with_fault(f);
        }
        let loss = forward(&mut tape)?;
        (tape.backward(loss)?.params, tape.relu_margin())
    };

    let sweep = params.num_scalars() < config.full_sweep_below;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut work = params.clone();
    let mut tensors = Vec::with_capacity(params.len());

    for id in params.ids() {
        let entry = params.entry(id);
        let len = entry.tensor.len();
        let coords: Vec<usize> = if matches!(entry.frozen, Frozen::All) {
            Vec::new()
        } else if sweep || len <= config.samples_per_tensor {
            (0..len).collect()
        } else {
            let mut c = sample(&mut rng, len, config.samples_per_tensor).into_vec();
            c.sort_unstable();
            c
        };

        let mut worst = (0.0, None);
        let mut checked = 0;
        for idx in coords {
            if params.is_frozen(id, idx) {
                continue;
            }
            let numeric = central_difference(&mut work, id, idx, config.h, &forward)?;
            let err = relative_error(analytic.get(id).data()[idx], numeric);
            checked += 1;
            if err > worst.0 || worst.1.is_none() {
                worst = (err, Some(idx));
            }
        }
        tensors.push(TensorCheck {
            name: entry.name.clone(),
            max_rel_error: worst.0,
            worst_index: worst.1,
            checked,
            passed: worst.0 < config.tol,
        });
    }

    Ok(GradCheckReport {
        tensors,
        tol: config.tol,
        relu_margin,
    })
}

fn central_difference<F>(
    work: &mut ParamStore,
    id: ParamId,
    idx: usize,
    h: f64,
    forward: &F,
) -> Result<f64, KernelError>
where
    F: Fn(&mut Tape<'_>) -> Result<Var, KernelError>,
{
    let orig = work.get(id).data()[idx];
    work.get_mut(id).data_mut()[idx] = orig + h;
    let plus = eval(work, forward);
    work.get_mut(id).data_mut()[idx] = orig - h;
    let minus = eval(work, forward);
    work.get_mut(id).data_mut()[idx] = orig;
    Ok((plus? - minus?) / (2.0 * h))
}
