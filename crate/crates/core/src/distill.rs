//! Task-weighted cross-entropy, temperature-scaled KL distillation and the
//! moving-average teacher.
//!
//! Every loss comes in two forms: a tape version used for training and a
//! plain value version for reporting and tests. Both perform the same
//! floating-point operations in the same order.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::tensor::{kernels_log_softmax, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistillConfig {
    /// Weight of task 1; task 2 gets `1 - alpha`.
    pub alpha: f64,
    /// Weight of the distillation term.
    pub lambda: f64,
    pub tau: f64,
    /// Teacher smoothing factor.
    pub beta: f64,
}

impl Default for DistillConfig {
    fn default() -> Self {
        DistillConfig {
            alpha: 0.5,
            lambda: 0.5,
            tau: 3.0,
            beta: 0.999,
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        check_unit("alpha", self.alpha)?;
        check_unit("lambda", self.lambda)?;
        check_tau(self.tau)?;
        if !(0.0..1.0).contains(&self.beta) {
            return Err(Error::Config(format!("beta {} not in [0, 1)", self.beta)));
        }
        Ok(())
    }
}

fn check_unit(name: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} {v} not in [0, 1]")))
    }
}

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("temperature must be positive, got {tau}")))
    }
}

fn rows_cols(t: &Tensor, op: &'static str) -> Result<(usize, usize)> {
    match t.shape() {
        [n, c] if *c > 0 => Ok((*n, *c)),
        s => Err(Error::shape(op, s, &[0, 0])),
    }
}

/// Row-wise `softmax(z / tau)`.
pub fn softened_probs(z: &Tensor, tau: f64) -> Result<Tensor> {
    check_tau(tau)?;
    Ok(softened_log_probs(z, tau)?.map(f32::exp))
}

fn softened_log_probs(z: &Tensor, tau: f64) -> Result<Tensor> {
    let (_, c) = rows_cols(z, "softened_probs")?;
    let inv = (1.0 / tau) as f32;
    let scaled: Vec<f32> = z.data().iter().map(|v| v * inv).collect();
    Tensor::new(z.shape().to_vec(), kernels_log_softmax(&scaled, c))
}

/// `tau^2 / N * sum p_T (log p_T - log p_S)` on plain tensors.
pub fn kd_loss(z_t: &Tensor, z_s: &Tensor, tau: f64) -> Result<f32> {
    check_tau(tau)?;
    let mut tape = Tape::no_grad();
    let zs = tape.constant(z_s.clone());
    let l = tape.soft_kl(z_t, zs, tau)?;
    tape.value(l).item()
}

/// Tape form of [`kd_loss`]. The teacher logits enter as constants, so no
/// gradient reaches whatever produced them.
pub fn kd_loss_var(tape: &mut Tape, z_t: &Tensor, z_s: Var, tau: f64) -> Result<Var> {
    check_tau(tau)?;
    tape.soft_kl(z_t, z_s, tau)
}

/// Mean negative log-softmax at the true class.
pub fn cross_entropy(z: &Tensor, y: &[usize]) -> Result<f32> {
    let (n, c) = rows_cols(z, "cross_entropy")?;
    if n != y.len() {
        return Err(Error::shape("cross_entropy", z.shape(), &[y.len()]));
    }
    if n == 0 {
        return Err(Error::Data("cross_entropy on an empty batch".to_string()));
    }
    let lp = kernels_log_softmax(z.data(), c);
    let mut sum = 0.0f32;
    for (i, &k) in y.iter().enumerate() {
        if k >= c {
            return Err(Error::Data(format!("label {k} out of range for {c} classes")));
        }
        sum += lp[i * c + k];
    }
    Ok(-sum / n as f32)
}

pub fn cross_entropy_var(tape: &mut Tape, z: Var, y: &[usize]) -> Result<Var> {
    if tape.shape(z).first() == Some(&0) {
        return Err(Error::Data("cross_entropy on an empty batch".to_string()));
    }
    let lp = tape.log_softmax(z)?;
    let picked = tape.gather_rows(lp, y)?;
    let m = tape.mean(picked, None)?;
    Ok(tape.neg(m))
}

/// `alpha * CE1 + (1 - alpha) * CE2`.
pub fn multitask_ce_loss(
    z1: &Tensor,
    y1: &[usize],
    z2: &Tensor,
    y2: &[usize],
    alpha: f64,
) -> Result<f32> {
    check_unit("alpha", alpha)?;
    let ce1 = cross_entropy(z1, y1)?;
    let ce2 = cross_entropy(z2, y2)?;
    Ok(alpha as f32 * ce1 + (1.0 - alpha) as f32 * ce2)
}

pub fn multitask_ce_var(tape: &mut Tape, ce1: Var, ce2: Var, alpha: f64) -> Result<Var> {
    check_unit("alpha", alpha)?;
    let a = tape.scale(ce1, alpha as f32);
    let b = tape.scale(ce2, (1.0 - alpha) as f32);
    tape.add(a, b)
}

/// `(1 - lambda) * ce + lambda * distill`.
pub fn born_again_total(ce: f32, distill: f32, lambda: f64) -> Result<f32> {
    check_unit("lambda", lambda)?;
    Ok((1.0 - lambda) as f32 * ce + lambda as f32 * distill)
}

pub fn born_again_total_var(tape: &mut Tape, ce: Var, distill: Var, lambda: f64) -> Result<Var> {
    check_unit("lambda", lambda)?;
    let a = tape.scale(ce, (1.0 - lambda) as f32);
    let b = tape.scale(distill, lambda as f32);
    tape.add(a, b)
}

/// `alpha * (ce1 + lambda * kd1) + (1 - alpha) * (ce2 + lambda * kd2)`.
pub fn smooth_total(ce1: f32, kd1: f32, ce2: f32, kd2: f32, alpha: f64, lambda: f64) -> Result<f32> {
    check_unit("alpha", alpha)?;
    check_unit("lambda", lambda)?;
    let l = lambda as f32;
    let t1 = ce1 + l * kd1;
    let t2 = ce2 + l * kd2;
    Ok(alpha as f32 * t1 + (1.0 - alpha) as f32 * t2)
}

pub fn smooth_total_var(
    tape: &mut Tape,
    (ce1, kd1): (Var, Var),
    (ce2, kd2): (Var, Var),
    alpha: f64,
    lambda: f64,
) -> Result<Var> {
    check_unit("lambda", lambda)?;
    let k1 = tape.scale(kd1, lambda as f32);
    let t1 = tape.add(ce1, k1)?;
    let k2 = tape.scale(kd2, lambda as f32);
    let t2 = tape.add(ce2, k2)?;
    multitask_ce_var(tape, t1, t2, alpha)
}

/// Moving-average copy of the student, buffers included.
#[derive(Debug, Clone, PartialEq)]
pub struct TeacherState {
    pub params: ParamStore,
}

impl TeacherState {
    pub fn from_student(student: &ParamStore) -> Self {
        TeacherState {
            params: student.clone(),
        }
    }

    /// `theta_T <- beta * theta_T + (1 - beta) * theta_S` for every scalar.
    pub fn update(&mut self, student: &ParamStore, beta: f64) -> Result<()> {
        ema_update(&mut self.params, student, beta)
    }
}

pub fn ema_update(teacher: &mut ParamStore, student: &ParamStore, beta: f64) -> Result<()> {
    if !teacher.congruent(student) {
        return Err(Error::Contract(
            "teacher and student parameter layouts differ".to_string(),
        ));
    }
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::Config(format!("beta {beta} not in [0, 1]")));
    }
    let keep = 1.0 - beta;
    for (t, (_, s)) in teacher.iter_mut().zip(student.iter()) {
        for (a, &b) in t.value.data_mut().iter_mut().zip(s.value.data()) {
            *a = (beta * *a as f64 + keep * b as f64) as f32;
        }
    }
    Ok(())
}
