//! Deterministic synthetic datasets: an analytic parabola, an advecting
//! Gaussian wave, viscous Burgers trajectories, and a 2-D acoustic wave,
//! plus the column splitters that carve them into train/val/test.
//!
//! All generators are pure functions of their configs: byte-identical
//! output across runs and thread counts. The PDE solvers use second-order
//! central differences on periodic grids (advection in conservative form)
//! and RK4 in time, with the step count chosen per snapshot gap as the
//! smallest satisfying dt <= 0.5 dx / maxspeed and, with viscosity,
//! dt <= 0.25 dx^2 / nu.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{QmError, Result};
use crate::matrixio::DataMatrix;

/// Any solver value beyond this magnitude aborts the run as unstable.
const BLOWUP_LIMIT: f64 = 1e3;

/// Columns x_i = [x, x^2] on the 20-point grid x = -2 + 4 (i-1) / 19.
pub fn gen_parabola() -> DataMatrix {
    DataMatrix::new(DMatrix::from_fn(2, 20, |row, j| {
        let x = -2.0 + 4.0 * (j as f64) / 19.0;
        if row == 0 {
            x
        } else {
            x * x
        }
    }))
    .expect("parabola values are finite")
}

#[derive(Debug, Clone)]
pub struct AdvectConfig {
    pub n_x: usize,
    pub n_t: usize,
    /// Initial bump center.
    pub mu: f64,
    /// Transport speed.
    pub c: f64,
    /// Gaussian variance parameter (2 sigma^2).
    pub variance: f64,
}

impl AdvectConfig {
    pub fn paper() -> Self {
        AdvectConfig {
            n_x: 4096,
            n_t: 2000,
            mu: 0.1,
            c: 10.0,
            variance: 0.0002,
        }
    }

    pub fn desk() -> Self {
        AdvectConfig {
            n_x: 512,
            n_t: 500,
            ..AdvectConfig::paper()
        }
    }
}

/// Transported Gaussian bump on the periodic unit interval, sampled
/// analytically: column i is s(t_i, x) = s0(x - c t_i) with
/// s0(x) = exp(-(x - mu)^2 / variance) / sqrt(pi variance), grid
/// x_j = j / n_x and times t_i = 0.2 (i - 1) / n_t.
///
/// Transport is evaluated through the nearest periodic image, so the bump
/// re-enters at 0 after leaving at 1; with the default width the remaining
/// images are below the double-precision floor, making column 1 exactly
/// s0 on the grid.
pub fn gen_advecting_wave(cfg: &AdvectConfig) -> Result<DataMatrix> {
    if cfg.n_x < 4 || cfg.n_t < 4 {
        return Err(QmError::Config {
            msg: format!("advect grid {} x {} is below the 4 x 4 minimum", cfg.n_x, cfg.n_t),
        });
    }
    if !(cfg.variance > 0.0 && cfg.variance.is_finite()) {
        return Err(QmError::Config {
            msg: format!("variance must be positive, got {}", cfg.variance),
        });
    }
    let amp = 1.0 / (cfg.variance * std::f64::consts::PI).sqrt();
    let m = DMatrix::from_fn(cfg.n_x, cfg.n_t, |j, i| {
        let x = j as f64 / cfg.n_x as f64;
        let t = 0.2 * (i as f64) / cfg.n_t as f64;
        let w = x - cfg.c * t - cfg.mu;
        let u = w - w.round();
        amp * (-u * u / cfg.variance).exp()
    });
    DataMatrix::new(m)
}

#[derive(Debug, Clone)]
pub struct BurgersConfig {
    pub nu: f64,
    pub n_x: usize,
    pub snapshots_per_traj: usize,
    pub t_end: f64,
    pub mu_train: Vec<f64>,
    pub mu_valtest: f64,
}

impl BurgersConfig {
    pub fn paper() -> Self {
        BurgersConfig {
            nu: 1e-4,
            n_x: 5000,
            snapshots_per_traj: 500,
            t_end: 1.0,
            mu_train: vec![10.0, 11.25, 13.75, 15.0],
            mu_valtest: 12.5,
        }
    }

    pub fn desk() -> Self {
        BurgersConfig {
            n_x: 512,
            ..BurgersConfig::paper()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_x < 8 {
            return Err(QmError::Config {
                msg: format!("burgers n_x = {} is below the minimum of 8", self.n_x),
            });
        }
        if self.snapshots_per_traj < 2 {
            return Err(QmError::Config {
                msg: "need at least 2 snapshots per trajectory".into(),
            });
        }
        if !(self.nu >= 0.0 && self.nu.is_finite()) {
            return Err(QmError::Config {
                msg: format!("viscosity must be finite and nonnegative, got {}", self.nu),
            });
        }
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return Err(QmError::Config {
                msg: format!("t_end must be positive, got {}", self.t_end),
            });
        }
        Ok(())
    }
}

///ds/dt for Burgers: conservative central advection -(s_{j+1}^2 -
/// s_{j-1}^2) / (4 dx) plus central diffusion, periodic in j.
fn burgers_rhs(s: &[f64], nu: f64, dx: f64, out: &mut [f64]) {
    let n = s.len();
    for j in 0..n {
        let jp = if j + 1 == n { 0 } else { j + 1 };
        let jm = if j == 0 { n - 1 } else { j - 1 };
        let adv = -(s[jp] * s[jp] - s[jm] * s[jm]) / (4.0 * dx);
        let diff = nu * (s[jp] - 2.0 * s[j] + s[jm]) / (dx * dx);
        out[j] = adv + diff;
    }
}

/// One classical RK4 step of size dt, via the provided rhs closure.
fn rk4_step(state: &mut Vec<f64>, dt: f64, rhs: &dyn Fn(&[f64], &mut [f64]), scratch: &mut Rk4Scratch) {
    let n = state.len();
    let Rk4Scratch { k1, k2, k3, k4, tmp } = scratch;
    rhs(state, k1);
    for j in 0..n {
        tmp[j] = state[j] + 0.5 * dt * k1[j];
    }
    rhs(tmp, k2);
    for j in 0..n {
        tmp[j] = state[j] + 0.5 * dt * k2[j];
    }
    rhs(tmp, k3);
    for j in 0..n {
        tmp[j] = state[j] + dt * k3[j];
    }
    rhs(tmp, k4);
    for j in 0..n {
        state[j] += dt / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
    }
}

struct Rk4Scratch {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl Rk4Scratch {
    fn new(n: usize) -> Self {
        Rk4Scratch {
            k1: vec![0.0; n],
            k2: vec![0.0; n],
            k3: vec![0.0; n],
            k4: vec![0.0; n],
            tmp: vec![0.0; n],
        }
    }
}

fn max_abs(s: &[f64]) -> f64 {
    s.iter().fold(0.0f64, |acc, v| acc.max(v.abs()))
}

/// Advance `state` from one snapshot time to the next: the gap is cut into
/// the smallest number of equal RK4 steps satisfying the CFL bounds for
/// the current maximum speed. Returns the global step counter for blow-up
/// reporting.
fn advance_gap(
    state: &mut Vec<f64>,
    gap: f64,
    dx: f64,
    nu: f64,
    rhs: &dyn Fn(&[f64], &mut [f64]),
    scratch: &mut Rk4Scratch,
    step_counter: &mut usize,
) -> Result<()> {
    let speed = max_abs(state).max(1e-12);
    let mut dt_max = 0.5 * dx / speed;
    if nu > 0.0 {
        dt_max = dt_max.min(0.25 * dx * dx / nu);
    }
    let steps = (gap / dt_max).ceil().max(1.0) as usize;
    let dt = gap / steps as f64;
    for _ in 0..steps {
        rk4_step(state, dt, rhs, scratch);
        *step_counter += 1;
        let m = max_abs(state);
        if !(m <= BLOWUP_LIMIT) {
            return Err(QmError::Unstable {
                max_abs: m,
                step: *step_counter,
            });
        }
    }
    Ok(())
}

/// One Burgers trajectory on [-1, 1) with initial condition
/// s0(x) = 0.3 exp(-mu^2 (x + 0.5)^2) + 1, returning snapshots equispaced
/// over [0, t_end], the initial state included.
pub fn gen_burgers(cfg: &BurgersConfig, mu: f64) -> Result<DataMatrix> {
    cfg.validate()?;
    let n = cfg.n_x;
    let dx = 2.0 / n as f64;
    let mut state: Vec<f64> = (0..n)
        .map(|j| {
            let x = -1.0 + 2.0 * j as f64 / n as f64;
            0.3 * (-mu * mu * (x + 0.5) * (x + 0.5)).exp() + 1.0
        })
        .collect();
    let snaps = cfg.snapshots_per_traj;
    let gap = cfg.t_end / (snaps - 1) as f64;
    let nu = cfg.nu;
    let rhs = move |s: &[f64], out: &mut [f64]| burgers_rhs(s, nu, dx, out);
    let mut scratch = Rk4Scratch::new(n);
    let mut out = DMatrix::zeros(n, snaps);
    out.column_mut(0).copy_from_slice(&state);
    let mut step_counter = 0usize;
    for col in 1..snaps {
        advance_gap(&mut state, gap, dx, nu, &rhs, &mut scratch, &mut step_counter)?;
        out.column_mut(col).copy_from_slice(&state);
    }
    DataMatrix::new(out)
}

/// The paper's five Burgers trajectories side by side: the four training
/// values of mu, then the val/test value. Trajectories run in parallel;
/// column order is fixed by the config.
pub fn gen_burgers_suite(cfg: &BurgersConfig) -> Result<DataMatrix> {
    cfg.validate()?;
    let mus: Vec<f64> = cfg.mu_train.iter().copied().chain([cfg.mu_valtest]).collect();
    let trajs: Vec<DataMatrix> = mus
        .par_iter()
        .map(|&mu| gen_burgers(cfg, mu))
        .collect::<Result<Vec<_>>>()?;
    let k = cfg.snapshots_per_traj;
    let mut m = DMatrix::zeros(cfg.n_x, k * trajs.len());
    for (t, traj) in trajs.iter().enumerate() {
        m.columns_mut(t * k, k).copy_from(&traj.matrix);
    }
    DataMatrix::new(m)
}

#[derive(Debug, Clone)]
pub struct Wave2dConfig {
    pub grid_per_dim: usize,
    pub n_snapshots: usize,
    pub t_end: f64,
}

impl Wave2dConfig {
    pub fn paper() -> Self {
        Wave2dConfig {
            grid_per_dim: 600,
            n_snapshots: 1600,
            t_end: 8.0,
        }
    }

    pub fn desk() -> Self {
        Wave2dConfig {
            grid_per_dim: 96,
            n_snapshots: 160,
            ..Wave2dConfig::paper()
        }
    }
}

/// Discrete energy (1/2) sum(rho^2 + vx^2 + vy^2) dx^2 of one stacked
/// state column; conserved by the continuous dynamics, nearly so by RK4.
pub fn wave2d_energy(state: &[f64], grid_per_dim: usize) -> f64 {
    let dx = 8.0 / grid_per_dim as f64;
    0.5 * state.iter().map(|v| v * v).sum::<f64>() * dx * dx
}

/// Linear acoustic wave on the periodic square [-4, 4)^2:
/// d rho / dt = -div v, d v / dt = -grad rho, from a Gaussian density bump
/// at (2, 2) and v = 0. States stack rho, then v_x, then v_y, each field
/// row-major: index iy * g + ix with x = -4 + 8 ix / g, y = -4 + 8 iy / g.
pub fn gen_wave2d(cfg: &Wave2dConfig) -> Result<DataMatrix> {
    let g = cfg.grid_per_dim;
    if g < 16 {
        return Err(QmError::Config {
            msg: format!("wave2d grid {g} is below the minimum of 16"),
        });
    }
    if cfg.n_snapshots < 2 {
        return Err(QmError::Config {
            msg: "need at least 2 wave2d snapshots".into(),
        });
    }
    if !(cfg.t_end > 0.0 && cfg.t_end.is_finite()) {
        return Err(QmError::Config {
            msg: format!("t_end must be positive, got {}", cfg.t_end),
        });
    }
    let g2 = g * g;
    let dx = 8.0 / g as f64;
    let mut state = vec![0.0f64; 3 * g2];
    for iy in 0..g {
        let y = -4.0 + dx * iy as f64;
        for ix in 0..g {
            let x = -4.0 + dx * ix as f64;
            let r2 = (x - 2.0) * (x - 2.0) + (y - 2.0) * (y - 2.0);
            let w = 2.0 * std::f64::consts::PI;
            state[iy * g + ix] = (-w * w * r2).exp();
        }
    }

    // Central differences of the three coupled fields; skew-adjoint, so the
    // discrete energy is exactly conserved by the semi-discretization.
    let rhs = move |s: &[f64], out: &mut [f64]| {
        let (rho, rest) = s.split_at(g2);
        let (vx, vy) = rest.split_at(g2);
        let inv2 = 1.0 / (2.0 * dx);
        for iy in 0..g {
            let yp = if iy + 1 == g { 0 } else { iy + 1 };
            let ym = if iy == 0 { g - 1 } else { iy - 1 };
            for ix in 0..g {
                let xp = if ix + 1 == g { 0 } else { ix + 1 };
                let xm = if ix == 0 { g - 1 } else { ix - 1 };
                let at = iy * g + ix;
                let dvx_dx = (vx[iy * g + xp] - vx[iy * g + xm]) * inv2;
                let dvy_dy = (vy[yp * g + ix] - vy[ym * g + ix]) * inv2;
                let drho_dx = (rho[iy * g + xp] - rho[iy * g + xm]) * inv2;
                let drho_dy = (rho[yp * g + ix] - rho[ym * g + ix]) * inv2;
                out[at] = -(dvx_dx + dvy_dy);
                out[g2 + at] = -drho_dx;
                out[2 * g2 + at] = -drho_dy;
            }
        }
    };

    let snaps = cfg.n_snapshots;
    let gap = cfg.t_end / (snaps - 1) as f64;
    // Unit wave speed; dt = 0.2 dx / sqrt(2) sits far inside the RK4
    // stability region for the central stencil in two dimensions.
    let dt_max = 0.2 * dx / std::f64::consts::SQRT_2;
    let mut scratch = Rk4Scratch::new(3 * g2);
    let mut out = DMatrix::zeros(3 * g2, snaps);
    out.column_mut(0).copy_from_slice(&state);
    let mut step_counter = 0usize;
    for col in 1..snaps {
        let steps = (gap / dt_max).ceil().max(1.0) as usize;
        let dt = gap / steps as f64;
        for _ in 0..steps {
            rk4_step(&mut state, dt, &rhs, &mut scratch);
            step_counter += 1;
            let m = max_abs(&state);
            if !(m <= BLOWUP_LIMIT) {
                return Err(QmError::Unstable {
                    max_abs: m,
                    step: step_counter,
                });
            }
        }
        out.column_mut(col).copy_from_slice(&state);
    }
    DataMatrix::new(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitPattern {
    /// Train = odd columns, val = columns congruent to 2 mod 4, test =
    /// columns congruent to 0 mod 4 (1-based); k must be divisible by 4.
    Interleaved,
    /// First four trajectories train; the final trajectory's columns go
    /// alternately to val and test (val first).
    BurgersAlternating { traj_len: usize },
}

/// Carve columns into train/val/test per the pattern.
pub fn split_paper(
    s: &DataMatrix,
    pattern: SplitPattern,
) -> Result<(DataMatrix, DataMatrix, DataMatrix)> {
    let k = s.cols();
    let (train_idx, val_idx, test_idx): (Vec<usize>, Vec<usize>, Vec<usize>) = match pattern {
        SplitPattern::Interleaved => {
            if k % 4 != 0 {
                return Err(QmError::BadSplit {
                    cols: k,
                    msg: "interleaved splitting needs a column count divisible by 4".into(),
                });
            }
            (
                (1..=k).filter(|j| j % 2 == 1).collect(),
                (1..=k).filter(|j| j % 4 == 2).collect(),
                (1..=k).filter(|j| j % 4 == 0).collect(),
            )
        }
        SplitPattern::BurgersAlternating { traj_len } => {
            if traj_len == 0 || traj_len % 2 != 0 {
                return Err(QmError::BadSplit {
                    cols: k,
                    msg: format!("trajectory length {traj_len} must be positive and even"),
                });
            }
            if k != 5 * traj_len {
                return Err(QmError::BadSplit {
                    cols: k,
                    msg: format!("expected 5 trajectories of {traj_len} columns, got {k}"),
                });
            }
            let base = 4 * traj_len;
            (
                (1..=base).collect(),
                (1..=traj_len).filter(|i| i % 2 == 1).map(|i| base + i).collect(),
                (1..=traj_len).filter(|i| i % 2 == 0).map(|i| base + i).collect(),
            )
        }
    };
    Ok((
        s.select_columns(&train_idx)?,
        s.select_columns(&val_idx)?,
        s.select_columns(&test_idx)?,
    ))
}
