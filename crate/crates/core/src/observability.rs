//! Observability analysis.
//!
//! The continuous matrix is built in a robot-centric chart
//! `x̄ = (R, v̄ = Rᵀv, p̄ = Rᵀp, b_ω, b_a, R_c, p_c)` with perturbations
//! `R ← exp(δ)R`, `R_c ← exp(δ)R_c` and additive elsewhere, columns in the
//! error-state order. Lie derivatives of the camera observation along the
//! input-driven flow are evaluated exactly from its Taylor recursion; only
//! their gradients are numeric. The IMU input may vary in time (given as
//! Taylor coefficients), the camera rate is one held sample.
//!
//! The discrete matrix stacks `H_k`, `H_{k+1}Φ_k`, `H_{k+2}Φ_{k+1}Φ_k`, …
//! in the filter's own error coordinates.

use nalgebra::{DMatrix, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inekf::{camera_jacobian, transition};
use crate::lie::{hat3, Rotation};
use crate::linalg::{nullspace_basis, numeric_rank, singular_values};
use crate::sim::TruthTimeline;
use crate::state::{idx, CovarianceMatrix, RobotState};

/// Relative singular-value threshold for rank decisions.
pub const DEFAULT_TOLERANCE: f64 = 1e-7;
/// Highest Lie-derivative order (seven block rows).
pub const MAX_ORDER: usize = 6;
/// Central-difference step for the gradients.
pub const GRADIENT_STEP: f64 = 1e-5;
/// Below this norm `ω̄` or `v̄` counts as zero when classifying.
pub const ZERO_THRESHOLD: f64 = 1e-9;

/// Robot-centric state.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RobotCentricState {
    pub rotation: Rotation,
    /// `Rᵀv`
    pub velocity: Vector3<f64>,
    /// `Rᵀp`
    pub position: Vector3<f64>,
    pub gyro_bias: Vector3<f64>,
    pub accel_bias: Vector3<f64>,
    pub cam_rotation: Rotation,
    pub cam_position: Vector3<f64>,
}

impl From<&RobotState> for RobotCentricState {
    fn from(s: &RobotState) -> Self {
        let rt = s.rotation().transpose();
        RobotCentricState {
            rotation: s.pose.rotation,
            velocity: rt * s.velocity(),
            position: rt * s.position(),
            gyro_bias: s.gyro_bias,
            accel_bias: s.accel_bias,
            cam_rotation: s.cam_rotation,
            cam_position: s.cam_position,
        }
    }
}

impl RobotCentricState {
    /// Moves chart coordinate `i` by `h`.
    fn perturbed(&self, i: usize, h: f64) -> Self {
        let mut out = *self;
        let mut d = Vector3::zeros();
        d[i % 3] = h;
        match i / 3 {
            0 => out.rotation = Rotation::exp(&d) * self.rotation,
            1 => out.velocity += d,
            2 => out.position += d,
            3 => out.gyro_bias += d,
            4 => out.accel_bias += d,
            5 => out.cam_rotation = Rotation::exp(&d) * self.cam_rotation,
            _ => out.cam_position += d,
        }
        out
    }
}

/// IMU input as Taylor coefficients in time (`omega[j]`, `accel[j]` are
/// the `t^j` coefficients; missing entries are zero) plus one camera
/// rotation-rate sample, held.
#[derive(Clone, Debug, PartialEq)]
pub struct ObsInput {
    pub omega: Vec<Vector3<f64>>,
    pub accel: Vec<Vector3<f64>>,
    pub omega_c: Vector3<f64>,
}

impl ObsInput {
    /// Constant IMU input with the noise-free camera rate
    /// `ω_c = R_cᵀ(ω − b_ω)`.
    pub fn constant(state: &RobotCentricState, omega: Vector3<f64>, accel: Vector3<f64>) -> Self {
        Self::with_jets(state, vec![omega], vec![accel])
    }

    /// Time-varying IMU input; `ω_c` from the current rate.
    pub fn with_jets(state: &RobotCentricState, omega: Vec<Vector3<f64>>, accel: Vec<Vector3<f64>>) -> Self {
        let w0 = omega.first().copied().unwrap_or_else(Vector3::zeros);
        ObsInput {
            omega_c: state.cam_rotation.matrix().transpose() * (w0 - state.gyro_bias),
            omega,
            accel,
        }
    }

    fn omega_at(&self, j: usize) -> Vector3<f64> {
        self.omega.get(j).copied().unwrap_or_else(Vector3::zeros)
    }

    fn accel_at(&self, j: usize) -> Vector3<f64> {
        self.accel.get(j).copied().unwrap_or_else(Vector3::zeros)
    }
}

/// Total time derivatives `d^k/dt^k h_c` for `k = 0..=order` along the
/// flow driven by the input.
///
/// `Ṙ = R ω̄^×`, `v̄̇ = −ω̄^× v̄ + ā + Rᵀg`, `p̄̇ = −ω̄^× p̄ + v̄` with
/// `ω̄ = ω(t) − b_ω`, `ā = a(t) − b_a`. The Taylor coefficients of the flow
/// follow from Cauchy products; the `k`-th derivative is `k!` times the
/// `k`-th coefficient. With a constant input these are the Lie derivatives.
pub fn lie_derivatives(
    state: &RobotCentricState,
    input: &ObsInput,
    gravity: &Vector3<f64>,
    order: usize,
) -> Vec<Vector3<f64>> {
    let w: Vec<Matrix3<f64>> = (0..=order)
        .map(|j| {
            let mut wj = input.omega_at(j);
            if j == 0 {
                wj -= state.gyro_bias;
            }
            hat3(&wj)
        })
        .collect();
    let rct = state.cam_rotation.matrix().transpose();
    let mut r: Vec<Matrix3<f64>> = vec![*state.rotation.matrix()];
    let mut v = vec![state.velocity];
    let mut p = vec![state.position];
    for k in 0..order {
        let n = (k + 1) as f64;
        let mut rk = Matrix3::zeros();
        let mut vk = r[k].transpose() * gravity + input.accel_at(k);
        let mut pk = v[k];
        if k == 0 {
            vk -= state.accel_bias;
        }
        for i in 0..=k {
            rk += r[i] * w[k - i];
            vk -= w[k - i] * v[i];
            pk -= w[k - i] * p[i];
        }
        r.push(rk / n);
        v.push(vk / n);
        p.push(pk / n);
    }
    let mut factorial = 1.0;
    (0..=order)
        .map(|k| {
            if k > 0 {
                factorial *= k as f64;
            }
            let mut h = rct * v[k];
            if k == 0 {
                h += input.omega_c.cross(&(rct * state.cam_position));
            }
            h * factorial
        })
        .collect()
}

/// Stacked gradients of `L^0 h … L^order h` (3(order+1) × 21).
pub fn continuous_obs_matrix(
    state: &RobotCentricState,
    input: &ObsInput,
    gravity: &Vector3<f64>,
    order: usize,
) -> Result<DMatrix<f64>> {
    if order > MAX_ORDER {
        return Err(Error::InvalidConfig(format!("order {order} exceeds {MAX_ORDER}")));
    }
    let rows = 3 * (order + 1);
    let mut m = DMatrix::zeros(rows, idx::DIM);
    let h = GRADIENT_STEP;
    for j in 0..idx::DIM {
        let plus = lie_derivatives(&state.perturbed(j, h), input, gravity, order);
        let minus = lie_derivatives(&state.perturbed(j, -h), input, gravity, order);
        for (k, (a, b)) in plus.iter().zip(&minus).enumerate() {
            let g = (a - b) / (2.0 * h);
            for i in 0..3 {
                m[(3 * k + i, j)] = g[i];
            }
        }
    }
    Ok(m)
}

/// Linear map from the filter's error state to robot-centric chart
/// perturbations: `δv̄ = Rᵀξ_v`, `δp̄ = Rᵀξ_p`, identity elsewhere.
pub fn chart_map(state: &RobotState) -> CovarianceMatrix {
    let mut t = CovarianceMatrix::identity();
    let rt = state.rotation().transpose();
    t.fixed_view_mut::<3, 3>(idx::VEL, idx::VEL).copy_from(&rt);
    t.fixed_view_mut::<3, 3>(idx::POS, idx::POS).copy_from(&rt);
    t
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObsCase {
    Dynamic,
    OmegaZeroVZero,
    OmegaZeroVNonzero,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservabilityReport {
    pub case: ObsCase,
    pub rows: usize,
    pub cols: usize,
    pub rank: usize,
    pub nullity: usize,
    /// Orthonormal nullspace basis, one 21-vector per entry.
    pub nullspace: Vec<Vec<f64>>,
    /// Singular values of the row-balanced matrix, descending.
    pub singular_values: Vec<f64>,
    pub tolerance: f64,
    /// `6 −` rank of the camera-pose columns alone, thresholded against
    /// the whole matrix.
    pub camera_rank_loss: usize,
}

/// `ω̄` counts as zero when its value and all its derivatives vanish.
pub fn classify(state: &RobotCentricState, input: &ObsInput) -> ObsCase {
    let omega_zero = (input.omega_at(0) - state.gyro_bias).norm() < ZERO_THRESHOLD
        && input.omega.iter().skip(1).all(|w| w.norm() < ZERO_THRESHOLD);
    match (omega_zero, state.velocity.norm() < ZERO_THRESHOLD) {
        (false, _) => ObsCase::Dynamic,
        (true, true) => ObsCase::OmegaZeroVZero,
        (true, false) => ObsCase::OmegaZeroVNonzero,
    }
}

/// Scales every 3-row block to unit Frobenius norm. Leaves the rank
/// unchanged but keeps high-order rows from dominating the singular values.
/// Blocks below `1e-8` of the largest are differencing noise and are left
/// as they are.
pub fn balance_rows(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    let norms: Vec<f64> = (0..m.nrows() / 3).map(|b| m.rows(3 * b, 3).norm()).collect();
    let largest = norms.iter().copied().fold(0.0, f64::max);
    for (b, &n) in norms.iter().enumerate() {
        if n > 1e-8 * largest {
            out.rows_mut(3 * b, 3).unscale_mut(n);
        }
    }
    out
}

/// Rank analysis of a (balanced) observability matrix.
pub fn analyze(m: &DMatrix<f64>, case: ObsCase, tol: f64) -> ObservabilityReport {
    let rank = numeric_rank(m, tol);
    let basis = nullspace_basis(m, tol);
    let sv = singular_values(m);
    let floor = tol * sv.first().copied().unwrap_or(0.0);
    let cam_rank = singular_values(&m.columns(idx::CAM_ROT, 6).into_owned())
        .iter()
        .filter(|&&s| s > floor)
        .count();
    ObservabilityReport {
        case,
        rows: m.nrows(),
        cols: m.ncols(),
        rank,
        nullity: m.ncols() - rank,
        nullspace: basis.column_iter().map(|c| c.iter().copied().collect()).collect(),
        singular_values: sv,
        tolerance: tol,
        camera_rank_loss: 6 - cam_rank.min(6),
    }
}

/// Full-order continuous analysis at one state and input.
pub fn classify_case(state: &RobotCentricState, input: &ObsInput, gravity: &Vector3<f64>) -> Result<ObservabilityReport> {
    let m = continuous_obs_matrix(state, input, gravity, MAX_ORDER)?;
    Ok(analyze(&balance_rows(&m), classify(state, input), DEFAULT_TOLERANCE))
}

/// Stacks `H_0`, `H_1Φ_0`, `H_2Φ_1Φ_0`, …; the last `Φ` is unused.
pub fn discrete_obs_matrix(rows: &[(DMatrix<f64>, DMatrix<f64>)]) -> Result<DMatrix<f64>> {
    let Some((h0, _)) = rows.first() else {
        return Err(Error::DimensionMismatch("at least one row is required".into()));
    };
    let n = h0.ncols();
    let total: usize = rows.iter().map(|(h, _)| h.nrows()).sum();
    let mut out = DMatrix::zeros(total, n);
    let mut prod = DMatrix::identity(n, n);
    let mut at = 0;
    for (k, (h, phi)) in rows.iter().enumerate() {
        if h.ncols() != n || phi.nrows() != n || phi.ncols() != n {
            return Err(Error::DimensionMismatch(format!(
                "row {k}: H is {}×{}, Φ is {}×{}, expected {n} columns",
                h.nrows(),
                h.ncols(),
                phi.nrows(),
                phi.ncols()
            )));
        }
        out.rows_mut(at, h.nrows()).copy_from(&(h * &prod));
        at += h.nrows();
        prod = phi * prod;
    }
    Ok(out)
}

/// Camera rows along a simulated walk: `H_c` at `steps` consecutive camera
/// ticks from `start` on, with `Φ` the product of the filter transitions
/// between them, all linearized at the truth.
pub fn walk_rows(
    truth: &TruthTimeline,
    gravity: &Vector3<f64>,
    start: f64,
    steps: usize,
) -> Result<Vec<(DMatrix<f64>, DMatrix<f64>)>> {
    let sched = &truth.schedule;
    let cams: Vec<usize> = truth
        .ticks
        .iter()
        .enumerate()
        .filter(|(_, t)| sched.is_camera(t.k) && t.t >= start)
        .map(|(i, _)| i)
        .take(steps + 1)
        .collect();
    if cams.len() < steps + 1 || steps == 0 {
        return Err(Error::InvalidConfig(format!("not enough camera ticks after t = {start} s")));
    }
    let mut rows = Vec::with_capacity(steps);
    for w in cams.windows(2) {
        let tick = &truth.ticks[w[0]];
        let omega_c = tick.state.cam_rotation.matrix().transpose() * tick.omega;
        let h = camera_jacobian(&tick.state, &omega_c).dense();
        let mut phi = CovarianceMatrix::identity();
        for j in w[0]..w[1] {
            let dt = truth.ticks[j + 1].t - truth.ticks[j].t;
            phi = transition(&truth.ticks[j].state, gravity, dt) * phi;
        }
        rows.push((
            DMatrix::from_column_slice(3, idx::DIM, h.as_slice()),
            DMatrix::from_column_slice(idx::DIM, idx::DIM, phi.as_slice()),
        ));
    }
    Ok(rows)
}

/// Summary of a discrete observability matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscreteReport {
    pub steps: usize,
    pub rank: usize,
    pub nullity: usize,
    /// `‖O [ĝ; 0]‖ / ‖O‖`.
    pub yaw_residual: f64,
    /// `max_i ‖O e_{p,i}‖ / ‖O‖`.
    pub position_residual: f64,
    pub cam_position_rank: usize,
    pub singular_values: Vec<f64>,
    pub tolerance: f64,
}

pub fn analyze_discrete(o: &DMatrix<f64>, gravity: &Vector3<f64>, tol: f64) -> DiscreteReport {
    let scale = o.norm();
    let mut yaw = nalgebra::DVector::zeros(o.ncols());
    let g = gravity.normalize();
    for i in 0..3 {
        yaw[idx::ROT + i] = g[i];
    }
    let position_residual = (0..3)
        .map(|i| o.column(idx::POS + i).norm())
        .fold(0.0, f64::max);
    let rank = numeric_rank(o, tol);
    DiscreteReport {
        steps: o.nrows() / 3,
        rank,
        nullity: o.ncols() - rank,
        yaw_residual: (o * yaw).norm() / scale,
        position_residual: position_residual / scale,
        cam_position_rank: numeric_rank(&o.columns(idx::CAM_POS, 3).into_owned(), tol),
        singular_values: singular_values(o),
        tolerance: tol,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::rng;
    use crate::sim::{generate_truth, ScenarioConfig};
    use nalgebra::DVector;

    fn g() -> Vector3<f64> {
        Vector3::new(0.0, 0.0, -9.81)
    }

    fn random_state(r: &mut rng::SimRng) -> RobotCentricState {
        RobotCentricState {
            rotation: Rotation::exp(&(rng::normal3(r) * 0.5)),
            velocity: rng::normal3(r),
            position: rng::normal3(r),
            gyro_bias: rng::normal3(r) * 0.01,
            accel_bias: rng::normal3(r) * 0.1,
            cam_rotation: Rotation::exp(&(rng::normal3(r) * 0.3)),
            cam_position: rng::normal3(r) * 0.3,
        }
    }

    /// Random IMU input with two time derivatives.
    fn random_input(r: &mut rng::SimRng, s: &RobotCentricState) -> ObsInput {
        let omega = vec![rng::normal3(r), rng::normal3(r), rng::normal3(r)];
        let accel = vec![rng::normal3(r) + Vector3::new(0.0, 0.0, 9.81), rng::normal3(r), rng::normal3(r)];
        ObsInput::with_jets(s, omega, accel)
    }

    fn poly(c: &[Vector3<f64>], t: f64) -> Vector3<f64> {
        c.iter().rev().fold(Vector3::zeros(), |acc, x| acc * t + x)
    }

    fn report(s: &RobotCentricState, u: &ObsInput) -> ObservabilityReport {
        classify_case(s, u, &g()).unwrap()
    }

    /// Singular-value gap around the rank decision, in orders of magnitude.
    fn gap(rep: &ObservabilityReport) -> f64 {
        let sv = &rep.singular_values;
        let top = sv[0];
        let last_kept = sv[rep.rank - 1] / top;
        let first_dropped = sv.get(rep.rank).map_or(0.0, |s| s / top);
        assert!(last_kept > 10.0 * rep.tolerance, "kept σ {last_kept:e}");
        assert!(first_dropped < rep.tolerance / 10.0, "dropped σ {first_dropped:e}");
        (last_kept / first_dropped.max(1e-300)).log10()
    }

    #[test]
    fn order_zero_velocity_block() {
        let s = RobotCentricState {
            rotation: Rotation::identity(),
            velocity: Vector3::new(0.2, 0.0, 0.0),
            position: Vector3::zeros(),
            gyro_bias: Vector3::zeros(),
            accel_bias: Vector3::zeros(),
            cam_rotation: Rotation::identity(),
            cam_position: Vector3::zeros(),
        };
        let u = ObsInput::constant(&s, Vector3::new(0.1, 0.2, 0.3), Vector3::zeros());
        let m = continuous_obs_matrix(&s, &u, &g(), 0).unwrap();
        assert_eq!(m.nrows(), 3);
        let vel = m.view((0, idx::VEL), (3, 3));
        assert!((vel - Matrix3::identity()).amax() < 1e-9);
    }

    #[test]
    fn lie_derivatives_match_flow() {
        // oracle: RK4 integration of the robot-centric flow and finite
        // differences of h in time
        let mut r = rng::substream(11, 0);
        let s = random_state(&mut r);
        let u = random_input(&mut r, &s);
        let l = lie_derivatives(&s, &u, &g(), 3);
        let rct = s.cam_rotation.matrix().transpose();
        let lever = u.omega_c.cross(&(rct * s.cam_position));
        let w = |t: f64| poly(&u.omega, t) - s.gyro_bias;
        let a = |t: f64| poly(&u.accel, t) - s.accel_bias;
        let f = |t: f64, (rm, v): (Matrix3<f64>, Vector3<f64>)| {
            (rm * hat3(&w(t)), -w(t).cross(&v) + a(t) + rm.transpose() * g())
        };
        let flow = |t: f64| {
            let n = 2000;
            let dt = t / n as f64;
            let mut x = (*s.rotation.matrix(), s.velocity);
            let add = |x: (Matrix3<f64>, Vector3<f64>), k: (Matrix3<f64>, Vector3<f64>), c: f64| (x.0 + k.0 * c, x.1 + k.1 * c);
            for i in 0..n {
                let tau = i as f64 * dt;
                let k1 = f(tau, x);
                let k2 = f(tau + dt / 2.0, add(x, k1, dt / 2.0));
                let k3 = f(tau + dt / 2.0, add(x, k2, dt / 2.0));
                let k4 = f(tau + dt, add(x, k3, dt));
                x = add(x, (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0, k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1), dt / 6.0);
            }
            rct * x.1 + lever
        };
        let h = 1e-3;
        let (f0, fp, fm) = (flow(0.0), flow(h), flow(-h));
        let (fp2, fm2) = (flow(2.0 * h), flow(-2.0 * h));
        assert!((l[0] - f0).amax() < 1e-12);
        assert!((l[1] - (fp - fm) / (2.0 * h)).amax() < 1e-5);
        assert!((l[2] - (fp - 2.0 * f0 + fm) / (h * h)).amax() < 1e-4);
        let third = (fp2 - 2.0 * fp + 2.0 * fm - fm2) / (2.0 * h * h * h);
        assert!((l[3] - third).amax() < 1e-2 * l[3].amax().max(1.0));
    }

    #[test]
    fn position_columns_vanish() {
        let mut r = rng::substream(12, 0);
        for _ in 0..20 {
            let s = random_state(&mut r);
            let u = random_input(&mut r, &s);
            let m = continuous_obs_matrix(&s, &u, &g(), MAX_ORDER).unwrap();
            assert!(m.columns(idx::POS, 3).amax() < 1e-9);
        }
    }

    #[test]
    fn dynamic_nullspace_directions() {
        let mut r = rng::substream(13, 0);
        for _ in 0..20 {
            let s = random_state(&mut r);
            let u = random_input(&mut r, &s);
            let m = balance_rows(&continuous_obs_matrix(&s, &u, &g(), MAX_ORDER).unwrap());
            let mut dirs = Vec::new();
            let mut yaw = DVector::zeros(21);
            yaw.rows_mut(idx::ROT, 3).copy_from(&g().normalize());
            dirs.push(yaw);
            for i in 0..3 {
                let mut p = DVector::zeros(21);
                p[idx::POS + i] = 1.0;
                dirs.push(p);
            }
            let mut pc = DVector::zeros(21);
            pc.rows_mut(idx::CAM_POS, 3).copy_from(&(u.omega[0] - s.gyro_bias).normalize());
            dirs.push(pc);
            for d in &dirs {
                assert!((&m * d).amax() < 1e-6, "{}", (&m * d).amax());
            }
        }
    }

    #[test]
    fn dynamic_nullity_is_five() {
        let mut r = rng::substream(14, 0);
        for _ in 0..20 {
            let s = random_state(&mut r);
            let u = random_input(&mut r, &s);
            let rep = report(&s, &u);
            assert_eq!(rep.case, ObsCase::Dynamic);
            assert_eq!(rep.nullity, 5);
            assert!(gap(&rep) > 2.0);
        }
    }

    #[test]
    fn singular_cases() {
        // ω̄ ≡ 0 and ā = −Rᵀg: v̄ is constant and only three row blocks
        // survive, R_cᵀ(δv̄ + v̄^×δφ_c), R_cᵀ(−v̄^×δb_ω − δb_a + (Rᵀg)^×δφ)
        // and R_cᵀ(Rᵀg)^×δb_ω, of ranks 3, 3 and 2: nullity 21 − 8 either way
        let mut r = rng::substream(15, 0);
        let mut s = random_state(&mut r);
        let still = ObsInput::constant(&s, s.gyro_bias, s.accel_bias - s.rotation.matrix().transpose() * g());
        s.velocity = Vector3::zeros();
        let rep = report(&s, &still);
        assert_eq!(rep.case, ObsCase::OmegaZeroVZero);
        assert_eq!(rep.nullity, 13);
        assert_eq!(rep.camera_rank_loss, 6);
        gap(&rep);

        s.velocity = Vector3::new(1.0, 0.0, 0.0);
        let rep = report(&s, &still);
        assert_eq!(rep.case, ObsCase::OmegaZeroVNonzero);
        assert_eq!(rep.nullity, 13);
        // rotation about v̄ and all of p_c
        assert_eq!(rep.camera_rank_loss, 4);
        gap(&rep);
    }

    #[test]
    fn constant_input_gauge() {
        // with ω, a constant the motion is a fixed screw: rotating R_c, v̄,
        // the tilt, ā and ω̄ (through b_ω) together leaves h unchanged (3),
        // and the constant lever term trades against b_a across ω̄ (2)
        let mut r = rng::substream(18, 0);
        for _ in 0..10 {
            let s = random_state(&mut r);
            let u = ObsInput::constant(&s, rng::normal3(&mut r), rng::normal3(&mut r) + Vector3::new(0.0, 0.0, 9.81));
            let rep = report(&s, &u);
            assert_eq!(rep.nullity, 10);
            gap(&rep);
            // the rotational gauge about axis e, in chart coordinates
            let w = u.omega[0] - s.gyro_bias;
            let a = u.accel[0] - s.accel_bias;
            for e in [Vector3::x(), Vector3::y(), Vector3::z()] {
                let mut d = DVector::zeros(21);
                let rm = s.rotation.matrix();
                d.rows_mut(idx::ROT, 3).copy_from(&(-rm * e));
                d.rows_mut(idx::VEL, 3).copy_from(&e.cross(&s.velocity));
                d.rows_mut(idx::POS, 3).copy_from(&e.cross(&s.position));
                d.rows_mut(idx::GYRO_BIAS, 3).copy_from(&(-e.cross(&w)));
                d.rows_mut(idx::ACCEL_BIAS, 3).copy_from(&(-e.cross(&a)));
                d.rows_mut(idx::CAM_ROT, 3).copy_from(&e);
                d.rows_mut(idx::CAM_POS, 3).copy_from(&e.cross(&s.cam_position));
                let m = continuous_obs_matrix(&s, &u, &g(), MAX_ORDER).unwrap();
                assert!((balance_rows(&m) * d).amax() < 1e-6);
            }
        }
    }

    #[test]
    fn chart_consistency_with_filter_jacobian() {
        let mut r = rng::substream(16, 0);
        for _ in 0..10 {
            let rs = random_state(&mut r);
            let state = RobotState {
                pose: crate::lie::Se23::new(rs.rotation, rs.rotation.matrix() * rs.velocity, rs.rotation.matrix() * rs.position),
                gyro_bias: rs.gyro_bias,
                accel_bias: rs.accel_bias,
                cam_rotation: rs.cam_rotation,
                cam_position: rs.cam_position,
            };
            let back = RobotCentricState::from(&state);
            assert!((back.velocity - rs.velocity).amax() < 1e-12);
            let u = random_input(&mut r, &rs);
            let top = continuous_obs_matrix(&rs, &u, &g(), 0).unwrap();
            let t = chart_map(&state);
            let via_chart = top * DMatrix::from_column_slice(21, 21, t.as_slice());
            let h = camera_jacobian(&state, &u.omega_c).dense();
            let h = DMatrix::from_column_slice(3, 21, h.as_slice());
            assert!((via_chart - h).amax() < 1e-7);
        }
    }

    #[test]
    fn discrete_trivial_cases() {
        let mut r = rng::substream(17, 0);
        let h = DMatrix::from_fn(3, 21, |_, _| rng::normal(&mut r));
        let phi = DMatrix::from_fn(21, 21, |_, _| rng::normal(&mut r));
        let one = discrete_obs_matrix(&[(h.clone(), phi.clone())]).unwrap();
        assert_eq!(one, h);
        let h2 = DMatrix::from_fn(3, 21, |_, _| rng::normal(&mut r));
        let id = DMatrix::identity(21, 21);
        let stacked = discrete_obs_matrix(&[(h.clone(), id.clone()), (h2.clone(), id)]).unwrap();
        assert_eq!(stacked.rows(0, 3), h);
        assert_eq!(stacked.rows(3, 3), h2);
        let two = discrete_obs_matrix(&[(h.clone(), phi.clone()), (h2.clone(), phi.clone())]).unwrap();
        assert!((two.rows(3, 3) - &h2 * &phi).amax() < 1e-12);
        assert!(discrete_obs_matrix(&[]).is_err());
        assert!(discrete_obs_matrix(&[(h, DMatrix::identity(20, 20))]).is_err());
    }

    #[test]
    fn discrete_walk_annihilates_yaw_and_position() {
        let cfg = ScenarioConfig {
            duration: 4.0,
            ..ScenarioConfig::default()
        };
        let truth = generate_truth(&cfg).unwrap();
        let rows = walk_rows(&truth, &cfg.gravity(), 2.0, 7).unwrap();
        let o = discrete_obs_matrix(&rows).unwrap();
        let rep = analyze_discrete(&o, &cfg.gravity(), DEFAULT_TOLERANCE);
        assert_eq!(rep.steps, 7);
        assert!(rep.yaw_residual < 1e-8, "{}", rep.yaw_residual);
        assert!(rep.position_residual < 1e-8);
        assert_eq!(rep.cam_position_rank, 3);
    }
}
