//! Control Lyapunov function `V(x) = ‖ψ(x)‖²`, the bounded Lin–Sontag
//! feedback, and fixed-step RK4 simulation of control-affine plants.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::koopman::{KoopmanHybridModel, MonomialBasis, State, VectorField};
use crate::linalg::dot;

/// `‖ψ(x)‖²`.
pub fn clf_value(basis: &MonomialBasis, x: State) -> f64 {
    let z = basis.eval(x);
    dot(&z, &z)
}

/// `‖x‖² (1 − x1^(2q)) / (1 − x1²)`, the geometric-series form of `‖ψ(x)‖²`.
pub fn clf_value_closed(basis: &MonomialBasis, x: State) -> f64 {
    let [x1, x2] = x;
    let s = x1 * x1;
    let series = if s == 1.0 {
        basis.q() as f64
    } else {
        (1.0 - libm::pow(s, basis.q() as f64)) / (1.0 - s)
    };
    (x1 * x1 + x2 * x2) * series
}

/// Lie derivatives `(a, b)` of `V` along the true drift and input fields:
/// `a = 2ψᵀDψ f0`, `b = 2ψᵀDψ f1`.
pub fn true_rates<F: VectorField + ?Sized, G: VectorField + ?Sized>(
    basis: &MonomialBasis,
    drift: &F,
    input: &G,
    x: State,
) -> (f64, f64) {
    let z = basis.eval(x);
    let a = 2.0 * dot(&z, &basis.lie_derivative(x, drift.eval(x)));
    let b = 2.0 * dot(&z, &basis.lie_derivative(x, input.eval(x)));
    (a, b)
}

/// Rates from the lifted model at `z = ψ(x)`: `a = 2zᵀA_eff z`,
/// `b = 2zᵀ(β + Γz)` for the first input channel.
pub fn model_rates(model: &KoopmanHybridModel, x: State) -> (f64, f64) {
    let z = model.basis.eval(x);
    let a = 2.0 * dot(&z, &model.a_eff.mul_vec(&z));
    let b = model
        .inputs
        .first()
        .map_or(0.0, |ch| 2.0 * dot(&z, &ch.apply(&z)));
    (a, b)
}

/// Bounded universal formula
/// `u = −(a + √(a² + b⁴)) / (b (1 + √(1 + b²)))`, clamped to `±bound`;
/// `u = 0` when `|b| < 1e-12`.
pub fn lin_sontag(a: f64, b: f64, bound: f64) -> f64 {
    assert!(bound > 0.0, "control bound must be positive");
    if b.abs() < 1e-12 {
        return 0.0;
    }
    let b2 = b * b;
    let u = -(a + libm::sqrt(a * a + b2 * b2)) / (b * (1.0 + libm::sqrt(1.0 + b2)));
    u.clamp(-bound, bound)
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<State>,
    /// One control per step; one shorter than `states`.
    pub controls: Vec<f64>,
}

/// Classical RK4 with the control held constant over each step.
///
/// `dynamics(x, u)` gives `ẋ`; `controller(x)` is evaluated at the start of
/// every step.
pub fn simulate<D, C>(
    dynamics: D,
    mut controller: C,
    x0: State,
    dt: f64,
    horizon: f64,
) -> Result<Trajectory>
where
    D: Fn(State, f64) -> State,
    C: FnMut(State) -> f64,
{
    if !(dt > 0.0) || !(horizon >= dt) {
        return Err(Error::param("dt", "need 0 < dt <= horizon"));
    }
    let steps = libm::round(horizon / dt) as usize;
    let mut times = Vec::with_capacity(steps + 1);
    let mut states = Vec::with_capacity(steps + 1);
    let mut controls = Vec::with_capacity(steps);
    let mut x = x0;
    times.push(0.0);
    states.push(x);
    let axpy = |x: State, h: f64, k: State| [x[0] + h * k[0], x[1] + h * k[1]];
    for step in 1..=steps {
        let u = controller(x);
        let k1 = dynamics(x, u);
        let k2 = dynamics(axpy(x, 0.5 * dt, k1), u);
        let k3 = dynamics(axpy(x, 0.5 * dt, k2), u);
        let k4 = dynamics(axpy(x, dt, k3), u);
        for i in 0..2 {
            x[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        if !(x[0].is_finite() && x[1].is_finite() && u.is_finite()) {
            return Err(Error::NonFinite("trajectory state"));
        }
        times.push(step as f64 * dt);
        states.push(x);
        controls.push(u);
    }
    Ok(Trajectory {
        times,
        states,
        controls,
    })
}

/// Largest Euclidean distance between matching states.
pub fn compare_trajectories(t1: &Trajectory, t2: &Trajectory) -> Result<f64> {
    if t1.times.len() != t2.times.len()
        || t1
            .times
            .iter()
            .zip(&t2.times)
            .any(|(a, b)| (a - b).abs() > 1e-12)
    {
        return Err(Error::GridMismatch);
    }
    Ok(t1
        .states
        .iter()
        .zip(&t2.states)
        .map(|(a, b)| {
            let (d0, d1) = (a[0] - b[0], a[1] - b[1]);
            libm::sqrt(d0 * d0 + d1 * d1)
        })
        .fold(0.0, f64::max))
}

/// Largest one-step increase of `V` along a trajectory, ignoring steps that
/// start within `floor` of the origin.
pub fn max_clf_increase(basis: &MonomialBasis, traj: &Trajectory, floor: f64) -> f64 {
    traj.states
        .windows(2)
        .filter(|w| libm::sqrt(w[0][0] * w[0][0] + w[0][1] * w[0][1]) >= floor)
        .map(|w| clf_value(basis, w[1]) - clf_value(basis, w[0]))
        .fold(f64::NEG_INFINITY, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::koopman::{sample_states, state_lattice, CstrDrift, CstrInput};
    use crate::rng;
    use rand::Rng;

    fn q3() -> MonomialBasis {
        MonomialBasis::new(3).unwrap()
    }

    #[test]
    fn clf_examples() {
        let b = q3();
        assert_eq!(clf_value(&b, [0.0, 0.0]), 0.0);
        assert!((clf_value(&b, [0.5, 0.0]) - 0.328125).abs() < 1e-15);
        assert!((clf_value_closed(&b, [0.5, 0.0]) - 0.328125).abs() < 1e-15);
    }

    #[test]
    fn clf_forms_agree_and_positive() {
        let b = q3();
        for x in state_lattice(41, -0.25, 0.25) {
            let v = clf_value(&b, x);
            assert!((v - clf_value_closed(&b, x)).abs() < 1e-10);
            if x != [0.0, 0.0] {
                assert!(v > 0.0);
            }
        }
    }

    #[test]
    fn true_rates_match_finite_differences() {
        let b = q3();
        let h = 1e-6;
        assert_eq!(
            true_rates(&b, &CstrDrift, &CstrInput, [0.0, 0.0]),
            (0.0, 0.0)
        );
        for x in sample_states(10, 17) {
            let (a, rb) = true_rates(&b, &CstrDrift, &CstrInput, x);
            for u in [0.0, 1.0] {
                let f = |s: State| {
                    let (d, g) = (CstrDrift.eval(s), CstrInput.eval(s));
                    [d[0] + u * g[0], d[1] + u * g[1]]
                };
                let v = f(x);
                let fwd = [x[0] + h * v[0], x[1] + h * v[1]];
                let bwd = [x[0] - h * v[0], x[1] - h * v[1]];
                let fd = (clf_value(&b, fwd) - clf_value(&b, bwd)) / (2.0 * h);
                assert!((fd - (a + rb * u)).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn lin_sontag_examples() {
        assert_eq!(lin_sontag(3.0, 0.0, 1.0), 0.0);
        assert!((lin_sontag(0.0, 1.0, 1.0) + 0.41421).abs() < 1e-5);
        let mut r = rng::seeded(2);
        for _ in 0..200 {
            let b: f64 = r.gen_range(-5.0..5.0);
            let a: f64 = r.gen_range(-5.0..5.0);
            let u = lin_sontag(a, b, 1.0);
            assert!(u.abs() <= 1.0);
            if lin_sontag(-1.0, b, 1.0) != 0.0 {
                assert!(lin_sontag(-1.0, b, 1.0).signum() == -b.signum());
            }
            // the unclamped law never pushes V uphill beyond the drift
            let big = lin_sontag(a, b, 1e9);
            assert!(b * big <= 0.0);
            if a < 0.0 {
                assert!(a + b * big < 0.0);
            }
        }
    }

    #[test]
    fn constant_dynamics_stay_put() {
        let traj = simulate(|_, _| [0.0, 0.0], |x| x[0], [0.3, -0.2], 0.1, 1.0).unwrap();
        assert_eq!(traj.states.len(), 11);
        assert_eq!(traj.controls.len(), 10);
        assert!(traj.states.iter().all(|&s| s == [0.3, -0.2]));
    }

    fn decay_error(dt: f64) -> f64 {
        let traj = simulate(|x, _| [-x[0], -x[1]], |_| 0.0, [1.0, 1.0], dt, 1.0).unwrap();
        let end = traj.states.last().unwrap();
        let exact = libm::exp(-1.0);
        (end[0] - exact).abs().max((end[1] - exact).abs())
    }

    #[test]
    fn rk4_exponential_decay() {
        assert!(decay_error(0.01) < 1e-8);
    }

    #[test]
    fn rk4_fourth_order() {
        let ratio = decay_error(0.1) / decay_error(0.05);
        assert!((14.0..=18.0).contains(&ratio), "{ratio}");
    }

    #[test]
    fn closed_loop_clf_decreases() {
        let b = q3();
        let plant = |x: State, u: f64| {
            let (d, g) = (CstrDrift.eval(x), CstrInput.eval(x));
            [d[0] + u * g[0], d[1] + u * g[1]]
        };
        for x0 in sample_states(3, 40) {
            let ctrl = |x: State| {
                let (a, rb) = true_rates(&b, &CstrDrift, &CstrInput, x);
                lin_sontag(a, rb, 1.0)
            };
            let traj = simulate(plant, ctrl, x0, 0.01, 10.0).unwrap();
            assert!(max_clf_increase(&b, &traj, 1e-6) <= 1e-6);
        }
    }

    #[test]
    fn simulate_rejects_blowup_and_bad_step() {
        assert!(simulate(
            |x, _| [x[0] * x[0] * 1e6, 0.0],
            |_| 0.0,
            [1.0, 0.0],
            0.1,
            10.0
        )
        .is_err());
        assert!(simulate(|_, _| [0.0, 0.0], |_| 0.0, [0.0, 0.0], 0.0, 1.0).is_err());
    }

    #[test]
    fn comparison_examples() {
        let t = simulate(|x, _| [-x[0], 0.5], |_| 0.0, [0.2, 0.1], 0.1, 1.0).unwrap();
        assert_eq!(compare_trajectories(&t, &t).unwrap(), 0.0);
        let mut shifted = t.clone();
        for s in shifted.states.iter_mut() {
            s[0] += 0.3;
            s[1] -= 0.4;
        }
        assert!((compare_trajectories(&t, &shifted).unwrap() - 0.5).abs() < 1e-12);
        let short = simulate(|x, _| [-x[0], 0.5], |_| 0.0, [0.2, 0.1], 0.1, 0.5).unwrap();
        assert_eq!(compare_trajectories(&t, &short), Err(Error::GridMismatch));
    }
}
