//! Central finite-difference oracle for graph gradients.

use super::graph::{Graph, Var};
use super::params::ParamStore;
use crate::error::Result;
use crate::scalar::Scalar;

/// Below this magnitude the relative error is measured against the floor
/// instead, so tiny gradients are compared in absolute terms. With h = 1e-6 and
/// a loss of order one, central differences carry roundoff near 1e-10, which
/// this floor keeps well under the 1e-4 tolerance.
pub const REL_ERR_FLOOR: f64 = 1e-5;

/// Worst disagreement found for one parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckReport {
    pub entries: Vec<ParamCheck>,
    pub tol: f64,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.max_rel_error <= self.tol)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.entries.iter().map(|e| e.max_rel_error).fold(0.0, f64::max)
    }

    pub fn failures(&self) -> impl Iterator<Item = &ParamCheck> {
        self.entries.iter().filter(|e| e.max_rel_error > self.tol)
    }
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_ERR_FLOOR)
}

/// Finite-difference check configuration.
#[derive(Debug, Clone, Copy)]
pub struct GradCheck {
    pub h: f64,
    pub tol: f64,
    /// Negates analytic gradients before comparing; lets callers confirm the
    /// checker actually detects a wrong gradient.
    pub negate_analytic: bool,
}

impl GradCheck {
    pub fn new(h: f64, tol: f64) -> Self {
        assert!(h > 0.0, "finite-difference step must be positive");
        Self {
            h,
            tol,
            negate_analytic: false,
        }
    }

    /// Compares `backward` gradients of `f` with central differences
    /// `(f(θ+h) − f(θ−h)) / 2h` for every entry of every parameter in `store`.
    /// `f` must be deterministic given the store.
    pub fn run<S, F>(&self, f: F, store: &mut ParamStore<S>) -> Result<CheckReport>
    where
        S: Scalar,
        F: Fn(&mut Graph<S>, &ParamStore<S>) -> Result<Var>,
    {
        let mut g = Graph::new();
        let root = f(&mut g, store)?;
        g.backward(root)?;
        let analytic = g.param_grads();

        let eval = |store: &ParamStore<S>| -> Result<f64> {
            let mut g = Graph::new();
            let root = f(&mut g, store)?;
            Ok(g.value(root).item()?.to_f64_lossy())
        };

        let names: Vec<String> = store.names().map(str::to_string).collect();
        let mut entries = Vec::with_capacity(names.len());
        for name in names {
            let n = store.get(&name).map_or(0, |t| t.numel());
            let mut worst = ParamCheck {
                name: name.clone(),
                max_rel_error: 0.0,
                worst_index: 0,
                analytic: 0.0,
                numeric: 0.0,
            };
            for i in 0..n {
                let orig = store.get(&name).expect("listed").data()[i];
                store.get_mut(&name).expect("listed").data_mut()[i] = orig + S::of(self.h);
                let plus = eval(store);
                store.get_mut(&name).expect("listed").data_mut()[i] = orig - S::of(self.h);
                let minus = eval(store);
                store.get_mut(&name).expect("listed").data_mut()[i] = orig;
                let numeric = (plus? - minus?) / (2.0 * self.h);

                let mut a = analytic.get(&name).map_or(0.0, |g| g[i].to_f64_lossy());
                if self.negate_analytic {
                    a = -a;
                }
                let err = relative_error(a, numeric);
                if err > worst.max_rel_error || err.is_nan() {
                    worst = ParamCheck {
                        name: name.clone(),
                        max_rel_error: if err.is_nan() { f64::INFINITY } else { err },
                        worst_index: i,
                        analytic: a,
                        numeric,
                    };
                }
            }
            entries.push(worst);
        }
        Ok(CheckReport { entries, tol: self.tol })
    }
}

/// Shorthand for `GradCheck::new(h, tol).run(f, store)`.
pub fn grad_check<S, F>(f: F, store: &mut ParamStore<S>, h: f64, tol: f64) -> Result<CheckReport>
where
    S: Scalar,
    F: Fn(&mut Graph<S>, &ParamStore<S>) -> Result<Var>,
{
    GradCheck::new(h, tol).run(f, store)
}
