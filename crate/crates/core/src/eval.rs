//! Budgeted, caching access to the expensive objective.

use std::collections::HashMap;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("objective returned a non-finite value at {point:?}")]
    ObjectiveFailure { point: Vec<f64> },
    #[error("evaluation budget of {budget} exhausted")]
    BudgetExceeded { budget: usize },
}

/// Objective callback type used throughout the engines.
pub type Objective<'a> = &'a dyn Fn(&[f64]) -> f64;

/// Wraps an objective with a cache keyed on exact coordinates, a distinct
/// evaluation counter and an optional budget.
pub struct Evaluator<'a> {
    f: Objective<'a>,
    cache: HashMap<Vec<u64>, f64>,
    budget: Option<usize>,
    history: Vec<(Vec<f64>, f64)>,
}

impl<'a> Evaluator<'a> {
    pub fn new(f: Objective<'a>, budget: Option<usize>) -> Self {
        Self {
            f,
            cache: HashMap::new(),
            budget,
            history: Vec::new(),
        }
    }

    fn key(x: &[f64]) -> Vec<u64> {
        // Normalizing −0.0 keeps the two zeros on one cache entry.
        x.iter().map(|v| (v + 0.0).to_bits()).collect()
    }

    pub fn cached(&self, x: &[f64]) -> Option<f64> {
        self.cache.get(&Self::key(x)).copied()
    }

    /// Evaluates `f(x)`, reusing the cached value when `x` was seen before.
    pub fn eval(&mut self, x: &[f64]) -> Result<f64, EvalError> {
        let key = Self::key(x);
        if let Some(&v) = self.cache.get(&key) {
            return Ok(v);
        }
        if let Some(budget) = self.budget {
            if self.history.len() >= budget {
                return Err(EvalError::BudgetExceeded { budget });
            }
        }
        let v = (self.f)(x);
        if !v.is_finite() {
            return Err(EvalError::ObjectiveFailure { point: x.to_vec() });
        }
        self.cache.insert(key, v);
        self.history.push((x.to_vec(), v));
        Ok(v)
    }

    /// Number of distinct points at which the callback fired.
    pub fn count(&self) -> usize {
        self.history.len()
    }

    pub fn remaining(&self) -> Option<usize> {
        self.budget.map(|b| b.saturating_sub(self.history.len()))
    }

    pub fn budget(&self) -> Option<usize> {
        self.budget
    }

    pub fn history(&self) -> &[(Vec<f64>, f64)] {
        &self.history
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::cell::Cell;

    #[test]
    fn caches_and_counts_distinct_points() {
        let calls = Cell::new(0);
        let f = |x: &[f64]| {
            calls.set(calls.get() + 1);
            x[0] * x[0]
        };
        let mut ev = Evaluator::new(&f, None);
        assert_eq!(ev.eval(&[2.0]).unwrap(), 4.0);
        assert_eq!(ev.eval(&[2.0]).unwrap(), 4.0);
        assert_eq!(ev.eval(&[-0.0]).unwrap(), 0.0);
        assert_eq!(ev.eval(&[0.0]).unwrap(), 0.0);
        assert_eq!(ev.count(), 2);
        assert_eq!(calls.get(), 2);
    }

    #[test]
    fn budget_and_failure() {
        let f = |x: &[f64]| if x[0] < 0.0 { f64::NAN } else { x[0] };
        let mut ev = Evaluator::new(&f, Some(2));
        ev.eval(&[1.0]).unwrap();
        assert!(matches!(
            ev.eval(&[-1.0]),
            Err(EvalError::ObjectiveFailure { .. })
        ));
        ev.eval(&[2.0]).unwrap();
        assert_eq!(
            ev.eval(&[3.0]),
            Err(EvalError::BudgetExceeded { budget: 2 })
        );
        assert_eq!(ev.eval(&[1.0]).unwrap(), 1.0);
    }
}
