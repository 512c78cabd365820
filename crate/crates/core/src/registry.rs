//! String-addressable objectives. Every objective is certified scale-invariant
//! before it is handed out.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};

use crate::certify::{self, CLOSED_FORM_TOL, NETWORK_TOL};
use crate::error::{Error, Result};
use crate::objective::{Objective, ObjectiveKind, ToyRational};
use crate::sinet::{self, SiNet};

const CERT_SEED: u64 = 0x5eed;

/// A certified objective together with its suggested starting point.
#[derive(Clone)]
pub struct Registered {
    pub objective: Arc<dyn Objective>,
    pub default_x0: Option<Vec<f64>>,
    /// Present for network objectives.
    pub net: Option<Arc<SiNet>>,
}

impl std::fmt::Debug for Registered {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Registered")
            .field("objective", &self.objective.id())
            .field("dim", &self.objective.dim())
            .finish()
    }
}

#[derive(Default)]
pub struct Registry {
    entries: Mutex<BTreeMap<String, Registered>>,
}

impl Registry {
    pub fn new() -> Self {
        Registry::default()
    }

    /// Registers an objective after certifying it at the tolerance that fits
    /// its kind.
    pub fn register(&self, objective: Arc<dyn Objective>, default_x0: Option<Vec<f64>>) -> Result<Registered> {
        let tol = match objective.spec().kind {
            ObjectiveKind::SiNet => NETWORK_TOL,
            _ => CLOSED_FORM_TOL,
        };
        certify::certify(objective.as_ref(), tol, CERT_SEED)?;
        let entry = Registered { objective: objective.clone(), default_x0, net: None };
        self.entries.lock().unwrap().insert(objective.id().to_string(), entry.clone());
        Ok(entry)
    }

    /// Looks up `id`, building and certifying the built-in objectives
    /// (`toy-rational`, `si-net:<preset>`) on first use.
    pub fn resolve(&self, id: &str) -> Result<Registered> {
        if let Some(e) = self.entries.lock().unwrap().get(id) {
            return Ok(e.clone());
        }
        let entry = if id == ToyRational::ID {
            self.register(Arc::new(ToyRational), Some(vec![0.01, 1.0]))?
        } else if let Some(name) = id.strip_prefix(&format!("{}:", SiNet::ID_PREFIX)) {
            let preset = sinet::preset(name).ok_or_else(|| Error::UnknownObjective(id.to_string()))?;
            let net = Arc::new(preset.build()?);
            let x0 = net.initial_point().to_vec();
            let mut entry = self.register(net.clone(), Some(x0))?;
            entry.net = Some(net);
            self.entries.lock().unwrap().insert(id.to_string(), entry.clone());
            entry
        } else {
            return Err(Error::UnknownObjective(id.to_string()));
        };
        Ok(entry)
    }

    pub fn known_ids() -> Vec<String> {
        let mut ids = vec![ToyRational::ID.to_string()];
        ids.extend(sinet::PRESETS.iter().map(|p| format!("{}:{p}", SiNet::ID_PREFIX)));
        ids
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objective::Quadratic;

    #[test]
    fn builtins_resolve() {
        let reg = Registry::new();
        let toy = reg.resolve("toy-rational").unwrap();
        assert_eq!(toy.objective.id(), "toy-rational");
        assert_eq!(toy.default_x0, Some(vec![0.01, 1.0]));
        let net = reg.resolve("si-net:tiny").unwrap();
        assert!(net.net.is_some());
        assert_eq!(net.objective.id(), "si-net:tiny");
        // Cached on second lookup.
        assert!(Arc::ptr_eq(&reg.resolve("si-net:tiny").unwrap().objective, &net.objective));
    }

    #[test]
    fn unknown_ids_are_rejected() {
        let reg = Registry::new();
        assert!(matches!(reg.resolve("nope"), Err(Error::UnknownObjective(_))));
        assert!(matches!(reg.resolve("si-net:missing"), Err(Error::UnknownObjective(_))));
    }

    #[test]
    fn non_invariant_objective_fails_registration() {
        let reg = Registry::new();
        let err = reg.register(Arc::new(Quadratic { dim: 3 }), None).unwrap_err();
        assert!(matches!(err, Error::Certification { .. }), "{err}");
    }
}
