//! Name-keyed registries of interchangeable strategies.
//!
//! A family (pairing objective, switching policy, channel mode) is a trait;
//! each variant registers a factory under a short name, and configuration or
//! command-line input picks one by that name.

use std::collections::BTreeMap;
use std::fmt;

use serde_json::Value;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RegistryError {
    #[error("unknown {family} '{name}' (known: {})", known.join(", "))]
    Unknown {
        family: &'static str,
        name: String,
        known: Vec<String>,
    },
    #[error("{family} '{name}': {message}")]
    BadParams {
        family: &'static str,
        name: String,
        message: String,
    },
}

pub type Factory<T> = Box<dyn Fn(&Value) -> Result<Box<T>, String> + Send + Sync>;

pub struct Registry<T: ?Sized> {
    family: &'static str,
    factories: BTreeMap<String, Factory<T>>,
}

impl<T: ?Sized> Registry<T> {
    pub fn new(family: &'static str) -> Self {
        Self {
            family,
            factories: BTreeMap::new(),
        }
    }

    /// Registers `factory` under `name`, replacing any earlier entry.
    pub fn register<F>(&mut self, name: &str, factory: F) -> &mut Self
    where
        F: Fn(&Value) -> Result<Box<T>, String> + Send + Sync + 'static,
    {
        self.factories.insert(name.to_string(), Box::new(factory));
        self
    }

    pub fn create(&self, name: &str, params: &Value) -> Result<Box<T>, RegistryError> {
        let factory = self
            .factories
            .get(name)
            .ok_or_else(|| RegistryError::Unknown {
                family: self.family,
                name: name.to_string(),
                known: self.names(),
            })?;
        factory(params).map_err(|message| RegistryError::BadParams {
            family: self.family,
            name: name.to_string(),
            message,
        })
    }

    pub fn names(&self) -> Vec<String> {
        self.factories.keys().cloned().collect()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.factories.contains_key(name)
    }

    pub fn family(&self) -> &'static str {
        self.family
    }
}

impl<T: ?Sized> fmt::Debug for Registry<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Registry")
            .field("family", &self.family)
            .field("names", &self.names())
            .finish()
    }
}
