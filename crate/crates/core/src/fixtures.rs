//! Where definition files come from: a directory on disk or the copies
//! compiled into the library.

use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FixtureError {
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("no bundled file named '{0}'")]
    NotBundled(String),
}

/// Name of the bundled campaign scenario.
pub const BUNDLED_SCENARIO: &str = "hefei-chaohu-wuhu";

const BUNDLED: &[(&str, &str)] = &[
    ("links.csv", include_str!("../fixtures/links.csv")),
    ("symmetry.csv", include_str!("../fixtures/symmetry.csv")),
    ("calibration.json", include_str!("../fixtures/calibration.json")),
    ("hcw-fabric.json", include_str!("../fixtures/hcw-fabric.json")),
    ("hcw-network.json", include_str!("../fixtures/hcw-network.json")),
    ("hcw-scenario.json", include_str!("../fixtures/hcw-scenario.json")),
];

pub trait FixtureSource {
    fn read(&self, name: &str) -> Result<String, FixtureError>;

    /// Human-readable location of `name`, for diagnostics.
    fn locate(&self, name: &str) -> String;
}

/// Files resolved relative to a directory.
#[derive(Debug, Clone)]
pub struct DirSource {
    root: PathBuf,
}

impl DirSource {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    /// Source rooted at the directory containing `file`.
    pub fn beside(file: &Path) -> Self {
        Self::new(file.parent().unwrap_or(Path::new(".")))
    }
}

impl FixtureSource for DirSource {
    fn read(&self, name: &str) -> Result<String, FixtureError> {
        let path = self.root.join(name);
        std::fs::read_to_string(&path).map_err(|e| FixtureError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }

    fn locate(&self, name: &str) -> String {
        self.root.join(name).display().to_string()
    }
}

/// The files shipped inside the library.
#[derive(Debug, Clone, Copy, Default)]
pub struct BundledSource;

impl BundledSource {
    pub fn names() -> impl Iterator<Item = &'static str> {
        BUNDLED.iter().map(|(n, _)| *n)
    }

    /// Maps a bundled scenario name to its file.
    pub fn scenario_file(name: &str) -> Option<&'static str> {
        (name == BUNDLED_SCENARIO).then_some("hcw-scenario.json")
    }
}

impl FixtureSource for BundledSource {
    fn read(&self, name: &str) -> Result<String, FixtureError> {
        BUNDLED
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, text)| text.to_string())
            .ok_or_else(|| FixtureError::NotBundled(name.to_string()))
    }

    fn locate(&self, name: &str) -> String {
        format!("<bundled>/{name}")
    }
}
