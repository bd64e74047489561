//! Locating configuration files: next to the referring file, then under
//! `$FEMU_CONFIG_DIR`, then among the assets compiled into the crate.

use std::fmt;
use std::path::{Path, PathBuf};

pub const CONFIG_DIR_ENV: &str = "FEMU_CONFIG_DIR";

macro_rules! assets {
    ($($name:literal),* $(,)?) => {
        &[$(($name, include_str!(concat!("../../assets/", $name)))),*]
    };
}

/// Shipped configuration files, addressable by their relative path.
pub static ASSETS: &[(&str, &str)] = assets![
    "models/tsmc65.json",
    "timing/cgra-calibrated.json",
    "accels/cgra-rtl.json",
    "accels/cgra-sw.json",
    "programs/acquire.json",
    "programs/kernel.json",
    "programs/flash-windows.json",
    "scenarios/acquisition.json",
    "scenarios/processing.json",
    "scenarios/flash.json",
];

pub fn embedded(name: &str) -> Option<&'static str> {
    ASSETS.iter().find(|(n, _)| *n == name).map(|(_, text)| *text)
}

/// Asset family, used to expand bare names such as `tsmc65`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AssetKind {
    Model,
    Timing,
    Accelerator,
    Program,
    Scenario,
}

impl AssetKind {
    fn dir(self) -> &'static str {
        match self {
            AssetKind::Model => "models",
            AssetKind::Timing => "timing",
            AssetKind::Accelerator => "accels",
            AssetKind::Program => "programs",
            AssetKind::Scenario => "scenarios",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Origin {
    File(PathBuf),
    Embedded(&'static str),
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Origin::File(p) => write!(f, "{}", p.display()),
            Origin::Embedded(name) => write!(f, "<builtin>/{name}"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Resolver {
    base: Option<PathBuf>,
    config_dir: Option<PathBuf>,
}

impl Default for Resolver {
    fn default() -> Self {
        Self::new(None)
    }
}

impl Resolver {
    /// Resolver relative to `base` (the working directory if `None`), honouring `$FEMU_CONFIG_DIR`.
    pub fn new(base: Option<&Path>) -> Self {
        Self {
            base: base.map(Path::to_path_buf),
            config_dir: std::env::var_os(CONFIG_DIR_ENV).map(PathBuf::from),
        }
    }

    pub fn with_config_dir(mut self, dir: Option<PathBuf>) -> Self {
        self.config_dir = dir;
        self
    }

    /// The same search path, relative to the directory holding `origin`.
    pub fn relative_to(&self, origin: &Origin) -> Self {
        match origin {
            Origin::File(p) => Self {
                base: p.parent().map(Path::to_path_buf),
                config_dir: self.config_dir.clone(),
            },
            Origin::Embedded(_) => self.clone(),
        }
    }

    fn candidates(name: &str, kind: Option<AssetKind>) -> Vec<String> {
        let mut names = vec![name.to_string()];
        if !name.ends_with(".json") {
            names.push(format!("{name}.json"));
        }
        if let Some(kind) = kind {
            if !name.contains('/') {
                names.push(format!("{}/{name}", kind.dir()));
                if !name.ends_with(".json") {
                    names.push(format!("{}/{name}.json", kind.dir()));
                }
            }
        }
        names
    }

    /// An on-disk file, if one matches.
    pub fn find_file(&self, name: &str, kind: Option<AssetKind>) -> Option<PathBuf> {
        let path = Path::new(name);
        if path.is_absolute() {
            return path.is_file().then(|| path.to_path_buf());
        }
        let base = self.base.clone().unwrap_or_else(|| PathBuf::from("."));
        let roots = [Some(base), self.config_dir.clone()];
        for root in roots.iter().flatten() {
            for candidate in Self::candidates(name, kind) {
                let p = root.join(&candidate);
                if p.is_file() {
                    return Some(p);
                }
            }
        }
        None
    }

    /// Text of `name`, from disk or the built-in assets.
    pub fn load(&self, name: &str, kind: Option<AssetKind>) -> Result<(String, Origin), MissingInput> {
        if let Some(path) = self.find_file(name, kind) {
            return std::fs::read_to_string(&path)
                .map(|text| (text, Origin::File(path.clone())))
                .map_err(|e| MissingInput {
                    name: name.to_string(),
                    reason: format!("{}: {e}", path.display()),
                });
        }
        let stripped = name.strip_prefix("./").unwrap_or(name);
        for candidate in Self::candidates(stripped, kind) {
            if let Some((asset, text)) = ASSETS.iter().find(|(n, _)| *n == candidate) {
                return Ok((text.to_string(), Origin::Embedded(asset)));
            }
        }
        Err(MissingInput {
            name: name.to_string(),
            reason: "not found next to the referring file, in $FEMU_CONFIG_DIR, or among built-in assets".into(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("missing input `{name}`: {reason}")]
pub struct MissingInput {
    pub name: String,
    pub reason: String,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bare_names_resolve_to_builtins() {
        let r = Resolver::new(None).with_config_dir(None);
        let (_, origin) = r.load("tsmc65", Some(AssetKind::Model)).unwrap();
        assert_eq!(origin, Origin::Embedded("models/tsmc65.json"));
        assert!(r.load("nope", Some(AssetKind::Model)).is_err());
    }

    #[test]
    fn files_shadow_builtins() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir(dir.path().join("models")).unwrap();
        std::fs::write(dir.path().join("models/tsmc65.json"), "{}").unwrap();
        let r = Resolver::new(Some(dir.path())).with_config_dir(None);
        let (text, origin) = r.load("models/tsmc65.json", None).unwrap();
        assert_eq!(text, "{}");
        assert!(matches!(origin, Origin::File(_)));

        let r = Resolver::new(None).with_config_dir(Some(dir.path().to_path_buf()));
        assert_eq!(r.load("tsmc65", Some(AssetKind::Model)).unwrap().0, "{}");
    }

    #[test]
    fn every_asset_is_valid_json() {
        for (name, text) in ASSETS {
            serde_json::from_str::<serde_json::Value>(text).unwrap_or_else(|e| panic!("{name}: {e}"));
        }
    }
}
