//! Scenario presets shipped with the binary.
//!
//! Setting `DCGRID_PRESET_DIR` replaces the built-in set with the `*.toml`
//! files of that directory.

use std::path::Path;

pub const PRESET_DIR_ENV: &str = "DCGRID_PRESET_DIR";

pub const BUILTIN: [(&str, &str); 4] = [
    ("equilibrium-hold", include_str!("../presets/equilibrium-hold.toml")),
    ("step-load", include_str!("../presets/step-load.toml")),
    ("paper-sec5", include_str!("../presets/paper-sec5.toml")),
    ("charge-discharge", include_str!("../presets/charge-discharge.toml")),
];

fn override_dir() -> Option<std::path::PathBuf> {
    std::env::var_os(PRESET_DIR_ENV).filter(|v| !v.is_empty()).map(Into::into)
}

fn list_dir(dir: &Path) -> Result<Vec<String>, String> {
    let entries = std::fs::read_dir(dir).map_err(|e| format!("{}: {e}", dir.display()))?;
    let mut names: Vec<String> = entries
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|x| x == "toml"))
        .filter_map(|p| p.file_stem().map(|s| s.to_string_lossy().into_owned()))
        .collect();
    names.sort();
    Ok(names)
}

/// Preset names in display order.
pub fn names() -> Result<Vec<String>, String> {
    match override_dir() {
        Some(dir) => list_dir(&dir),
        None => Ok(BUILTIN.iter().map(|(n, _)| n.to_string()).collect()),
    }
}

/// The TOML source of a preset, or `None` if there is no such preset.
pub fn source(name: &str) -> Result<Option<String>, String> {
    match override_dir() {
        Some(dir) => {
            if name.contains(['/', '\\']) {
                return Ok(None);
            }
            let path = dir.join(format!("{name}.toml"));
            if !path.is_file() {
                return Ok(None);
            }
            std::fs::read_to_string(&path).map(Some).map_err(|e| format!("{}: {e}", path.display()))
        }
        None => Ok(BUILTIN.iter().find(|(n, _)| *n == name).map(|(_, s)| s.to_string())),
    }
}
