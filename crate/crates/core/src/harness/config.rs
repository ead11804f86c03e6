use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ini::Ini;
use sha2::{Digest, Sha256};

use super::HarnessError;

/// Environment variable naming the dataset root.
pub const DATA_ENV: &str = "QUANTBENCH_DATA";

/// Flat `key = value` settings from an INI file plus `--key value`
/// overrides. Keys inside a `[section]` become `section.key`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Config {
    values: BTreeMap<String, String>,
}

impl Config {
    pub fn new() -> Self {
        Config::default()
    }

    pub fn from_ini_str(text: &str) -> Result<Self, HarnessError> {
        let ini = Ini::load_from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        Ok(Config::from_ini(&ini))
    }

    pub fn from_file(path: &Path) -> Result<Self, HarnessError> {
        let ini = Ini::load_from_file(path).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        Ok(Config::from_ini(&ini))
    }

    fn from_ini(ini: &Ini) -> Self {
        let mut values = BTreeMap::new();
        for (section, props) in ini.iter() {
            for (k, v) in props.iter() {
                let key = match section {
                    Some(s) => format!("{s}.{k}"),
                    None => k.to_string(),
                };
                values.insert(key, v.to_string());
            }
        }
        Config { values }
    }

    /// Applies `--key value` pairs; a flag without a value is an error.
    pub fn apply_overrides(&mut self, args: &[String]) -> Result<(), HarnessError> {
        let mut it = args.iter();
        while let Some(flag) = it.next() {
            let key = flag
                .strip_prefix("--")
                .filter(|k| !k.is_empty())
                .ok_or_else(|| HarnessError::Config(format!("expected --key, found {flag:?}")))?;
            if let Some((k, v)) = key.split_once('=') {
                self.set(k, v);
                continue;
            }
            let value = it.next().ok_or_else(|| HarnessError::Config(format!("--{key} needs a value")))?;
            self.set(key, value);
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) {
        self.values.insert(key.replace('-', "_"), value.to_string());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn parse_or<T: FromStr>(&self, key: &str, default: T) -> Result<T, HarnessError> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v.trim().parse().map_err(|_| HarnessError::Config(format!("cannot parse {key} = {v:?}"))),
        }
    }

    /// Comma-separated list; must be nonempty when present.
    pub fn list_or<T: FromStr>(&self, key: &str, default: &[T]) -> Result<Vec<T>, HarnessError>
    where
        T: Clone,
    {
        let Some(v) = self.get(key) else {
            return Ok(default.to_vec());
        };
        let out = v
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| s.parse().map_err(|_| HarnessError::Config(format!("cannot parse {s:?} in {key}"))))
            .collect::<Result<Vec<T>, _>>()?;
        if out.is_empty() {
            return Err(HarnessError::Config(format!("{key} is empty")));
        }
        Ok(out)
    }

    pub fn seed(&self) -> Result<u64, HarnessError> {
        self.parse_or("seed", 0)
    }

    /// `data` key, else the environment variable, else `./data`.
    pub fn data_root(&self) -> PathBuf {
        self.get("data")
            .map(PathBuf::from)
            .or_else(|| std::env::var_os(DATA_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("data"))
    }

    /// Path under the data root, checked to exist.
    pub fn data_path(&self, rel: &str) -> Result<PathBuf, HarnessError> {
        let p = self.data_root().join(rel);
        if !p.exists() {
            return Err(HarnessError::Config(format!("missing dataset {}", p.display())));
        }
        Ok(p)
    }

    /// Path named by `key`, checked to exist.
    pub fn existing_path(&self, key: &str) -> Result<PathBuf, HarnessError> {
        let v = self.get(key).ok_or_else(|| HarnessError::Config(format!("{key} is required")))?;
        let p = PathBuf::from(v);
        if !p.exists() {
            return Err(HarnessError::Config(format!("{key}: {} does not exist", p.display())));
        }
        Ok(p)
    }

    /// SHA-256 over the sorted `key=value` lines, excluding the output path.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for (k, v) in &self.values {
            if k != "out" {
                h.update(format!("{k}={v}\n").as_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ini_and_overrides() {
        let mut c = Config::from_ini_str("seed = 4\nsizes = 256, 512\n[dnn]\nepochs = 3\n").unwrap();
        assert_eq!(c.seed().unwrap(), 4);
        assert_eq!(c.list_or::<usize>("sizes", &[]).unwrap(), vec![256, 512]);
        assert_eq!(c.parse_or("dnn.epochs", 0usize).unwrap(), 3);
        let before = c.hash();
        c.apply_overrides(&["--seed".into(), "9".into(), "--dnn.epochs=5".into()]).unwrap();
        assert_eq!(c.seed().unwrap(), 9);
        assert_eq!(c.parse_or("dnn.epochs", 0usize).unwrap(), 5);
        assert_ne!(before, c.hash());
        assert_eq!(c.hash().len(), 64);
    }

    #[test]
    fn rejects_malformed_overrides() {
        let mut c = Config::new();
        assert!(c.apply_overrides(&["seed".into(), "1".into()]).is_err());
        assert!(c.apply_overrides(&["--seed".into()]).is_err());
        c.set("seed", "x");
        assert!(c.seed().is_err());
        c.set("rates", " , ");
        assert!(c.list_or::<f64>("rates", &[0.0]).is_err());
    }

    #[test]
    fn output_path_does_not_change_hash() {
        let mut a = Config::new();
        a.set("seed", "1");
        let mut b = a.clone();
        b.set("out", "x.csv");
        assert_eq!(a.hash(), b.hash());
    }
}
