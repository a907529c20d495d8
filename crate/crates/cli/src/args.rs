//! Minimal flag parser: `--name value` pairs with typed accessors.

use std::collections::BTreeMap;
use std::path::PathBuf;

use crate::Failure;

pub struct Flags {
    values: BTreeMap<String, String>,
}

impl Flags {
    /// Parse `--name value` pairs; every flag takes exactly one value.
    pub fn parse(argv: &[String], allowed: &[&str]) -> Result<Flags, Failure> {
        let mut values = BTreeMap::new();
        let mut i = 0;
        while i < argv.len() {
            let token = &argv[i];
            let Some(name) = token.strip_prefix("--") else {
                return Err(Failure::Usage(format!("unexpected argument {token:?}")));
            };
            if !allowed.contains(&name) {
                return Err(Failure::Usage(format!("unknown flag --{name}")));
            }
            let value = argv
                .get(i + 1)
                .ok_or_else(|| Failure::Usage(format!("--{name} needs a value")))?;
            if values.insert(name.to_string(), value.clone()).is_some() {
                return Err(Failure::Usage(format!("--{name} given twice")));
            }
            i += 2;
        }
        Ok(Flags { values })
    }

    pub fn get(&self, name: &str) -> Option<&str> {
        self.values.get(name).map(|s| s.as_str())
    }

    pub fn require(&self, name: &str) -> Result<&str, Failure> {
        self.get(name)
            .ok_or_else(|| Failure::Usage(format!("--{name} is required")))
    }

    pub fn path(&self, name: &str) -> Option<PathBuf> {
        self.get(name).map(PathBuf::from)
    }

    pub fn require_path(&self, name: &str) -> Result<PathBuf, Failure> {
        Ok(PathBuf::from(self.require(name)?))
    }

    pub fn usize_or(&self, name: &str, default: usize) -> Result<usize, Failure> {
        match self.get(name) {
            None => Ok(default),
            Some(s) => s
                .parse()
                .map_err(|_| Failure::Usage(format!("--{name}: {s:?} is not a whole number"))),
        }
    }

    pub fn u64_opt(&self, name: &str) -> Result<Option<u64>, Failure> {
        match self.get(name) {
            None => Ok(None),
            Some(s) => s
                .parse()
                .map(Some)
                .map_err(|_| Failure::Usage(format!("--{name}: {s:?} is not a whole number"))),
        }
    }

    pub fn f64_or(&self, name: &str, default: f64) -> Result<f64, Failure> {
        match self.get(name) {
            None => Ok(default),
            Some(s) => s
                .parse()
                .map_err(|_| Failure::Usage(format!("--{name}: {s:?} is not a number"))),
        }
    }
}
