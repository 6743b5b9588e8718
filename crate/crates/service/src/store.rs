//! One JSON document per object under the data directory, replaced
//! atomically by writing a temporary file and renaming it over the target.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Design,
    Survey,
    Job,
}

impl Kind {
    fn dir(self) -> &'static str {
        match self {
            Kind::Design => "designs",
            Kind::Survey => "surveys",
            Kind::Job => "jobs",
        }
    }

    /// Id prefix; ids are the prefix followed by a decimal counter.
    pub fn prefix(self) -> &'static str {
        match self {
            Kind::Design => "d",
            Kind::Survey => "sv",
            Kind::Job => "j",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Store {
    root: PathBuf,
}

impl Store {
    pub fn open(root: impl Into<PathBuf>) -> io::Result<Self> {
        let root = root.into();
        for kind in [Kind::Design, Kind::Survey, Kind::Job] {
            fs::create_dir_all(root.join(kind.dir()))?;
        }
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn path(&self, kind: Kind, id: &str) -> PathBuf {
        self.root.join(kind.dir()).join(format!("{id}.json"))
    }

    pub fn write<T: Serialize>(&self, kind: Kind, id: &str, value: &T) -> io::Result<()> {
        let target = self.path(kind, id);
        let tmp = target.with_extension("json.tmp");
        let bytes = serde_json::to_vec_pretty(value).map_err(io::Error::other)?;
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&bytes)?;
            f.sync_all()?;
        }
        fs::rename(&tmp, &target)
    }

    /// Every stored document of a kind with its id, sorted by counter.
    pub fn read_all<T: DeserializeOwned>(&self, kind: Kind) -> io::Result<Vec<(String, T)>> {
        let mut out = Vec::new();
        for entry in fs::read_dir(self.root.join(kind.dir()))? {
            let path = entry?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("json") {
                continue;
            }
            let Some(id) = path
                .file_stem()
                .and_then(|s| s.to_str())
                .map(str::to_string)
            else {
                continue;
            };
            if id_number(kind, &id).is_none() {
                continue;
            }
            let bytes = fs::read(&path)?;
            let value = serde_json::from_slice(&bytes).map_err(|e| {
                io::Error::new(
                    io::ErrorKind::InvalidData,
                    format!("{}: {e}", path.display()),
                )
            })?;
            out.push((id, value));
        }
        out.sort_by_key(|(id, _)| id_number(kind, id));
        Ok(out)
    }
}

pub fn id_number(kind: Kind, id: &str) -> Option<u64> {
    id.strip_prefix(kind.prefix())?.parse().ok()
}

pub fn make_id(kind: Kind, n: u64) -> String {
    format!("{}{n}", kind.prefix())
}
