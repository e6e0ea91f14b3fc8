use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::features::INPUT_DIM;
use crate::kv::{join_list, KeyValues};
use crate::PunctuationClass;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arch {
    Cnn,
    Blstm,
}

impl Arch {
    pub fn as_str(self) -> &'static str {
        match self {
            Arch::Cnn => "cnn",
            Arch::Blstm => "blstm",
        }
    }
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cnn" => Ok(Arch::Cnn),
            "blstm" => Ok(Arch::Blstm),
            _ => Err(Error::Config(format!("unknown architecture {s:?} (expected cnn or blstm)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CnnConfig {
    pub filters: usize,
    pub kernels: Vec<usize>,
    pub dilations: Vec<usize>,
}

impl Default for CnnConfig {
    fn default() -> Self {
        CnnConfig {
            filters: 128,
            kernels: vec![3, 3, 3, 3, 3, 20],
            dilations: vec![1, 2, 2, 2, 2, 1],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlstmConfig {
    pub layers: usize,
    /// Units per direction.
    pub hidden: usize,
}

impl Default for BlstmConfig {
    fn default() -> Self {
        BlstmConfig { layers: 4, hidden: 128 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ArchConfig {
    Cnn(CnnConfig),
    Blstm(BlstmConfig),
}

/// Architecture descriptor stored in checkpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub arch: ArchConfig,
    pub input_dim: usize,
    pub classes: usize,
    /// Whether the inputs carry the two timing columns. Without them those
    /// columns are fed as zeros.
    pub time_features: bool,
    pub dropout: f64,
    pub noise_sigma: f64,
    pub weight_decay: f64,
}

impl ModelConfig {
    pub fn cnn() -> Self {
        Self::with_arch(ArchConfig::Cnn(CnnConfig::default()))
    }

    pub fn blstm() -> Self {
        Self::with_arch(ArchConfig::Blstm(BlstmConfig::default()))
    }

    pub fn for_arch(arch: Arch) -> Self {
        match arch {
            Arch::Cnn => Self::cnn(),
            Arch::Blstm => Self::blstm(),
        }
    }

    fn with_arch(arch: ArchConfig) -> Self {
        ModelConfig {
            arch,
            input_dim: INPUT_DIM,
            classes: PunctuationClass::COUNT,
            time_features: true,
            dropout: 0.5,
            noise_sigma: 0.1,
            weight_decay: 0.001,
        }
    }

    pub fn kind(&self) -> Arch {
        match self.arch {
            ArchConfig::Cnn(_) => Arch::Cnn,
            ArchConfig::Blstm(_) => Arch::Blstm,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.input_dim == 0 || self.classes == 0 {
            return fail("input_dim and classes must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout {} must be in [0, 1)", self.dropout));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return fail(format!("noise_sigma {} must be finite and >= 0", self.noise_sigma));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return fail(format!("weight_decay {} must be finite and >= 0", self.weight_decay));
        }
        match &self.arch {
            ArchConfig::Cnn(c) => {
                if c.filters == 0 || c.kernels.is_empty() {
                    return fail("cnn needs at least one layer and one filter".into());
                }
                if c.kernels.len() != c.dilations.len() {
                    return fail(format!(
                        "{} kernel widths but {} dilations",
                        c.kernels.len(),
                        c.dilations.len()
                    ));
                }
                if c.kernels.contains(&0) || c.dilations.contains(&0) {
                    return fail("kernel widths and dilations must be positive".into());
                }
            }
            ArchConfig::Blstm(b) => {
                if b.layers == 0 || b.hidden == 0 {
                    return fail("blstm needs at least one layer and one unit".into());
                }
            }
        }
        Ok(())
    }

    /// Canonical text form: one `key = value` line per field in a fixed
    /// order, with only the keys of the selected architecture.
    pub fn to_text(&self) -> String {
        let mut out = format!("arch = {}\ninput_dim = {}\nclasses = {}\n", self.kind(), self.input_dim, self.classes);
        match &self.arch {
            ArchConfig::Cnn(c) => {
                out += &format!(
                    "cnn_filters = {}\ncnn_kernels = {}\ncnn_dilations = {}\n",
                    c.filters,
                    join_list(&c.kernels),
                    join_list(&c.dilations)
                );
            }
            ArchConfig::Blstm(b) => {
                out += &format!("blstm_layers = {}\nblstm_hidden = {}\n", b.layers, b.hidden);
            }
        }
        out += &format!(
            "time_features = {}\ndropout = {}\nnoise_sigma = {}\nweight_decay = {}\n",
            self.time_features, self.dropout, self.noise_sigma, self.weight_decay
        );
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut kv = KeyValues::parse(text)?;
        let config = Self::take_from(&mut kv)?;
        kv.finish()?;
        Ok(config)
    }

    /// Reads model keys out of `kv`, leaving other keys in place. Missing
    /// keys take their defaults.
    pub fn take_from(kv: &mut KeyValues) -> Result<Self> {
        let arch: Arch = kv.take_or("arch", Arch::Cnn)?;
        let mut config = Self::for_arch(arch);
        let other: &[&str] = match arch {
            Arch::Cnn => &["blstm_layers", "blstm_hidden"],
            Arch::Blstm => &["cnn_filters", "cnn_kernels", "cnn_dilations"],
        };
        if let Some(key) = other.iter().find(|k| kv.contains(k)) {
            return Err(Error::Config(format!("{key} does not apply to arch = {arch}")));
        }
        config.input_dim = kv.take_or("input_dim", config.input_dim)?;
        config.classes = kv.take_or("classes", config.classes)?;
        config.time_features = kv.take_or("time_features", config.time_features)?;
        config.dropout = kv.take_or("dropout", config.dropout)?;
        config.noise_sigma = kv.take_or("noise_sigma", config.noise_sigma)?;
        config.weight_decay = kv.take_or("weight_decay", config.weight_decay)?;
        match &mut config.arch {
            ArchConfig::Cnn(c) => {
                c.filters = kv.take_or("cnn_filters", c.filters)?;
                if let Some(k) = kv.take_list("cnn_kernels")? {
                    c.kernels = k;
                }
                if let Some(d) = kv.take_list("cnn_dilations")? {
                    c.dilations = d;
                }
            }
            ArchConfig::Blstm(b) => {
                b.layers = kv.take_or("blstm_layers", b.layers)?;
                b.hidden = kv.take_or("blstm_hidden", b.hidden)?;
            }
        }
        config.validate()?;
        Ok(config)
    }
}
