//! Flat `key = value` run configuration shared by every subcommand.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::data::DatasetSpec;
use crate::denoiser::DenoiserConfig;
use crate::error::{Error, Result};
use crate::schedule::ScheduleConfig;
use crate::trainer::TrainConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub schedule: ScheduleConfig,
    pub denoiser: DenoiserConfig,
    pub train: TrainConfig,
    pub patch_size: usize,
    pub scale: usize,
    /// Number of synthetic training images; used when no data dir is set.
    pub toy: usize,
    pub toy_size: usize,
    /// Held-out images used for validation PSNR.
    pub val_count: usize,
    pub data_dir: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            schedule: ScheduleConfig::default(),
            denoiser: DenoiserConfig::default(),
            train: TrainConfig::default(),
            patch_size: 64,
            scale: 4,
            toy: 64,
            toy_size: 128,
            val_count: 8,
            data_dir: None,
            checkpoint: None,
            out: PathBuf::from("out"),
        }
    }
}

pub const KEYS: &[&str] = &[
    "steps",
    "eta_start",
    "eta_end",
    "curvature_p",
    "base_channels",
    "depth",
    "time_embed_dim",
    "channels",
    "lr",
    "batch_size",
    "max_steps",
    "seed",
    "checkpoint_every",
    "adam_beta1",
    "adam_beta2",
    "adam_eps",
    "clip_grad",
    "patch_size",
    "scale",
    "toy",
    "toy_size",
    "val_count",
    "data_dir",
    "checkpoint",
    "out",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::arg(format!("`{key}`: cannot parse `{value}`")))
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "steps" => self.schedule.steps = parse(key, v)?,
            "eta_start" => self.schedule.eta_start = parse(key, v)?,
            "eta_end" => self.schedule.eta_end = parse(key, v)?,
            "curvature_p" => self.schedule.curvature_p = parse(key, v)?,
            "base_channels" => self.denoiser.base_channels = parse(key, v)?,
            "depth" => self.denoiser.depth = parse(key, v)?,
            "time_embed_dim" => self.denoiser.time_embed_dim = parse(key, v)?,
            "channels" => self.denoiser.image_channels = parse(key, v)?,
            "lr" => self.train.lr = parse(key, v)?,
            "batch_size" => self.train.batch_size = parse(key, v)?,
            "max_steps" => self.train.max_steps = parse(key, v)?,
            "seed" => self.train.seed = parse(key, v)?,
            "checkpoint_every" => self.train.checkpoint_every = parse(key, v)?,
            "adam_beta1" => self.train.adam_beta1 = parse(key, v)?,
            "adam_beta2" => self.train.adam_beta2 = parse(key, v)?,
            "adam_eps" => self.train.adam_eps = parse(key, v)?,
            "clip_grad" => self.train.clip_grad = parse(key, v)?,
            "patch_size" => self.patch_size = parse(key, v)?,
            "scale" => self.scale = parse(key, v)?,
            "toy" => self.toy = parse(key, v)?,
            "toy_size" => self.toy_size = parse(key, v)?,
            "val_count" => self.val_count = parse(key, v)?,
            "data_dir" => self.data_dir = Some(PathBuf::from(v)),
            "checkpoint" => self.checkpoint = Some(PathBuf::from(v)),
            "out" => self.out = PathBuf::from(v),
            _ => return Err(Error::arg(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    /// Applies a config file on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::arg(format!("line {}: expected `key = value`, got `{line}`", n + 1)))?;
            self.set(key.trim(), value)
                .map_err(|e| Error::arg(format!("line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.apply_text(&text)
    }

    pub fn dataset(&self) -> DatasetSpec {
        DatasetSpec {
            root: self.data_dir.clone(),
            patch_size: self.patch_size,
            scale: self.scale,
            seed: self.train.seed,
        }
    }

    /// Field and cross-field checks.
    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        self.denoiser.validate()?;
        self.train.validate()?;
        self.dataset().validate(self.denoiser.size_multiple())?;
        if self.toy_size < self.patch_size {
            return Err(Error::arg(format!(
                "toy_size {} is smaller than patch_size {}",
                self.toy_size, self.patch_size
            )));
        }
        Ok(())
    }

    /// Effective configuration in the file format.
    pub fn render(&self) -> String {
        let opt = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let s = &self.schedule;
        let d = &self.denoiser;
        let t = &self.train;
        let rows: Vec<(&str, String)> = vec![
            ("steps", s.steps.to_string()),
            ("eta_start", s.eta_start.to_string()),
            ("eta_end", s.eta_end.to_string()),
            ("curvature_p", s.curvature_p.to_string()),
            ("base_channels", d.base_channels.to_string()),
            ("depth", d.depth.to_string()),
            ("time_embed_dim", d.time_embed_dim.to_string()),
            ("channels", d.image_channels.to_string()),
            ("lr", t.lr.to_string()),
            ("batch_size", t.batch_size.to_string()),
            ("max_steps", t.max_steps.to_string()),
            ("seed", t.seed.to_string()),
            ("checkpoint_every", t.checkpoint_every.to_string()),
            ("adam_beta1", t.adam_beta1.to_string()),
            ("adam_beta2", t.adam_beta2.to_string()),
            ("adam_eps", t.adam_eps.to_string()),
            ("clip_grad", t.clip_grad.to_string()),
            ("patch_size", self.patch_size.to_string()),
            ("scale", self.scale.to_string()),
            ("toy", self.toy.to_string()),
            ("toy_size", self.toy_size.to_string()),
            ("val_count", self.val_count.to_string()),
            ("data_dir", opt(&self.data_dir)),
            ("checkpoint", opt(&self.checkpoint)),
            ("out", self.out.display().to_string()),
        ];
        let mut out = String::new();
        for (k, v) in rows {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_whitespace() {
        let mut c = RunConfig::default();
        c.apply_text("# header\n\neta_end = 0.8   # truncated\n  max_steps=10\nout = runs/a\n")
            .unwrap();
        assert_eq!(c.schedule.eta_end, 0.8);
        assert_eq!(c.train.max_steps, 10);
        assert_eq!(c.out, PathBuf::from("runs/a"));
    }

    #[test]
    fn errors_name_line_and_key() {
        let mut c = RunConfig::default();
        let e = c.apply_text("steps = 4\nfoo = 1\n").unwrap_err().to_string();
        assert!(e.contains("line 2") && e.contains("foo"), "{e}");
        let e = c.apply_text("lr = fast\n").unwrap_err().to_string();
        assert!(e.contains("lr") && e.contains("fast"), "{e}");
        assert!(c.apply_text("just words\n").is_err());
    }

    #[test]
    fn render_round_trips() {
        let mut c = RunConfig::default();
        c.checkpoint = Some(PathBuf::from("x.ddif"));
        c.train.lr = 1e-3;
        c.schedule.curvature_p = 0.3;
        let mut back = RunConfig::default();
        back.apply_text(&c.render().replace("data_dir = \n", "")).unwrap();
        assert_eq!(back, c);
        for k in KEYS {
            assert!(c.render().contains(&format!("{k} = ")), "{k}");
        }
    }

    #[test]
    fn cross_field_checks() {
        let c = RunConfig {
            patch_size: 60,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        let c = RunConfig {
            toy_size: 32,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        assert!(RunConfig::default().validate().is_ok());
    }
}
