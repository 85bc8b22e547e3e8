//! Typed hyperparameter records with defaults, validation, and the flat
//! `key=value` config-file format used by the CLI and checkpoint headers.

use crate::error::{Error, Result};

/// Architecture hyperparameters. Defaults mirror the base configuration:
/// sequences of 256 steps embedded into D = 128, three encoder blocks with
/// fast-weight chunks of 32 tokens, and a four-level persistent memory with
/// update frequencies [1, 4, 16, 64] batches.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub seq_len: usize,
    pub embed_dim: usize,
    pub latent_dim: usize,
    pub n_encoder_blocks: usize,
    pub n_seasonal_decoder_blocks: usize,
    pub titans_chunk: usize,
    pub titans_alpha: f64,
    pub titans_eta: f64,
    pub titans_clamp: f64,
    pub cms_levels: usize,
    pub cms_freqs: Vec<usize>,
    pub cms_base_rate: f64,
    pub decomp_kernel: usize,
    pub dropout_p: f64,
    pub mask_ratio: f64,
    pub lambda_kl: f64,
    pub lambda_mtsm: f64,
    pub stem_kernel: usize,
    pub max_len: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            seq_len: 256,
            embed_dim: 128,
            latent_dim: 64,
            n_encoder_blocks: 3,
            n_seasonal_decoder_blocks: 2,
            titans_chunk: 32,
            titans_alpha: 0.99,
            titans_eta: 0.01,
            titans_clamp: 5.0,
            cms_levels: 4,
            cms_freqs: vec![1, 4, 16, 64],
            cms_base_rate: 0.1,
            decomp_kernel: 25,
            dropout_p: 0.1,
            mask_ratio: 0.2,
            lambda_kl: 0.01,
            lambda_mtsm: 0.5,
            stem_kernel: 7,
            max_len: 512,
        }
    }
}

/// Optimization hyperparameters for both training phases.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub pretrain_patience: usize,
    pub pretrain_min_delta: f64,
    pub cls_patience: usize,
    pub cls_min_delta: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            batch_size: 256,
            max_epochs: 300,
            pretrain_patience: 5,
            pretrain_min_delta: 0.5,
            cls_patience: 10,
            cls_min_delta: 1e-3,
            seed: 42,
        }
    }
}

/// Check every invariant, returning the full violation list rather than
/// stopping at the first problem.
pub fn validate(cfg: &ModelConfig) -> std::result::Result<(), Vec<String>> {
    let mut v = Vec::new();
    if cfg.seq_len == 0 {
        v.push("seq_len must be positive".into());
    }
    if cfg.seq_len > cfg.max_len {
        v.push(format!(
            "seq_len {} exceeds max_len {}",
            cfg.seq_len, cfg.max_len
        ));
    }
    if cfg.embed_dim < 2 {
        v.push("embed_dim must be at least 2".into());
    }
    if cfg.latent_dim == 0 {
        v.push("latent_dim must be positive".into());
    }
    if cfg.n_encoder_blocks == 0 {
        v.push("n_encoder_blocks must be positive".into());
    }
    if cfg.titans_chunk == 0 {
        v.push("titans_chunk must be positive".into());
    }
    if !(cfg.titans_alpha > 0.0 && cfg.titans_alpha <= 1.0) {
        v.push(format!(
            "titans_alpha must satisfy 0 < alpha <= 1, got {}",
            cfg.titans_alpha
        ));
    }
    if !(cfg.titans_eta > 0.0) {
        v.push(format!("titans_eta must be positive, got {}", cfg.titans_eta));
    }
    if !(cfg.titans_clamp > 0.0) {
        v.push(format!(
            "titans_clamp must be positive, got {}",
            cfg.titans_clamp
        ));
    }
    if cfg.cms_freqs.len() != cfg.cms_levels {
        v.push(format!(
            "cms freq list length {} does not equal cms_levels {}",
            cfg.cms_freqs.len(),
            cfg.cms_levels
        ));
    }
    if cfg.cms_freqs.iter().any(|f| *f == 0) {
        v.push("cms_freqs entries must be positive".into());
    }
    if !(cfg.cms_base_rate > 0.0 && cfg.cms_base_rate <= 1.0) {
        v.push(format!(
            "cms_base_rate must be in (0, 1], got {}",
            cfg.cms_base_rate
        ));
    }
    if cfg.decomp_kernel % 2 == 0 {
        v.push(format!("decomp_kernel {} must be odd", cfg.decomp_kernel));
    }
    if cfg.stem_kernel % 2 == 0 {
        v.push(format!("stem_kernel {} must be odd", cfg.stem_kernel));
    }
    if !(0.0..1.0).contains(&cfg.dropout_p) {
        v.push(format!(
            "dropout_p must satisfy 0 <= p < 1, got {}",
            cfg.dropout_p
        ));
    }
    if !(0.0..1.0).contains(&cfg.mask_ratio) {
        v.push(format!(
            "mask_ratio must satisfy 0 <= r < 1, got {}",
            cfg.mask_ratio
        ));
    }
    if cfg.lambda_kl < 0.0 || cfg.lambda_mtsm < 0.0 {
        v.push("loss weights must be non-negative".into());
    }
    if v.is_empty() {
        Ok(())
    } else {
        Err(v)
    }
}

fn validate_train(cfg: &TrainConfig) -> std::result::Result<(), Vec<String>> {
    let mut v = Vec::new();
    if !(cfg.lr > 0.0) {
        v.push(format!("lr must be positive, got {}", cfg.lr));
    }
    if cfg.batch_size == 0 {
        v.push("batch_size must be positive".into());
    }
    if cfg.pretrain_patience == 0 || cfg.cls_patience == 0 {
        v.push("patience must be at least 1".into());
    }
    if cfg.pretrain_min_delta < 0.0 || cfg.cls_min_delta < 0.0 {
        v.push("min_delta must be non-negative".into());
    }
    if v.is_empty() {
        Ok(())
    } else {
        Err(v)
    }
}

/// One model + train config pair, as read from a config file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Config {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl Config {
    /// Set a single `key=value` pair. Unknown keys are config errors.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn p<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value.trim().parse().map_err(|_| {
                Error::Config(format!("invalid value `{}` for key `{}`", value, key))
            })
        }
        let m = &mut self.model;
        let t = &mut self.train;
        match key {
            "seq_len" => m.seq_len = p(key, value)?,
            "embed_dim" => m.embed_dim = p(key, value)?,
            "latent_dim" => m.latent_dim = p(key, value)?,
            "n_encoder_blocks" => m.n_encoder_blocks = p(key, value)?,
            "n_seasonal_decoder_blocks" => m.n_seasonal_decoder_blocks = p(key, value)?,
            "titans_chunk" => m.titans_chunk = p(key, value)?,
            "titans_alpha" => m.titans_alpha = p(key, value)?,
            "titans_eta" => m.titans_eta = p(key, value)?,
            "titans_clamp" => m.titans_clamp = p(key, value)?,
            "cms_levels" => m.cms_levels = p(key, value)?,
            "cms_freqs" => {
                let parsed: std::result::Result<Vec<usize>, _> = value
                    .trim()
                    .trim_start_matches('[')
                    .trim_end_matches(']')
                    .split(',')
                    .map(|s| s.trim().parse::<usize>())
                    .collect();
                m.cms_freqs = parsed.map_err(|_| {
                    Error::Config(format!("invalid value `{}` for key `cms_freqs`", value))
                })?;
            }
            "cms_base_rate" => m.cms_base_rate = p(key, value)?,
            "decomp_kernel" => m.decomp_kernel = p(key, value)?,
            "dropout_p" => m.dropout_p = p(key, value)?,
            "mask_ratio" => m.mask_ratio = p(key, value)?,
            "lambda_kl" => m.lambda_kl = p(key, value)?,
            "lambda_mtsm" => m.lambda_mtsm = p(key, value)?,
            "stem_kernel" => m.stem_kernel = p(key, value)?,
            "max_len" => m.max_len = p(key, value)?,
            "lr" => t.lr = p(key, value)?,
            "batch_size" => t.batch_size = p(key, value)?,
            "max_epochs" => t.max_epochs = p(key, value)?,
            "pretrain_patience" => t.pretrain_patience = p(key, value)?,
            "pretrain_min_delta" => t.pretrain_min_delta = p(key, value)?,
            "cls_patience" => t.cls_patience = p(key, value)?,
            "cls_min_delta" => t.cls_min_delta = p(key, value)?,
            "seed" => t.seed = p(key, value)?,
            _ => return Err(Error::Config(format!("unknown config key `{}`", key))),
        }
        Ok(())
    }

    /// Parse the flat `key=value` text format. Blank lines and `#` comments
    /// are skipped.
    pub fn parse(text: &str) -> Result<Config> {
        let mut cfg = Config::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Parse {
                    line: i + 1,
                    msg: format!("expected key=value, got `{}`", line),
                });
            };
            cfg.set(key.trim(), value.trim())?;
        }
        Ok(cfg)
    }

    pub fn from_file(path: &std::path::Path) -> Result<Config> {
        Config::parse(&std::fs::read_to_string(path)?)
    }

    /// Validate both halves, joining all violations into one config error.
    pub fn validated(self) -> Result<Config> {
        let mut violations = Vec::new();
        if let Err(v) = validate(&self.model) {
            violations.extend(v);
        }
        if let Err(v) = validate_train(&self.train) {
            violations.extend(v);
        }
        if violations.is_empty() {
            Ok(self)
        } else {
            Err(Error::Config(violations.join("; ")))
        }
    }

    /// The flat text form, written verbatim into checkpoint headers.
    pub fn to_kv_text(&self) -> String {
        let m = &self.model;
        let t = &self.train;
        let freqs: Vec<String> = m.cms_freqs.iter().map(|f| f.to_string()).collect();
        format!(
            "seq_len={}\nembed_dim={}\nlatent_dim={}\nn_encoder_blocks={}\n\
             n_seasonal_decoder_blocks={}\ntitans_chunk={}\ntitans_alpha={}\n\
             titans_eta={}\ntitans_clamp={}\ncms_levels={}\ncms_freqs={}\n\
             cms_base_rate={}\ndecomp_kernel={}\ndropout_p={}\nmask_ratio={}\n\
             lambda_kl={}\nlambda_mtsm={}\nstem_kernel={}\nmax_len={}\n\
             lr={}\nbatch_size={}\nmax_epochs={}\npretrain_patience={}\n\
             pretrain_min_delta={}\ncls_patience={}\ncls_min_delta={}\nseed={}\n",
            m.seq_len,
            m.embed_dim,
            m.latent_dim,
            m.n_encoder_blocks,
            m.n_seasonal_decoder_blocks,
            m.titans_chunk,
            m.titans_alpha,
            m.titans_eta,
            m.titans_clamp,
            m.cms_levels,
            freqs.join(","),
            m.cms_base_rate,
            m.decomp_kernel,
            m.dropout_p,
            m.mask_ratio,
            m.lambda_kl,
            m.lambda_mtsm,
            m.stem_kernel,
            m.max_len,
            t.lr,
            t.batch_size,
            t.max_epochs,
            t.pretrain_patience,
            t.pretrain_min_delta,
            t.cls_patience,
            t.cls_min_delta,
            t.seed,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_cleanly() {
        assert!(validate(&ModelConfig::default()).is_ok());
        assert!(Config::default().validated().is_ok());
    }

    #[test]
    fn default_values_match_base_configuration() {
        let m = ModelConfig::default();
        assert_eq!(m.seq_len, 256);
        assert_eq!(m.embed_dim, 128);
        assert_eq!(m.n_encoder_blocks, 3);
        assert_eq!(m.titans_chunk, 32);
        assert_eq!(m.titans_alpha, 0.99);
        assert_eq!(m.titans_eta, 0.01);
        assert_eq!(m.titans_clamp, 5.0);
        assert_eq!(m.cms_levels, 4);
        assert_eq!(m.cms_freqs, vec![1, 4, 16, 64]);
        assert_eq!(m.cms_base_rate, 0.1);
        assert_eq!(m.decomp_kernel, 25);
        assert_eq!(m.dropout_p, 0.1);
        assert_eq!(m.mask_ratio, 0.2);
        assert_eq!(m.lambda_kl, 0.01);
        assert_eq!(m.lambda_mtsm, 0.5);
        assert_eq!(m.stem_kernel, 7);
        let t = TrainConfig::default();
        assert_eq!(t.lr, 1e-3);
        assert_eq!(t.batch_size, 256);
        assert_eq!(t.max_epochs, 300);
        assert_eq!(t.pretrain_patience, 5);
        assert_eq!(t.pretrain_min_delta, 0.5);
        assert_eq!(t.cls_patience, 10);
        assert_eq!(t.cls_min_delta, 1e-3);
    }

    #[test]
    fn freq_list_length_violation_reported() {
        let mut m = ModelConfig::default();
        m.cms_freqs = vec![1, 4];
        let errs = validate(&m).unwrap_err();
        assert!(errs.iter().any(|e| e.contains("freq list length")), "{:?}", errs);
    }

    #[test]
    fn mask_ratio_boundary_rejected() {
        let mut m = ModelConfig::default();
        m.mask_ratio = 1.0;
        assert!(validate(&m).is_err());
    }

    #[test]
    fn all_violations_reported_at_once() {
        let mut m = ModelConfig::default();
        m.mask_ratio = 1.0;
        m.cms_freqs = vec![1];
        m.titans_eta = 0.0;
        let errs = validate(&m).unwrap_err();
        assert!(errs.len() >= 3, "{:?}", errs);
    }

    #[test]
    fn kv_round_trip() {
        let mut cfg = Config::default();
        cfg.model.embed_dim = 32;
        cfg.model.cms_freqs = vec![1, 2, 4, 8];
        cfg.train.seed = 99;
        let text = cfg.to_kv_text();
        let parsed = Config::parse(&text).unwrap();
        assert_eq!(parsed, cfg);
    }

    #[test]
    fn unknown_key_is_config_error() {
        let err = Config::parse("embed_dimension=32\n").unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        assert!(err.to_string().contains("embed_dimension"));
    }

    #[test]
    fn bracketed_freq_list_accepted() {
        let cfg = Config::parse("cms_freqs=[1, 4, 16, 64]\n").unwrap();
        assert_eq!(cfg.model.cms_freqs, vec![1, 4, 16, 64]);
    }
}
